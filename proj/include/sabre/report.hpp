#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sabre/orchestrator.hpp"

namespace sabre {

/// {"config", "rounds": [{"round", "scores", "rejected", "prompt_norm",
/// "clean_acc", "backdoor_acc"}], "summary": {...}}
nlohmann::json report_to_json(const ExperimentConfig& config, const ExperimentResult& result);
std::string render_report(const ExperimentConfig& config, const ExperimentResult& result);

/// Writes every submitted embedding as one SBEF store (label = the training
/// label the client used) and a CSV sidecar next to it with one row per
/// record: index,round,client,label,poisoned.
void write_embedding_export(const std::filesystem::path& store_path, const std::vector<SubmittedEmbeddings>& batches,
                            int num_classes);

std::filesystem::path sidecar_path(const std::filesystem::path& store_path);

}  // namespace sabre
