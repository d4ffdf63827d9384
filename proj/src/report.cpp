#include "sabre/report.hpp"

#include <sstream>

#include "sabre/binary_io.hpp"

namespace sabre {

using nlohmann::json;

json report_to_json(const ExperimentConfig& config, const ExperimentResult& result) {
  json rounds = json::array();
  for (const auto& r : result.rounds) {
    rounds.push_back({{"round", r.round},
                      {"scores", r.scores},
                      {"rejected", r.rejected},
                      {"prompt_norm", r.prompt_norm},
                      {"clean_acc", r.clean_acc},
                      {"backdoor_acc", r.backdoor_acc}});
  }
  json summary = {{"final_clean_acc", result.summary.final_clean_acc},
                  {"final_backdoor_acc", result.summary.final_backdoor_acc},
                  {"malicious_clients", result.summary.malicious}};
  summary["detector_aux_accuracy"] =
      result.summary.detector_aux_accuracy ? json(*result.summary.detector_aux_accuracy) : json(nullptr);
  return {{"config", config_to_json(config)}, {"rounds", rounds}, {"summary", summary}};
}

std::string render_report(const ExperimentConfig& config, const ExperimentResult& result) {
  return report_to_json(config, result).dump(2) + "\n";
}

std::filesystem::path sidecar_path(const std::filesystem::path& store_path) {
  std::filesystem::path p = store_path;
  p += ".labels.csv";
  return p;
}

void write_embedding_export(const std::filesystem::path& store_path, const std::vector<SubmittedEmbeddings>& batches,
                            int num_classes) {
  std::vector<Embedding> zs;
  std::vector<int> labels;
  std::ostringstream csv;
  csv << "index,round,client,label,poisoned\n";
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.embeddings.size(); ++i) {
      csv << zs.size() << ',' << b.round << ',' << b.client << ',' << b.labels[i] << ',' << b.poisoned[i] << '\n';
      zs.push_back(b.embeddings[i]);
      labels.push_back(b.labels[i]);
    }
  }
  if (zs.empty()) throw InvalidArgument("no embeddings to export (rounds = 0?)");
  const EmbeddingStore store = EmbeddingStore::from_embeddings(static_cast<std::uint32_t>(num_classes), zs, labels);
  write_text_atomically(sidecar_path(store_path), csv.str());
  write_store(store, store_path);
}

}  // namespace sabre
