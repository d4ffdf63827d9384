#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "sabre/aggregation.hpp"
#include "sabre/backdoor_attack.hpp"
#include "sabre/detector.hpp"
#include "sabre/prompt_learner.hpp"

namespace sabre {

struct PartitionConfig {
  enum class Kind { Iid, Dirichlet };
  Kind kind = Kind::Iid;
  double alpha = 0.5;
};

struct DefenseConfig {
  enum class Kind { None, SabreFl };
  Kind kind = Kind::None;
  /// Clients rejected per round; ceil(0.25 n) when unset.
  std::optional<int> m;
  /// Toy mode: size and class count of the synthetic auxiliary domain.
  int aux_samples = 1600;
  int aux_classes = 400;
  /// Optional SBEF store used as the auxiliary domain instead.
  std::optional<std::string> aux_store;
  /// Cap on embeddings each client submits; all when unset.
  std::optional<int> max_embeddings_per_client;
  int hidden = 128;
  double lr = 1e-3;
  int epochs = 20;
  int batch_size = 64;
};

struct EncoderConfig {
  enum class Mode { Toy, Precomputed };
  Mode mode = Mode::Toy;
  int pixels = 16;
  int dim = 16;
  bool orthogonal = true;
  std::optional<std::string> path;
  std::optional<std::string> test_path;
  double test_fraction = 0.5;
};

struct ToyTaskConfig {
  int num_classes = 4;
  double radius = 0.8;
  double sigma = 0.04;
  int content_rank = 8;
  double off_subspace_noise = 0.5;
  int train_samples = 200;
  int test_samples = 200;
};

struct PromptConfig {
  int length = 4;
  double init_std = 0.02;
  double temperature = kDefaultTemperature;
};

struct ScheduleConfig {
  int epochs = 10;
  int warmup_epochs = 1;
  double base_lr = 0.002;
  int batch_size = 8;
};

struct ExperimentConfig {
  int num_clients = 8;
  double malicious_fraction = 0.25;
  int rounds = 10;
  int shots = 8;
  PartitionConfig partition;
  AggregatorSpec aggregator = MeanAggregator{};
  DefenseConfig defense;
  AttackConfig attack;
  ScheduleConfig schedule;
  PromptConfig prompt;
  EncoderConfig encoder;
  ToyTaskConfig toy_task;
  std::uint64_t seed = 0;

  int num_malicious() const;
  int resolved_m() const;
  /// Structural checks that do not need data (class-dependent checks run
  /// when the environment is built).
  void validate() const;
};

/// Malformed JSON text, with a 1-based line and column.
class ConfigSyntaxError : public Error {
 public:
  ConfigSyntaxError(int line, int column, const std::string& what);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

/// Unknown keys and ill-typed values raise InvalidArgument naming the key.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Every field, including defaults (unset optionals as null).
nlohmann::json config_to_json(const ExperimentConfig& config);

}  // namespace sabre
