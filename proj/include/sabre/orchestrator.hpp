#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "sabre/config.hpp"
#include "sabre/rng.hpp"

namespace sabre {

/// One data point. In toy mode both pixels and the clean embedding are set;
/// precomputed stores leave pixels empty.
struct Sample {
  Vector pixels;
  Embedding embedding;
  int label = 0;
};

/// Seeded shuffle split into contiguous chunks; the first size % n clients
/// get one extra sample.
template <class T>
std::vector<std::vector<T>> partition_iid(const std::vector<T>& dataset, int num_clients, std::uint64_t seed) {
  if (num_clients < 1) throw InvalidArgument("num_clients must be positive");
  if (dataset.size() < static_cast<std::size_t>(num_clients)) throw InvalidArgument("dataset too small to partition");
  Rng rng(seed);
  const auto order = rng.permutation(dataset.size());
  const std::size_t n = static_cast<std::size_t>(num_clients);
  const std::size_t base = dataset.size() / n;
  const std::size_t extra = dataset.size() % n;
  std::vector<std::vector<T>> out(n);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t size = base + (k < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) out[k].push_back(dataset[order[pos++]]);
  }
  return out;
}

/// Per class, Dirichlet(alpha) client proportions and a multinomial draw of
/// the class's samples. Empty clients take one sample from the largest client.
template <class T>
std::vector<std::vector<T>> partition_dirichlet(const std::vector<T>& dataset, int num_clients, double alpha,
                                                std::uint64_t seed) {
  if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (num_clients < 1) throw InvalidArgument("num_clients must be positive");
  if (dataset.size() < static_cast<std::size_t>(num_clients)) throw InvalidArgument("dataset too small to partition");
  Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(num_clients);
  int max_label = 0;
  for (const auto& s : dataset) max_label = std::max(max_label, s.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset[i].label)].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(n);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    rng.shuffle(members);
    const auto props = rng.dirichlet(n, alpha);
    std::vector<double> cumulative(n);
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) cumulative[k] = (acc += props[k]);
    for (std::size_t idx : members) {
      const double u = rng.uniform() * acc;
      std::size_t k = 0;
      while (k + 1 < n && u >= cumulative[k]) ++k;
      assigned[k].push_back(idx);
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!assigned[k].empty()) continue;
    std::size_t largest = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (assigned[j].size() > assigned[largest].size()) largest = j;
    }
    assigned[k].push_back(assigned[largest].back());
    assigned[largest].pop_back();
  }
  std::vector<std::vector<T>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::sort(assigned[k].begin(), assigned[k].end());
    for (std::size_t idx : assigned[k]) out[k].push_back(dataset[idx]);
  }
  return out;
}

/// Keeps min(shots, available) seeded samples per class, in original order.
template <class T>
std::vector<T> sample_few_shot(const std::vector<T>& dataset, int shots, std::uint64_t seed) {
  if (shots < 1) throw InvalidArgument("shots must be at least 1");
  if (dataset.empty()) throw InvalidArgument("empty client dataset");
  Rng rng(seed);
  int max_label = 0;
  for (const auto& s : dataset) max_label = std::max(max_label, s.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset[i].label)].push_back(i);
  std::vector<bool> keep(dataset.size(), false);
  for (auto& members : by_class) {
    rng.shuffle(members);
    for (std::size_t i = 0; i < members.size() && i < static_cast<std::size_t>(shots); ++i) keep[members[i]] = true;
  }
  std::vector<T> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (keep[i]) out.push_back(dataset[i]);
  }
  return out;
}

struct Accuracy {
  double clean = 0.0;     // percent
  double backdoor = 0.0;  // percent
};

/// CA over clean_test; BA over triggered copies of samples whose label is
/// not the target. Throws "BA undefined" if every label is the target.
Accuracy evaluate(const PromptState& prompt, const ClassVocabulary& vocab, const FrozenEncoder& encoder,
                  const std::vector<Sample>& clean_test, const Trigger& trigger, int target);

/// Everything fixed for the lifetime of an experiment.
struct Environment {
  ExperimentConfig config;
  std::shared_ptr<const FrozenEncoder> encoder;
  std::shared_ptr<const ClassVocabulary> vocab;
  std::vector<std::vector<Sample>> clients;
  std::vector<Sample> test;
  std::vector<int> malicious;  // ascending client ids
  std::optional<DetectorModel> detector;
  /// Accuracy of the detector on its own auxiliary training data.
  std::optional<double> detector_aux_accuracy;
  int m = 0;

  bool toy() const { return encoder->is_toy(); }
  bool is_malicious(int client) const;
};

struct FlState {
  int round = 0;
  PromptState prompt;
  /// Indexed by client id; set for malicious clients.
  std::vector<std::optional<Trigger>> triggers;
  /// Probe trigger used to measure BA when no client is malicious. It is
  /// optimised like a malicious trigger but never poisons training data.
  std::optional<Trigger> shadow;
};

struct RoundReport {
  int round = 0;
  /// Detector scores indexed by client id (empty without the defense).
  std::vector<double> scores;
  std::vector<int> rejected;
  double prompt_norm = 0.0;
  double clean_acc = 0.0;
  double backdoor_acc = 0.0;
};

struct Summary {
  double final_clean_acc = 0.0;
  double final_backdoor_acc = 0.0;
  std::vector<int> malicious;
  std::optional<double> detector_aux_accuracy;
};

/// Embeddings submitted by one client in one round.
struct SubmittedEmbeddings {
  int round = 0;
  int client = 0;
  std::vector<Embedding> embeddings;
  std::vector<int> labels;
  std::vector<int> poisoned;
};

struct RoundOptions {
  Execution exec = Execution::Parallel;
  /// When set, receives every client's submitted embeddings.
  std::vector<SubmittedEmbeddings>* sink = nullptr;
  /// When set, receives every client's prompt delta before filtering.
  std::vector<FlatUpdate>* update_sink = nullptr;
};

Environment build_environment(const ExperimentConfig& config);
FlState initial_state(const Environment& env);

/// Trigger used to measure BA in the current state.
const Trigger& evaluation_trigger(const Environment& env, const FlState& state);

RoundReport run_round(const Environment& env, FlState& state, const RoundOptions& options = {});

struct ExperimentResult {
  std::vector<RoundReport> rounds;
  Summary summary;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const RoundOptions& options = {});

}  // namespace sabre
