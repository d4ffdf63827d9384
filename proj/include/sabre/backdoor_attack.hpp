#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sabre/embedding_space.hpp"
#include "sabre/prompt_learner.hpp"
#include "sabre/trigger.hpp"

namespace sabre {

struct AttackConfig {
  int target_class = 0;
  double poison_rate = 0.5;
  int trigger_epochs = 3;
  /// Defaults to epsilon / 4 when unset.
  std::optional<double> step_size;
  /// L-infinity bound in pixel units ([0, 1] scale): 4/255.
  double epsilon = 4.0 / 255.0;
  /// Reject steps that lower the objective on the full sample set.
  bool greedy = false;
  int batch_size = 8;
  /// L2 norm of the embedding-space shift used with precomputed stores.
  double embed_epsilon = 1.0;
  bool reoptimize_each_round = true;

  double effective_step() const { return step_size.value_or(epsilon / 4.0); }
  void validate(int num_classes) const;
};

/// J(t) = mean_b cos(W clamp(x_b + t, 0, 1), g) for a unit target direction g.
double trigger_objective(const Vector& t, const std::vector<InputSample>& samples, const Vector& target_text,
                         const Matrix& weights);

/// dJ/dt. Pixels whose clamp is active contribute nothing.
Vector trigger_gradient(const Vector& t, const std::vector<InputSample>& samples, const Vector& target_text,
                        const Matrix& weights);

/// Uniform in [-epsilon/10, epsilon/10] per pixel.
Trigger init_trigger(Eigen::Index pixels, double epsilon, std::uint64_t seed);

/// Projected gradient ascent on J over seeded mini-batches. Each step moves
/// by step_size along grad / ||grad||_inf and clamps back into the box.
Trigger optimize_trigger(const Trigger& trigger, const std::vector<InputSample>& samples, int target,
                         const PromptState& prompt, const ClassVocabulary& vocab, const FrozenEncoder& encoder,
                         const AttackConfig& config, std::uint64_t seed);

/// Sorted seeded subset of size round(rate * n).
std::vector<std::size_t> select_poison_indices(std::size_t n, double rate, std::uint64_t seed);

template <class T>
struct Poisoned {
  std::vector<T> samples;
  std::vector<std::size_t> indices;
};

/// Dirty-label poisoning in place: selected samples get the trigger and the
/// target label, the rest are copied untouched.
Poisoned<InputSample> poison_dataset(const std::vector<InputSample>& samples, const Trigger& trigger,
                                     const AttackConfig& config, std::uint64_t seed);

/// Same for stored embeddings and an embedding-space trigger.
Poisoned<TrainingExample> poison_embeddings(const std::vector<TrainingExample>& samples, const Trigger& trigger,
                                            const AttackConfig& config, std::uint64_t seed);

/// delta = epsilon_embed * normalize(target_direction).
Trigger make_embedding_trigger(const EmbeddingStore& store, const Embedding& target_direction,
                               double epsilon_embed);

}  // namespace sabre
