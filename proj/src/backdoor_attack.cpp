#include "sabre/backdoor_attack.hpp"

#include <algorithm>
#include <cmath>

#include "sabre/rng.hpp"

namespace sabre {

void AttackConfig::validate(int num_classes) const {
  if (target_class < 0 || target_class >= num_classes) throw InvalidArgument("target class out of range");
  if (!(poison_rate >= 0.0 && poison_rate <= 1.0)) throw InvalidArgument("poison rate must lie in [0, 1]");
  if (trigger_epochs < 0) throw InvalidArgument("trigger epochs must be non-negative");
  if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be non-negative");
  if (step_size && !(*step_size > 0.0)) throw InvalidArgument("step size must be positive");
  if (batch_size < 1) throw InvalidArgument("attack batch size must be positive");
  if (!(embed_epsilon >= 0.0)) throw InvalidArgument("embedding epsilon must be non-negative");
}

namespace {

void check_objective_inputs(const Vector& t, const std::vector<InputSample>& samples, const Vector& g,
                            const Matrix& w) {
  if (samples.empty()) throw InvalidArgument("no samples for the trigger objective");
  if (t.size() != w.cols()) throw DimensionError("trigger length does not match encoder input");
  if (g.size() != w.rows()) throw DimensionError("target direction does not match embedding dimension");
}

template <class Indices>
double objective_over(const Vector& t, const std::vector<InputSample>& samples, const Indices& idx,
                      const Vector& g, const Matrix& w) {
  double sum = 0.0;
  for (std::size_t i : idx) {
    const Vector x = (samples[i].pixels + t).cwiseMax(0.0).cwiseMin(1.0);
    sum += normalize(w * x).dot(g);
  }
  return sum / static_cast<double>(idx.size());
}

template <class Indices>
Vector gradient_over(const Vector& t, const std::vector<InputSample>& samples, const Indices& idx,
                     const Vector& g, const Matrix& w) {
  Vector grad = Vector::Zero(t.size());
  for (std::size_t i : idx) {
    const Vector raw = samples[i].pixels + t;
    const Vector x = raw.cwiseMax(0.0).cwiseMin(1.0);
    const Vector z = w * x;
    const double zn = z.norm();
    if (!(zn > 1e-12)) throw DegenerateInput("degenerate embedding");
    const Vector zhat = z / zn;
    Vector dz = w.transpose() * ((g - zhat.dot(g) * zhat) / zn);
    for (Eigen::Index j = 0; j < raw.size(); ++j) {
      if (raw(j) < 0.0 || raw(j) > 1.0) dz(j) = 0.0;
    }
    grad += dz;
  }
  return grad / static_cast<double>(idx.size());
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

double trigger_objective(const Vector& t, const std::vector<InputSample>& samples, const Vector& target_text,
                         const Matrix& weights) {
  check_objective_inputs(t, samples, target_text, weights);
  return objective_over(t, samples, all_indices(samples.size()), target_text, weights);
}

Vector trigger_gradient(const Vector& t, const std::vector<InputSample>& samples, const Vector& target_text,
                        const Matrix& weights) {
  check_objective_inputs(t, samples, target_text, weights);
  return gradient_over(t, samples, all_indices(samples.size()), target_text, weights);
}

Trigger init_trigger(Eigen::Index pixels, double epsilon, std::uint64_t seed) {
  Rng rng(seed);
  Vector t(pixels);
  for (Eigen::Index j = 0; j < pixels; ++j) t(j) = rng.uniform(-epsilon / 10.0, epsilon / 10.0);
  return Trigger::input_space(std::move(t), epsilon);
}

Trigger optimize_trigger(const Trigger& trigger, const std::vector<InputSample>& samples, int target,
                         const PromptState& prompt, const ClassVocabulary& vocab, const FrozenEncoder& encoder,
                         const AttackConfig& config, std::uint64_t seed) {
  if (target < 0 || target >= vocab.num_classes()) throw InvalidArgument("target class out of range");
  if (!trigger.is_input_space()) throw UnsupportedOperation("unsupported: embedding-space trigger cannot be optimised");
  if (!encoder.is_toy()) throw UnsupportedOperation("unsupported: trigger optimisation needs the toy encoder");
  if (samples.empty()) throw InvalidArgument("no samples for trigger optimisation");
  const Matrix& w = encoder.weights();
  const Vector g = class_text_embedding(prompt, vocab, target);
  check_objective_inputs(trigger.values(), samples, g, w);

  const double eps = trigger.epsilon();
  const double step = config.step_size.value_or(eps / 4.0);
  const std::size_t batch = static_cast<std::size_t>(std::max(config.batch_size, 1));
  const auto everything = all_indices(samples.size());

  Vector t = trigger.values();
  double current = config.greedy ? objective_over(t, samples, everything, g, w) : 0.0;
  Rng rng(seed);
  std::vector<std::size_t> idx;
  for (int epoch = 0; epoch < config.trigger_epochs; ++epoch) {
    const auto order = rng.permutation(samples.size());
    for (std::size_t start = 0; start < order.size(); start += batch) {
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
      const Vector grad = gradient_over(t, samples, idx, g, w);
      const double scale = grad.cwiseAbs().maxCoeff();
      if (!(scale > 0.0)) continue;
      Vector candidate = project_to_box(t + step * grad / scale, eps);
      if (config.greedy) {
        const double value = objective_over(candidate, samples, everything, g, w);
        if (value < current) continue;
        current = value;
      }
      t = std::move(candidate);
    }
  }
  return trigger.with_values(t);
}

std::vector<std::size_t> select_poison_indices(std::size_t n, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InvalidArgument("poison rate must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  Rng rng(seed);
  auto order = rng.permutation(n);
  order.resize(std::min(count, n));
  std::sort(order.begin(), order.end());
  return order;
}

Poisoned<InputSample> poison_dataset(const std::vector<InputSample>& samples, const Trigger& trigger,
                                     const AttackConfig& config, std::uint64_t seed) {
  if (samples.empty()) throw InvalidArgument("empty sample list");
  if (!trigger.is_input_space()) throw UnsupportedOperation("unsupported: pixel poisoning needs an input-space trigger");
  Poisoned<InputSample> out{samples, select_poison_indices(samples.size(), config.poison_rate, seed)};
  for (std::size_t i : out.indices) {
    out.samples[i] = apply_trigger(samples[i], trigger);
    out.samples[i].label = config.target_class;
  }
  return out;
}

Poisoned<TrainingExample> poison_embeddings(const std::vector<TrainingExample>& samples, const Trigger& trigger,
                                            const AttackConfig& config, std::uint64_t seed) {
  if (samples.empty()) throw InvalidArgument("empty sample list");
  if (trigger.is_input_space()) throw UnsupportedOperation("unsupported: embedding poisoning needs a shift trigger");
  Poisoned<TrainingExample> out{samples, select_poison_indices(samples.size(), config.poison_rate, seed)};
  for (std::size_t i : out.indices) {
    out.samples[i].z = shift_embedding(samples[i].z, trigger);
    out.samples[i].label = config.target_class;
  }
  return out;
}

Trigger make_embedding_trigger(const EmbeddingStore& store, const Embedding& target_direction,
                               double epsilon_embed) {
  if (target_direction.size() != static_cast<Eigen::Index>(store.dim())) {
    throw DimensionError("target direction does not match store dimension");
  }
  if (!(epsilon_embed >= 0.0)) throw InvalidArgument("embedding epsilon must be non-negative");
  if (!(target_direction.norm() > 0.0)) throw InvalidArgument("zero target direction");
  return Trigger::embedding_space(epsilon_embed * normalize(target_direction));
}

}  // namespace sabre
