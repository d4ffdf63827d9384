#include "sabre/prompt_learner.hpp"

#include <cmath>
#include <numbers>

#include "sabre/embedding_space.hpp"
#include "sabre/rng.hpp"

namespace sabre {

PromptState PromptState::init(int length, int width, double stddev, std::uint64_t seed) {
  if (length < 1 || width < 1) throw InvalidArgument("prompt shape must be positive");
  if (!(stddev >= 0.0)) throw InvalidArgument("prompt init scale must be non-negative");
  Rng rng(seed);
  PromptState s{Matrix(length, width)};
  for (int r = 0; r < length; ++r) {
    for (int c = 0; c < width; ++c) s.context(r, c) = stddev * rng.normal();
  }
  return s;
}

Vector PromptState::flatten() const {
  Vector flat(context.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < context.rows(); ++r) {
    for (Eigen::Index c = 0; c < context.cols(); ++c) flat(k++) = context(r, c);
  }
  return flat;
}

PromptState PromptState::unflatten(const Vector& flat, Eigen::Index length, Eigen::Index width) {
  if (flat.size() != length * width) throw DimensionError("flat prompt has the wrong length");
  PromptState s{Matrix(length, width)};
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < length; ++r) {
    for (Eigen::Index c = 0; c < width; ++c) s.context(r, c) = flat(k++);
  }
  return s;
}

bool PromptState::operator==(const PromptState& other) const {
  return context.rows() == other.context.rows() && context.cols() == other.context.cols() &&
         context == other.context;
}

ClassVocabulary::ClassVocabulary(Matrix class_embeddings, Matrix projection, double temperature)
    : class_embeddings_(std::move(class_embeddings)), projection_(std::move(projection)), temperature_(temperature) {
  if (class_embeddings_.rows() < 1) throw InvalidArgument("vocabulary needs at least one class");
  if (projection_.cols() != class_embeddings_.cols()) {
    throw DimensionError("projection width does not match class embeddings");
  }
  if (!(temperature_ > 0.0)) throw InvalidArgument("temperature must be positive");
  if (!class_embeddings_.allFinite() || !projection_.allFinite()) throw InvalidArgument("vocabulary is not finite");
}

namespace {

void check_prompt(const PromptState& prompt, const ClassVocabulary& vocab) {
  if (prompt.width() != vocab.text_width()) throw DimensionError("prompt width does not match vocabulary");
  if (prompt.length() < 1) throw InvalidArgument("prompt has no context vectors");
}

}  // namespace

Vector class_text_embedding(const PromptState& prompt, const ClassVocabulary& vocab, int index) {
  check_prompt(prompt, vocab);
  if (index < 0 || index >= vocab.num_classes()) throw InvalidArgument("class index out of range");
  const Vector vbar = prompt.context.colwise().mean().transpose();
  const Vector h = vocab.projection() * (vocab.class_embeddings().row(index).transpose() + vbar);
  return normalize(h);
}

Matrix text_embeddings(const PromptState& prompt, const ClassVocabulary& vocab) {
  Matrix g(vocab.num_classes(), vocab.embedding_dim());
  for (int i = 0; i < vocab.num_classes(); ++i) g.row(i) = class_text_embedding(prompt, vocab, i).transpose();
  return g;
}

Vector probabilities_from_text(const Embedding& z, const Matrix& text, double temperature) {
  if (z.size() != text.cols()) throw DimensionError("embedding length does not match text embeddings");
  if (!z.allFinite()) throw InvalidArgument("embedding is not finite");
  const Vector logits = text * normalize(z) / temperature;
  const Vector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

int label_from_text(const Embedding& z, const Matrix& text) {
  if (z.size() != text.cols()) throw DimensionError("embedding length does not match text embeddings");
  const Vector s = text * normalize(z);
  int best = 0;
  for (int i = 1; i < s.size(); ++i) {
    if (s(i) > s(best)) best = i;
  }
  return best;
}

Vector predict_probabilities(const Embedding& z, const PromptState& prompt, const ClassVocabulary& vocab) {
  if (vocab.num_classes() < 2) throw InvalidArgument("prediction needs at least two classes");
  return probabilities_from_text(z, text_embeddings(prompt, vocab), vocab.temperature());
}

int predict_label(const Embedding& z, const PromptState& prompt, const ClassVocabulary& vocab) {
  return label_from_text(z, text_embeddings(prompt, vocab));
}

LossGradient loss_and_gradient(const std::vector<TrainingExample>& batch, const PromptState& prompt,
                               const ClassVocabulary& vocab) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  check_prompt(prompt, vocab);
  const int k = vocab.num_classes();
  const double tau = vocab.temperature();
  const Vector vbar = prompt.context.colwise().mean().transpose();

  Matrix g(k, vocab.embedding_dim());
  Vector hnorm(k);
  for (int i = 0; i < k; ++i) {
    const Vector h = vocab.projection() * (vocab.class_embeddings().row(i).transpose() + vbar);
    hnorm(i) = h.norm();
    g.row(i) = normalize(h).transpose();
  }

  // r.row(i) accumulates sum_b (p_bi - y_bi) (zhat_b - s_bi g_i).
  Matrix r = Matrix::Zero(k, vocab.embedding_dim());
  double loss = 0.0;
  for (const auto& ex : batch) {
    if (ex.label < 0 || ex.label >= k) throw InvalidArgument("label out of range");
    if (ex.z.size() != g.cols()) throw DimensionError("embedding length does not match vocabulary");
    const Vector zhat = normalize(ex.z);
    const Vector s = g * zhat;
    const Vector logits = s / tau;
    const double mx = logits.maxCoeff();
    const Vector e = (logits.array() - mx).exp();
    const double sum = e.sum();
    loss += -(logits(ex.label) - mx - std::log(sum));
    for (int i = 0; i < k; ++i) {
      const double coef = e(i) / sum - (i == ex.label ? 1.0 : 0.0);
      r.row(i) += coef * (zhat - s(i) * g.row(i).transpose()).transpose();
    }
  }
  const double b = static_cast<double>(batch.size());
  Vector grad_vbar = Vector::Zero(vocab.text_width());
  for (int i = 0; i < k; ++i) {
    grad_vbar += vocab.projection().transpose() * r.row(i).transpose() / hnorm(i);
  }
  grad_vbar /= (b * tau);

  LossGradient out;
  out.loss = loss / b;
  out.grad = grad_vbar.transpose().replicate(prompt.length(), 1) / static_cast<double>(prompt.length());
  return out;
}

void TrainSchedule::validate() const {
  if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
  if (warmup_epochs < 0) throw InvalidArgument("warmup epochs must be non-negative");
  if (epochs > 0 && warmup_epochs >= epochs) throw InvalidArgument("warmup epochs must be fewer than epochs");
  if (!(base_lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
}

double TrainSchedule::lr_at(int epoch) const {
  if (epoch < warmup_epochs) return base_lr * (epoch + 1) / warmup_epochs;
  const double span = static_cast<double>(epochs - warmup_epochs);
  const double progress = static_cast<double>(epoch - warmup_epochs) / span;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

PromptState local_train(const PromptState& prompt, const std::vector<TrainingExample>& dataset,
                        const TrainSchedule& schedule, const ClassVocabulary& vocab) {
  if (dataset.empty()) throw InvalidArgument("empty dataset");
  schedule.validate();
  PromptState out = prompt;
  Rng rng(schedule.seed);
  std::vector<TrainingExample> batch;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    const auto order = rng.permutation(dataset.size());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch_size));
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset[order[i]]);
      out.context -= lr * loss_and_gradient(batch, out, vocab).grad;
    }
  }
  return out;
}

}  // namespace sabre
