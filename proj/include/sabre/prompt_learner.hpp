#pragma once

#include <cstdint>
#include <vector>

#include "sabre/types.hpp"

namespace sabre {

/// Learnable context V (N x e), shared between server and clients.
struct PromptState {
  Matrix context;

  /// Entries drawn from N(0, stddev^2) with Rng(seed), row by row.
  static PromptState init(int length, int width, double stddev, std::uint64_t seed);

  Eigen::Index length() const { return context.rows(); }
  Eigen::Index width() const { return context.cols(); }
  /// Row-major flattening, used for update vectors.
  Vector flatten() const;
  static PromptState unflatten(const Vector& flat, Eigen::Index length, Eigen::Index width);

  bool operator==(const PromptState& other) const;
};

/// Frozen text pathway: class-name embeddings c_i (K x e), projection U
/// (d x e) and softmax temperature.
class ClassVocabulary {
 public:
  ClassVocabulary(Matrix class_embeddings, Matrix projection, double temperature);

  int num_classes() const { return static_cast<int>(class_embeddings_.rows()); }
  Eigen::Index text_width() const { return class_embeddings_.cols(); }
  Eigen::Index embedding_dim() const { return projection_.rows(); }
  const Matrix& class_embeddings() const { return class_embeddings_; }
  const Matrix& projection() const { return projection_; }
  double temperature() const { return temperature_; }

 private:
  Matrix class_embeddings_;
  Matrix projection_;
  double temperature_;
};

inline constexpr double kDefaultTemperature = 0.01;

/// g_i = normalize(U (c_i + mean_j v_j)).
Vector class_text_embedding(const PromptState& prompt, const ClassVocabulary& vocab, int index);

/// All g_i stacked as rows (K x d).
Matrix text_embeddings(const PromptState& prompt, const ClassVocabulary& vocab);

/// Softmax over cos(z, g_i) / tau given precomputed text embeddings.
Vector probabilities_from_text(const Embedding& z, const Matrix& text, double temperature);
int label_from_text(const Embedding& z, const Matrix& text);

Vector predict_probabilities(const Embedding& z, const PromptState& prompt, const ClassVocabulary& vocab);

/// argmax of the cosine similarities, lowest index on ties.
int predict_label(const Embedding& z, const PromptState& prompt, const ClassVocabulary& vocab);

struct TrainingExample {
  Embedding z;
  int label = 0;
};

struct LossGradient {
  double loss = 0.0;
  Matrix grad;
};

/// Mean cross-entropy over the batch and its exact gradient with respect to V.
LossGradient loss_and_gradient(const std::vector<TrainingExample>& batch, const PromptState& prompt,
                               const ClassVocabulary& vocab);

struct TrainSchedule {
  int epochs = 10;
  int warmup_epochs = 1;
  double base_lr = 0.002;
  int batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
  /// Linear warmup, then cosine decay towards zero.
  double lr_at(int epoch) const;
};

/// Mini-batch SGD with the schedule's learning rate. Returns a fresh state.
PromptState local_train(const PromptState& prompt, const std::vector<TrainingExample>& dataset,
                        const TrainSchedule& schedule, const ClassVocabulary& vocab);

}  // namespace sabre
