#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "sabre/embedding_space.hpp"
#include "sabre/kernels.hpp"
#include "sabre/trigger.hpp"

namespace sabre {

struct LabeledEmbedding {
  Embedding embedding;
  int poisoned = 0;
};

/// Two-layer MLP d -> h -> 2 with ReLU.
struct DetectorModel {
  Matrix w1;  // h x d
  Vector b1;  // h
  Matrix w2;  // 2 x h
  Vector b2;  // 2

  Eigen::Index dim() const { return w1.cols(); }
  Eigen::Index hidden() const { return w1.rows(); }
  Vector logits(const Embedding& z) const;
  void validate() const;
  bool operator==(const DetectorModel& other) const;
};

struct DetectorHyper {
  int hidden = 128;
  double lr = 1e-3;
  int epochs = 20;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ClientScore {
  int client_id = 0;
  double score = 0.0;
};

struct FilterResult {
  std::vector<int> accepted;  // ascending
  std::vector<int> rejected;  // ascending
};

/// Clean embeddings labelled 0 plus triggered copies labelled 1, shuffled.
/// An input-space trigger needs the toy encoder and is pushed through it as
/// W t (exact while no pixel clamps); an embedding-space trigger needs no
/// encoder or a precomputed one.
std::vector<LabeledEmbedding> build_aux_dataset(const std::vector<Embedding>& clean, const Trigger& trigger,
                                                const FrozenEncoder* encoder, std::uint64_t seed);

/// Pixel-level variant: poisoned copies are encode(apply_trigger(x, t)).
std::vector<LabeledEmbedding> build_aux_dataset(const std::vector<InputSample>& clean, const Trigger& trigger,
                                                const FrozenEncoder& encoder, std::uint64_t seed);

/// Adam on softmax cross-entropy. Throws DegenerateInput when only one label
/// is present.
DetectorModel train_detector(const std::vector<LabeledEmbedding>& aux, const DetectorHyper& hyper);

/// Untrained weights: uniform in +-1/sqrt(fan_in).
DetectorModel init_detector(Eigen::Index dim, int hidden, std::uint64_t seed);

/// argmax of the two logits, 0 on ties.
int detect(const DetectorModel& model, const Embedding& z);
std::vector<int> detect_batch(const DetectorModel& model, const std::vector<Embedding>& zs, Execution exec);

/// Fraction of the client's embeddings flagged as poisoned.
ClientScore client_score(const DetectorModel& model, const std::vector<Embedding>& embeddings, int client_id);
std::vector<ClientScore> score_clients(const DetectorModel& model,
                                       const std::vector<std::vector<Embedding>>& per_client,
                                       const std::vector<int>& client_ids, Execution exec);

/// Rejects the m highest scores; equal scores reject the lower id first.
FilterResult filter_clients(const std::vector<ClientScore>& scores, int m);

/// Fraction of records whose detect() output equals the label.
double detector_accuracy(const DetectorModel& model, const std::vector<LabeledEmbedding>& data);

class ModelFormatError : public Error {
 public:
  ModelFormatError(std::uint64_t offset, const std::string& what);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline constexpr char kModelMagic[4] = {'S', 'B', 'D', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

// Layout (little-endian): "SBDM" | version u32 | d u32 | h u32 | W1 (h x d,
// row-major) | b1 (h) | W2 (2 x h, row-major) | b2 (2), all f32. Weights are
// rounded to f32 on save.
void save_detector(const DetectorModel& model, std::ostream& out);
void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(std::istream& in);
DetectorModel load_detector(const std::filesystem::path& path);

}  // namespace sabre
