#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <variant>
#include <vector>

#include "sabre/trigger.hpp"
#include "sabre/types.hpp"

namespace sabre {

/// Image in the toy input space: pixels in [0, 1] plus a class label.
struct InputSample {
  Vector pixels;
  int label = 0;
};

/// Returns v / ||v||_2. Throws DegenerateInput ("degenerate embedding") when
/// the norm is below 1e-12.
Vector normalize(const Vector& v);

/// x (+) t: pixels' = clamp(pixels + t, 0, 1). The label is left alone.
InputSample apply_trigger(const InputSample& sample, const Trigger& trigger);

/// z + delta for an embedding-space trigger.
Embedding shift_embedding(const Embedding& z, const Trigger& trigger);

// ---------------------------------------------------------------------------
// Embedding store ("SBEF" files)
// ---------------------------------------------------------------------------

struct StoreRecord {
  std::uint32_t label = 0;
  std::vector<float> values;

  bool operator==(const StoreRecord&) const = default;
};

/// Labelled embeddings with a fixed dimension. Values are kept as f32 so a
/// write/read cycle reproduces them bit for bit.
class EmbeddingStore {
 public:
  /// Throws InvalidArgument if the store would be empty, a record has the
  /// wrong length or a label is out of range.
  EmbeddingStore(std::uint32_t dim, std::uint32_t num_classes, std::vector<StoreRecord> records);

  /// Convenience constructor from double-precision embeddings.
  static EmbeddingStore from_embeddings(std::uint32_t num_classes, const std::vector<Embedding>& embeddings,
                                        const std::vector<int>& labels);

  std::uint32_t dim() const { return dim_; }
  std::uint32_t num_classes() const { return num_classes_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<StoreRecord>& records() const { return records_; }
  Embedding embedding(std::size_t index) const;
  int label(std::size_t index) const { return static_cast<int>(records_.at(index).label); }

  bool operator==(const EmbeddingStore&) const = default;

 private:
  std::uint32_t dim_;
  std::uint32_t num_classes_;
  std::vector<StoreRecord> records_;
};

enum class StoreErrorKind {
  BadMagic,
  VersionMismatch,
  InvalidHeader,
  Truncated,
  LabelOutOfRange,
  NonFiniteValue,
  TrailingBytes,
};

class StoreFormatError : public Error {
 public:
  StoreFormatError(StoreErrorKind kind, std::uint64_t offset, const std::string& what);
  StoreErrorKind kind() const { return kind_; }
  std::uint64_t offset() const { return offset_; }

 private:
  StoreErrorKind kind_;
  std::uint64_t offset_;
};

inline constexpr char kStoreMagic[4] = {'S', 'B', 'E', 'F'};
inline constexpr std::uint32_t kStoreVersion = 1;

// Layout (little-endian): "SBEF" | version u32 | dim u32 | num_classes u32 |
// count u32 | count x ( label u32 | dim x f32 ).
void write_store(const EmbeddingStore& store, std::ostream& out);
void write_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore read_store(std::istream& in);
EmbeddingStore read_store(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Frozen encoder
// ---------------------------------------------------------------------------

/// Parameters for a seeded toy linear encoder W (d x p).
struct ToyEncoderSpec {
  int pixels = 16;
  int dim = 16;
  std::uint64_t seed = 0;
  /// false: raw N(0, 1/p) entries. true: the Gaussian draw is orthonormalised
  /// and composed with pixel-mean removal, so W * 1 = 0 and W is an isometry on
  /// mean-free inputs.
  bool orthogonal = true;
};

/// Raw Gaussian weights, entries N(0, 1/p), drawn row by row from Rng(seed).
Matrix gaussian_encoder_weights(int pixels, int dim, std::uint64_t seed);
Matrix toy_encoder_weights(const ToyEncoderSpec& spec);

/// The frozen image encoder f_img. Immutable after construction and safe to
/// share between threads.
class FrozenEncoder {
 public:
  static FrozenEncoder toy_linear(Matrix weights);
  static FrozenEncoder toy(const ToyEncoderSpec& spec);
  /// Serves stored embeddings by index; raw pixels cannot be encoded.
  static FrozenEncoder precomputed(std::shared_ptr<const EmbeddingStore> store);

  bool is_toy() const { return std::holds_alternative<Matrix>(impl_); }
  Eigen::Index embedding_dim() const;
  /// Throws UnsupportedOperation for the precomputed variant.
  Eigen::Index input_dim() const;
  const Matrix& weights() const;
  const EmbeddingStore& store() const;

  /// W * pixels. Throws DimensionError on a length mismatch and
  /// UnsupportedOperation for the precomputed variant.
  Embedding encode(const InputSample& sample) const;
  Embedding stored(std::size_t index) const;

 private:
  using Impl = std::variant<Matrix, std::shared_ptr<const EmbeddingStore>>;
  explicit FrozenEncoder(Impl impl) : impl_(std::move(impl)) {}
  Impl impl_;
};

}  // namespace sabre
