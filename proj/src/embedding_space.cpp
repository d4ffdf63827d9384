#include "sabre/embedding_space.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "sabre/binary_io.hpp"
#include "sabre/rng.hpp"

namespace sabre {

Vector normalize(const Vector& v) {
  const double n = v.norm();
  if (!(n > 1e-12)) throw DegenerateInput("degenerate embedding");
  return v / n;
}

InputSample apply_trigger(const InputSample& sample, const Trigger& trigger) {
  if (!trigger.is_input_space()) throw UnsupportedOperation("embedding-space trigger cannot be applied to pixels");
  if (trigger.size() != sample.pixels.size()) throw DimensionError("trigger length does not match sample");
  InputSample out{(sample.pixels + trigger.values()).cwiseMax(0.0).cwiseMin(1.0), sample.label};
  return out;
}

Embedding shift_embedding(const Embedding& z, const Trigger& trigger) {
  if (trigger.is_input_space()) throw UnsupportedOperation("input-space trigger cannot shift an embedding");
  if (trigger.size() != z.size()) throw DimensionError("trigger length does not match embedding");
  return z + trigger.values();
}

EmbeddingStore::EmbeddingStore(std::uint32_t dim, std::uint32_t num_classes, std::vector<StoreRecord> records)
    : dim_(dim), num_classes_(num_classes), records_(std::move(records)) {
  if (dim_ == 0) throw InvalidArgument("store dimension must be positive");
  if (num_classes_ == 0) throw InvalidArgument("store class count must be positive");
  if (records_.empty()) throw InvalidArgument("store must contain at least one record");
  for (const auto& r : records_) {
    if (r.values.size() != dim_) throw InvalidArgument("store record has the wrong length");
    if (r.label >= num_classes_) throw InvalidArgument("store record label out of range");
    for (float v : r.values) {
      if (!std::isfinite(v)) throw InvalidArgument("store record has non-finite values");
    }
  }
}

EmbeddingStore EmbeddingStore::from_embeddings(std::uint32_t num_classes, const std::vector<Embedding>& embeddings,
                                               const std::vector<int>& labels) {
  if (embeddings.size() != labels.size()) throw InvalidArgument("embedding and label counts differ");
  if (embeddings.empty()) throw InvalidArgument("store must contain at least one record");
  const auto dim = static_cast<std::uint32_t>(embeddings.front().size());
  std::vector<StoreRecord> records;
  records.reserve(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (labels[i] < 0) throw InvalidArgument("store record label out of range");
    StoreRecord r;
    r.label = static_cast<std::uint32_t>(labels[i]);
    r.values.resize(static_cast<std::size_t>(embeddings[i].size()));
    for (Eigen::Index j = 0; j < embeddings[i].size(); ++j) r.values[j] = static_cast<float>(embeddings[i](j));
    records.push_back(std::move(r));
  }
  return EmbeddingStore(dim, num_classes, std::move(records));
}

Embedding EmbeddingStore::embedding(std::size_t index) const {
  const auto& r = records_.at(index);
  Embedding z(dim_);
  for (std::uint32_t j = 0; j < dim_; ++j) z(j) = static_cast<double>(r.values[j]);
  return z;
}

StoreFormatError::StoreFormatError(StoreErrorKind kind, std::uint64_t offset, const std::string& what)
    : Error(what + " at byte offset " + std::to_string(offset)), kind_(kind), offset_(offset) {}

void write_store(const EmbeddingStore& store, std::ostream& out) {
  LeWriter w(out);
  w.bytes(std::string_view(kStoreMagic, 4));
  w.u32(kStoreVersion);
  w.u32(store.dim());
  w.u32(store.num_classes());
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& r : store.records()) {
    w.u32(r.label);
    for (float v : r.values) w.f32(v);
  }
}

void write_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  write_file_atomically(path, [&](std::ostream& out) { write_store(store, out); });
}

namespace {

std::uint32_t read_header_u32(LeReader& r, const char* field) {
  const std::uint64_t at = r.offset();
  std::uint32_t v = 0;
  if (!r.u32(v)) throw StoreFormatError(StoreErrorKind::Truncated, at, std::string("truncated header field ") + field);
  return v;
}

}  // namespace

EmbeddingStore read_store(std::istream& in) {
  LeReader r(in);
  char magic[4] = {};
  if (!r.bytes(magic, 4)) {
    if (r.offset() == 0 || std::memcmp(magic, kStoreMagic, r.offset()) != 0) {
      throw StoreFormatError(StoreErrorKind::BadMagic, 0, "bad magic");
    }
    throw StoreFormatError(StoreErrorKind::Truncated, 0, "truncated magic");
  }
  if (std::memcmp(magic, kStoreMagic, 4) != 0) throw StoreFormatError(StoreErrorKind::BadMagic, 0, "bad magic");

  const std::uint32_t version = read_header_u32(r, "version");
  if (version != kStoreVersion) {
    throw StoreFormatError(StoreErrorKind::VersionMismatch, 4, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t dim = read_header_u32(r, "dim");
  if (dim == 0) throw StoreFormatError(StoreErrorKind::InvalidHeader, 8, "zero dimension");
  const std::uint32_t num_classes = read_header_u32(r, "num_classes");
  if (num_classes == 0) throw StoreFormatError(StoreErrorKind::InvalidHeader, 12, "zero class count");
  const std::uint32_t count = read_header_u32(r, "count");
  if (count == 0) throw StoreFormatError(StoreErrorKind::InvalidHeader, 16, "empty record list");

  std::vector<StoreRecord> records;
  records.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    StoreRecord rec;
    const std::uint64_t label_at = r.offset();
    if (!r.u32(rec.label)) {
      throw StoreFormatError(StoreErrorKind::Truncated, label_at, "truncated record " + std::to_string(i));
    }
    if (rec.label >= num_classes) {
      throw StoreFormatError(StoreErrorKind::LabelOutOfRange, label_at,
                             "label " + std::to_string(rec.label) + " >= num_classes");
    }
    rec.values.resize(dim);
    for (std::uint32_t j = 0; j < dim; ++j) {
      const std::uint64_t at = r.offset();
      if (!r.f32(rec.values[j])) {
        throw StoreFormatError(StoreErrorKind::Truncated, at, "truncated record " + std::to_string(i));
      }
      if (!std::isfinite(rec.values[j])) {
        throw StoreFormatError(StoreErrorKind::NonFiniteValue, at, "non-finite value");
      }
    }
    records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw StoreFormatError(StoreErrorKind::TrailingBytes, r.offset(), "trailing bytes");
  return EmbeddingStore(dim, num_classes, std::move(records));
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_store(in);
}

Matrix gaussian_encoder_weights(int pixels, int dim, std::uint64_t seed) {
  if (pixels <= 0 || dim <= 0) throw InvalidArgument("encoder dimensions must be positive");
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(pixels));
  Matrix w(dim, pixels);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < pixels; ++c) w(r, c) = scale * rng.normal();
  }
  return w;
}

Matrix toy_encoder_weights(const ToyEncoderSpec& spec) {
  Matrix g = gaussian_encoder_weights(spec.pixels, spec.dim, spec.seed);
  if (!spec.orthogonal) return g;

  const int p = spec.pixels;
  const int d = spec.dim;
  Matrix q;
  if (d >= p) {
    Eigen::HouseholderQR<Matrix> qr(g);
    q = qr.householderQ() * Matrix::Identity(d, p);
    // Fix column signs so the result does not depend on the QR convention.
    Matrix rdiag = qr.matrixQR().diagonal().head(p);
    for (int c = 0; c < p; ++c) {
      if (rdiag(c, 0) < 0) q.col(c) *= -1.0;
    }
  } else {
    Matrix gt = g.transpose();
    Eigen::HouseholderQR<Matrix> qr(gt);
    Matrix qt = qr.householderQ() * Matrix::Identity(p, d);
    Matrix rdiag = qr.matrixQR().diagonal().head(d);
    for (int c = 0; c < d; ++c) {
      if (rdiag(c, 0) < 0) qt.col(c) *= -1.0;
    }
    q = qt.transpose();
  }
  const Matrix centering = Matrix::Identity(p, p) - Matrix::Constant(p, p, 1.0 / p);
  return q * centering;
}

FrozenEncoder FrozenEncoder::toy_linear(Matrix weights) {
  if (weights.size() == 0) throw InvalidArgument("encoder weights are empty");
  if (!weights.allFinite()) throw InvalidArgument("encoder weights are not finite");
  return FrozenEncoder(Impl(std::move(weights)));
}

FrozenEncoder FrozenEncoder::toy(const ToyEncoderSpec& spec) { return toy_linear(toy_encoder_weights(spec)); }

FrozenEncoder FrozenEncoder::precomputed(std::shared_ptr<const EmbeddingStore> store) {
  if (!store) throw InvalidArgument("precomputed encoder needs a store");
  return FrozenEncoder(Impl(std::move(store)));
}

Eigen::Index FrozenEncoder::embedding_dim() const {
  if (is_toy()) return std::get<Matrix>(impl_).rows();
  return static_cast<Eigen::Index>(std::get<1>(impl_)->dim());
}

Eigen::Index FrozenEncoder::input_dim() const {
  if (!is_toy()) throw UnsupportedOperation("unsupported operation: precomputed encoder has no pixel input");
  return std::get<Matrix>(impl_).cols();
}

const Matrix& FrozenEncoder::weights() const {
  if (!is_toy()) throw UnsupportedOperation("unsupported operation: precomputed encoder has no weights");
  return std::get<Matrix>(impl_);
}

const EmbeddingStore& FrozenEncoder::store() const {
  if (is_toy()) throw UnsupportedOperation("unsupported operation: toy encoder has no store");
  return *std::get<1>(impl_);
}

Embedding FrozenEncoder::encode(const InputSample& sample) const {
  if (!is_toy()) throw UnsupportedOperation("unsupported operation: precomputed encoder cannot encode pixels");
  const Matrix& w = std::get<Matrix>(impl_);
  if (sample.pixels.size() != w.cols()) throw DimensionError("pixel length does not match encoder input");
  return w * sample.pixels;
}

Embedding FrozenEncoder::stored(std::size_t index) const { return store().embedding(index); }

}  // namespace sabre
