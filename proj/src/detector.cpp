#include "sabre/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "sabre/binary_io.hpp"
#include "sabre/rng.hpp"

namespace sabre {

Vector DetectorModel::logits(const Embedding& z) const {
  if (z.size() != dim()) throw DimensionError("embedding length does not match detector input");
  const Vector hidden_act = (w1 * z + b1).cwiseMax(0.0);
  return w2 * hidden_act + b2;
}

void DetectorModel::validate() const {
  if (w1.rows() < 1 || w1.cols() < 1) throw InvalidArgument("detector layers must be non-empty");
  if (b1.size() != w1.rows() || w2.rows() != 2 || w2.cols() != w1.rows() || b2.size() != 2) {
    throw DimensionError("detector weight shapes are inconsistent");
  }
  if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite()) {
    throw InvalidArgument("detector weights are not finite");
  }
}

bool DetectorModel::operator==(const DetectorModel& o) const {
  auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; };
  return same(w1, o.w1) && same(b1, o.b1) && same(w2, o.w2) && same(b2, o.b2);
}

void DetectorHyper::validate() const {
  if (hidden < 1) throw InvalidArgument("detector hidden width must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("detector learning rate must be positive");
  if (epochs < 0) throw InvalidArgument("detector epochs must be non-negative");
  if (batch_size < 1) throw InvalidArgument("detector batch size must be positive");
}

namespace {

std::vector<LabeledEmbedding> shuffled_pairs(const std::vector<Embedding>& clean,
                                             const std::vector<Embedding>& poisoned, std::uint64_t seed) {
  std::vector<LabeledEmbedding> out;
  out.reserve(clean.size() * 2);
  for (const auto& z : clean) out.push_back({z, 0});
  for (const auto& z : poisoned) out.push_back({z, 1});
  Rng rng(seed);
  rng.shuffle(out);
  return out;
}

}  // namespace

std::vector<LabeledEmbedding> build_aux_dataset(const std::vector<Embedding>& clean, const Trigger& trigger,
                                                const FrozenEncoder* encoder, std::uint64_t seed) {
  if (clean.empty()) throw InvalidArgument("no clean embeddings for the auxiliary dataset");
  std::vector<Embedding> poisoned;
  poisoned.reserve(clean.size());
  if (trigger.is_input_space()) {
    if (encoder == nullptr || !encoder->is_toy()) {
      throw InvalidArgument("mode mismatch: an input-space trigger needs the toy encoder");
    }
    if (trigger.size() != encoder->input_dim()) throw DimensionError("trigger length does not match encoder input");
    const Vector shift = encoder->weights() * trigger.values();
    for (const auto& z : clean) {
      if (z.size() != shift.size()) throw DimensionError("embedding length does not match encoder output");
      poisoned.push_back(z + shift);
    }
  } else {
    if (encoder != nullptr && encoder->is_toy()) {
      throw InvalidArgument("mode mismatch: an embedding-space trigger is for precomputed stores");
    }
    for (const auto& z : clean) poisoned.push_back(shift_embedding(z, trigger));
  }
  return shuffled_pairs(clean, poisoned, seed);
}

std::vector<LabeledEmbedding> build_aux_dataset(const std::vector<InputSample>& clean, const Trigger& trigger,
                                                const FrozenEncoder& encoder, std::uint64_t seed) {
  if (clean.empty()) throw InvalidArgument("no clean samples for the auxiliary dataset");
  if (!trigger.is_input_space() || !encoder.is_toy()) {
    throw InvalidArgument("mode mismatch: pixel samples need an input-space trigger and the toy encoder");
  }
  std::vector<Embedding> zs;
  std::vector<Embedding> poisoned;
  for (const auto& x : clean) {
    zs.push_back(encoder.encode(x));
    poisoned.push_back(encoder.encode(apply_trigger(x, trigger)));
  }
  return shuffled_pairs(zs, poisoned, seed);
}

DetectorModel init_detector(Eigen::Index dim, int hidden, std::uint64_t seed) {
  if (dim < 1 || hidden < 1) throw InvalidArgument("detector shape must be positive");
  Rng rng(seed);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(dim));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  DetectorModel m{Matrix(hidden, dim), Vector(hidden), Matrix(2, hidden), Vector(2)};
  for (int r = 0; r < hidden; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) m.w1(r, c) = rng.uniform(-a1, a1);
  }
  for (int r = 0; r < hidden; ++r) m.b1(r) = rng.uniform(-a1, a1);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < hidden; ++c) m.w2(r, c) = rng.uniform(-a2, a2);
  }
  for (int r = 0; r < 2; ++r) m.b2(r) = rng.uniform(-a2, a2);
  return m;
}

namespace {

struct Adam {
  Matrix m, v;
  explicit Adam(Eigen::Index rows, Eigen::Index cols) : m(Matrix::Zero(rows, cols)), v(Matrix::Zero(rows, cols)) {}

  template <class Param>
  void step(Param& p, const Matrix& g, double lr, long t) {
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    p -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
  }
};

}  // namespace

DetectorModel train_detector(const std::vector<LabeledEmbedding>& aux, const DetectorHyper& hyper) {
  hyper.validate();
  if (aux.empty()) throw DegenerateInput("degenerate auxiliary dataset: no records");
  bool has0 = false;
  bool has1 = false;
  const Eigen::Index d = aux.front().embedding.size();
  for (const auto& r : aux) {
    if (r.poisoned != 0 && r.poisoned != 1) throw InvalidArgument("auxiliary flag must be 0 or 1");
    if (r.embedding.size() != d) throw DimensionError("auxiliary embeddings have ragged lengths");
    if (!r.embedding.allFinite()) throw InvalidArgument("auxiliary embedding is not finite");
    (r.poisoned ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw DegenerateInput("degenerate auxiliary dataset: both labels are required");

  DetectorModel model = init_detector(d, hyper.hidden, hyper.seed);
  const Eigen::Index h = hyper.hidden;
  Adam ow1(h, d), ob1(h, 1), ow2(2, h), ob2(2, 1);
  Rng rng(derive_seed(hyper.seed, {0x5348u}));
  long t = 0;
  const auto bs = static_cast<std::size_t>(hyper.batch_size);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto order = rng.permutation(aux.size());
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      const auto b = static_cast<Eigen::Index>(stop - start);
      Matrix z(d, b);
      Matrix y = Matrix::Zero(2, b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const auto& rec = aux[order[start + static_cast<std::size_t>(k)]];
        z.col(k) = rec.embedding;
        y(rec.poisoned, k) = 1.0;
      }
      const Matrix pre = (model.w1 * z).colwise() + model.b1;
      const Matrix act = pre.cwiseMax(0.0);
      const Matrix out = (model.w2 * act).colwise() + model.b2;
      Matrix prob(2, b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const double mx = out.col(k).maxCoeff();
        const Vector e = (out.col(k).array() - mx).exp();
        prob.col(k) = e / e.sum();
      }
      const Matrix dout = (prob - y) / static_cast<double>(b);
      const Matrix gw2 = dout * act.transpose();
      const Matrix gb2 = dout.rowwise().sum();
      Matrix dact = model.w2.transpose() * dout;
      dact = dact.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
      const Matrix gw1 = dact * z.transpose();
      const Matrix gb1 = dact.rowwise().sum();
      ++t;
      ow1.step(model.w1, gw1, hyper.lr, t);
      ob1.step(model.b1, gb1, hyper.lr, t);
      ow2.step(model.w2, gw2, hyper.lr, t);
      ob2.step(model.b2, gb2, hyper.lr, t);
    }
  }
  return model;
}

int detect(const DetectorModel& model, const Embedding& z) {
  const Vector l = model.logits(z);
  return l(1) > l(0) ? 1 : 0;
}

std::vector<int> detect_batch(const DetectorModel& model, const std::vector<Embedding>& zs, Execution exec) {
  std::vector<int> out(zs.size(), 0);
  for_each_index(zs.size(), exec, [&](std::size_t i) { out[i] = detect(model, zs[i]); });
  return out;
}

ClientScore client_score(const DetectorModel& model, const std::vector<Embedding>& embeddings, int client_id) {
  if (embeddings.empty()) throw InvalidArgument("client submitted no embeddings");
  int flagged = 0;
  for (const auto& z : embeddings) flagged += detect(model, z);
  return ClientScore{client_id, static_cast<double>(flagged) / static_cast<double>(embeddings.size())};
}

std::vector<ClientScore> score_clients(const DetectorModel& model,
                                       const std::vector<std::vector<Embedding>>& per_client,
                                       const std::vector<int>& client_ids, Execution exec) {
  if (per_client.size() != client_ids.size()) throw InvalidArgument("client id count does not match");
  std::vector<ClientScore> out(per_client.size());
  for_each_index(per_client.size(), exec,
                 [&](std::size_t i) { out[i] = client_score(model, per_client[i], client_ids[i]); });
  return out;
}

FilterResult filter_clients(const std::vector<ClientScore>& scores, int m) {
  if (m < 0 || static_cast<std::size_t>(m) >= scores.size()) {
    throw InvalidArgument("m must satisfy 0 <= m < number of clients");
  }
  std::vector<ClientScore> ranked = scores;
  std::sort(ranked.begin(), ranked.end(), [](const ClientScore& a, const ClientScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.client_id < b.client_id;
  });
  FilterResult r;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    (i < static_cast<std::size_t>(m) ? r.rejected : r.accepted).push_back(ranked[i].client_id);
  }
  std::sort(r.accepted.begin(), r.accepted.end());
  std::sort(r.rejected.begin(), r.rejected.end());
  return r;
}

double detector_accuracy(const DetectorModel& model, const std::vector<LabeledEmbedding>& data) {
  if (data.empty()) throw InvalidArgument("no records to evaluate");
  std::size_t hits = 0;
  for (const auto& r : data) hits += detect(model, r.embedding) == r.poisoned ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

ModelFormatError::ModelFormatError(std::uint64_t offset, const std::string& what)
    : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

void save_detector(const DetectorModel& model, std::ostream& out) {
  model.validate();
  LeWriter w(out);
  w.bytes(std::string_view(kModelMagic, 4));
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(model.dim()));
  w.u32(static_cast<std::uint32_t>(model.hidden()));
  auto put = [&](const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
    }
  };
  put(model.w1);
  put(model.b1);
  put(model.w2);
  put(model.b2);
}

void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
  write_file_atomically(path, [&](std::ostream& out) { save_detector(model, out); });
}

DetectorModel load_detector(std::istream& in) {
  LeReader r(in);
  char magic[4] = {};
  if (!r.bytes(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) throw ModelFormatError(0, "bad detector magic");
  std::uint32_t version = 0, d = 0, h = 0;
  if (!r.u32(version)) throw ModelFormatError(4, "truncated detector header");
  if (version != kModelVersion) throw ModelFormatError(4, "unsupported detector version " + std::to_string(version));
  if (!r.u32(d) || !r.u32(h)) throw ModelFormatError(r.offset(), "truncated detector header");
  if (d == 0 || h == 0) throw ModelFormatError(8, "zero detector dimension");
  DetectorModel m{Matrix(h, d), Vector(h), Matrix(2, h), Vector(2)};
  auto get = [&](auto& mat) {
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      for (Eigen::Index j = 0; j < mat.cols(); ++j) {
        const std::uint64_t at = r.offset();
        float v = 0.0f;
        if (!r.f32(v)) throw ModelFormatError(at, "truncated detector weights");
        if (!std::isfinite(v)) throw ModelFormatError(at, "non-finite detector weight");
        mat(i, j) = static_cast<double>(v);
      }
    }
  };
  get(m.w1);
  get(m.b1);
  get(m.w2);
  get(m.b2);
  if (!r.at_end()) throw ModelFormatError(r.offset(), "trailing bytes after detector weights");
  return m;
}

DetectorModel load_detector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_detector(in);
}

}  // namespace sabre
