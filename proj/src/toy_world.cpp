#include "sabre/toy_world.hpp"

namespace sabre {

namespace {

// Orthonormalises the columns of m with sign fixing on the R diagonal.
Matrix orthonormal_columns(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (qr.matrixQR()(c, c) < 0) q.col(c) *= -1.0;
  }
  return q;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  }
  return m;
}

}  // namespace

Matrix content_basis(int pixels, int rank, std::uint64_t seed) {
  if (pixels < 2) throw InvalidArgument("content basis needs at least two pixels");
  if (rank < 1 || rank >= pixels) throw InvalidArgument("content rank must lie in [1, pixels)");
  Rng rng(seed);
  Matrix g = gaussian(pixels, rank, rng);
  g.rowwise() -= g.colwise().mean();
  return orthonormal_columns(g);
}

ToyDomain::ToyDomain(const Matrix& basis, int num_classes, double radius, double sigma, double off_noise,
                     std::uint64_t seed)
    : basis_(basis), radius_(radius), sigma_(sigma), off_noise_(off_noise) {
  if (num_classes < 1) throw InvalidArgument("domain needs at least one class");
  if (!(sigma >= 0.0) || !(off_noise >= 0.0)) throw InvalidArgument("noise scales must be non-negative");
  projector_ = basis_ * basis_.transpose();
  const Eigen::Index k = basis_.cols();
  Rng rng(seed);
  Matrix coeffs = gaussian(k, num_classes, rng);
  if (num_classes <= k) {
    coeffs = orthonormal_columns(coeffs);
  } else {
    for (Eigen::Index c = 0; c < coeffs.cols(); ++c) coeffs.col(c).normalize();
  }
  directions_ = basis_ * coeffs;
}

Vector ToyDomain::center(int label) const {
  if (label < 0 || label >= num_classes()) throw InvalidArgument("class index out of range");
  return Vector::Constant(pixels(), 0.5) + radius_ * directions_.col(label);
}

std::vector<InputSample> ToyDomain::sample(int n, Rng& rng) const {
  std::vector<InputSample> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  const int p = pixels();
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes();
    Vector noise(p);
    for (int j = 0; j < p; ++j) noise(j) = sigma_ * rng.normal();
    const Vector inside = projector_ * noise;
    const Vector x = center(label) + inside + off_noise_ * (noise - inside);
    out.push_back(InputSample{x.cwiseMax(0.0).cwiseMin(1.0), label});
  }
  return out;
}

}  // namespace sabre
