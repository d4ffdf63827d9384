#pragma once

#include <cstdint>
#include <vector>

#include "sabre/embedding_space.hpp"
#include "sabre/rng.hpp"

namespace sabre {

/// Orthonormal p x k basis of a "content" subspace inside the mean-free
/// hyperplane of pixel space (every column sums to zero). Requires k < p.
Matrix content_basis(int pixels, int rank, std::uint64_t seed);

/// Gaussian mixture in pixel space: class k is centred at 0.5 + R * u_k with
/// unit directions u_k inside a content subspace. Noise has standard deviation
/// sigma inside the subspace and off_noise * sigma outside it; pixels are
/// clamped to [0, 1].
class ToyDomain {
 public:
  ToyDomain(const Matrix& basis, int num_classes, double radius, double sigma, double off_noise,
            std::uint64_t seed);

  int num_classes() const { return static_cast<int>(directions_.cols()); }
  int pixels() const { return static_cast<int>(directions_.rows()); }
  double radius() const { return radius_; }
  double sigma() const { return sigma_; }
  /// p x K matrix of unit class directions.
  const Matrix& directions() const { return directions_; }
  Vector center(int label) const;

  /// n samples with labels i mod K.
  std::vector<InputSample> sample(int n, Rng& rng) const;

 private:
  Matrix basis_;
  Matrix projector_;
  Matrix directions_;
  double radius_;
  double sigma_;
  double off_noise_;
};

}  // namespace sabre
