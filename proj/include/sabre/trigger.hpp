#pragma once

#include "sabre/types.hpp"

namespace sabre {

/// Backdoor trigger.
///
/// An input-space trigger is an additive pixel perturbation kept inside the
/// box ||t||_inf <= epsilon (every update is projected back by clamping). An
/// embedding-space trigger is a fixed shift applied directly to embeddings;
/// its bound is its own L2 norm.
class Trigger {
 public:
  enum class Space { Input, Embedding };

  /// Validates the box bound (a tolerance of 1e-12 absorbs rounding).
  static Trigger input_space(Vector values, double epsilon);
  /// Zero trigger of length p with bound epsilon.
  static Trigger zero_input(Eigen::Index p, double epsilon);
  static Trigger embedding_space(Vector shift);

  Space space() const { return space_; }
  bool is_input_space() const { return space_ == Space::Input; }
  const Vector& values() const { return values_; }
  double epsilon() const { return epsilon_; }
  Eigen::Index size() const { return values_.size(); }

  /// Same bound and space, new values projected onto the box (input space).
  Trigger with_values(const Vector& values) const;

  bool operator==(const Trigger& other) const;

 private:
  Trigger(Space space, Vector values, double epsilon)
      : space_(space), values_(std::move(values)), epsilon_(epsilon) {}

  Space space_;
  Vector values_;
  double epsilon_;
};

/// Clamps every component into [-epsilon, epsilon].
Vector project_to_box(const Vector& values, double epsilon);

}  // namespace sabre
