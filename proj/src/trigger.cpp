#include "sabre/trigger.hpp"

namespace sabre {

Vector project_to_box(const Vector& values, double epsilon) {
  return values.cwiseMax(-epsilon).cwiseMin(epsilon);
}

Trigger Trigger::input_space(Vector values, double epsilon) {
  if (!(epsilon >= 0.0)) throw InvalidArgument("trigger epsilon must be non-negative");
  if (!values.allFinite()) throw InvalidArgument("trigger has non-finite entries");
  if (values.size() > 0 && values.cwiseAbs().maxCoeff() > epsilon + 1e-12) {
    throw InvalidArgument("trigger violates its L-infinity bound");
  }
  return Trigger(Space::Input, std::move(values), epsilon);
}

Trigger Trigger::zero_input(Eigen::Index p, double epsilon) {
  return input_space(Vector::Zero(p), epsilon);
}

Trigger Trigger::embedding_space(Vector shift) {
  if (!shift.allFinite()) throw InvalidArgument("trigger has non-finite entries");
  const double norm = shift.norm();
  return Trigger(Space::Embedding, std::move(shift), norm);
}

Trigger Trigger::with_values(const Vector& values) const {
  if (values.size() != values_.size()) throw DimensionError("trigger length changed");
  if (space_ == Space::Input) return Trigger(space_, project_to_box(values, epsilon_), epsilon_);
  return embedding_space(values);
}

bool Trigger::operator==(const Trigger& other) const {
  return space_ == other.space_ && epsilon_ == other.epsilon_ && values_.size() == other.values_.size() &&
         values_ == other.values_;
}

}  // namespace sabre
