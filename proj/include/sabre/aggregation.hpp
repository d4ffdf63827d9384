#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "sabre/types.hpp"

namespace sabre {

/// One client's flattened prompt delta.
struct FlatUpdate {
  Vector values;
  int client_id = -1;
};

struct MeanAggregator {};
struct TrimmedMeanAggregator {
  int m = 1;
};
struct MedianAggregator {};
struct NormBoundAggregator {};
struct FlameAggregator {
  double lambda = 0.001;
};

using AggregatorSpec =
    std::variant<MeanAggregator, TrimmedMeanAggregator, MedianAggregator, NormBoundAggregator, FlameAggregator>;

std::string aggregator_name(const AggregatorSpec& spec);

FlatUpdate fedavg(const std::vector<FlatUpdate>& updates);
/// Per coordinate: drop the m smallest and m largest values, average the rest.
FlatUpdate trimmed_mean(const std::vector<FlatUpdate>& updates, int m);
/// Per coordinate median; mean of the two middle values for even n.
FlatUpdate coordinate_median(const std::vector<FlatUpdate>& updates);
/// Clips every update to the median update norm, then averages.
FlatUpdate norm_bound(const std::vector<FlatUpdate>& updates);
/// Cluster, clip to the median accepted norm, average, add N(0, (lambda S)^2).
FlatUpdate flame(const std::vector<FlatUpdate>& updates, double lambda, std::uint64_t seed);

/// 1 - cos(a, b); 0 when both are zero, 1 when exactly one is.
double cosine_distance(const Vector& a, const Vector& b);

/// Majority cluster of a symmetric distance matrix: mutual reachability with
/// core distance k = floor(n/2)+1, minimum spanning tree, then edges are
/// removed level by level (heaviest weight first, ties together) while a
/// component of size >= floor(n/2)+1 survives. Returns the indices of the
/// last such component, sorted.
std::vector<std::size_t> flame_cluster(const Matrix& distances);

/// Dispatches on spec. Updates are processed in client_id order, so the
/// result does not depend on the order they are passed in.
FlatUpdate aggregate(const AggregatorSpec& spec, std::vector<FlatUpdate> updates, std::uint64_t seed);

}  // namespace sabre
