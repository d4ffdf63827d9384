#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sabre/types.hpp"

namespace sabre {

/// Serial runs the plain loop and is the reference the parallel path is
/// tested against. Both write results to per-index slots, so they agree bit
/// for bit.
enum class Execution { Serial, Parallel };

/// Worker cap from SABRE_THREADS (unset or invalid: machine parallelism).
int configured_threads();

/// Calls fn(i) for i in [0, n). With Parallel the iterations are spread over
/// OpenMP threads; the first exception thrown (lowest index) is rethrown
/// after the loop.
void for_each_index(std::size_t n, Execution exec, const std::function<void(std::size_t)>& fn);

/// n x n matrix of cosine distances between the vectors.
Matrix pairwise_cosine_distances(const std::vector<Vector>& vectors, Execution exec);

}  // namespace sabre
