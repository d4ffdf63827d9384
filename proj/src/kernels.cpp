#include "sabre/kernels.hpp"

#include <cstdlib>
#include <exception>
#include <string>

#include <omp.h>

#include "sabre/aggregation.hpp"

namespace sabre {

int configured_threads() {
  const char* env = std::getenv("SABRE_THREADS");
  if (env != nullptr) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(env, &used);
      if (used == std::string(env).size() && n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return omp_get_num_procs();
}

void for_each_index(std::size_t n, Execution exec, const std::function<void(std::size_t)>& fn) {
  if (exec == Execution::Serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(configured_threads())
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Matrix pairwise_cosine_distances(const std::vector<Vector>& vectors, Execution exec) {
  const std::size_t n = vectors.size();
  Matrix d = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for_each_index(n, exec, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) d(i, j) = cosine_distance(vectors[i], vectors[j]);
    }
  });
  return d;
}

}  // namespace sabre
