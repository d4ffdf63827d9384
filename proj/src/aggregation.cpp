#include "sabre/aggregation.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "sabre/kernels.hpp"
#include "sabre/rng.hpp"

namespace sabre {

std::string aggregator_name(const AggregatorSpec& spec) {
  struct Visitor {
    std::string operator()(const MeanAggregator&) const { return "mean"; }
    std::string operator()(const TrimmedMeanAggregator&) const { return "trimmed_mean"; }
    std::string operator()(const MedianAggregator&) const { return "median"; }
    std::string operator()(const NormBoundAggregator&) const { return "norm_bound"; }
    std::string operator()(const FlameAggregator&) const { return "flame"; }
  };
  return std::visit(Visitor{}, spec);
}

namespace {

Eigen::Index check_updates(const std::vector<FlatUpdate>& updates) {
  if (updates.empty()) throw InvalidArgument("no updates to aggregate");
  const Eigen::Index len = updates.front().values.size();
  for (const auto& u : updates) {
    if (u.values.size() != len) throw DimensionError("updates have ragged lengths");
    if (!u.values.allFinite()) throw InvalidArgument("update has non-finite entries");
  }
  return len;
}

Vector mean_of(const std::vector<Vector>& vs) {
  Vector sum = Vector::Zero(vs.front().size());
  for (const auto& v : vs) sum += v;
  return sum / static_cast<double>(vs.size());
}

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::vector<double> column(const std::vector<FlatUpdate>& updates, Eigen::Index j) {
  std::vector<double> col;
  col.reserve(updates.size());
  for (const auto& u : updates) col.push_back(u.values(j));
  return col;
}

Vector clip_to(const Vector& v, double bound) {
  const double n = v.norm();
  if (n > bound && n > 0.0) return v * (bound / n);
  return v;
}

}  // namespace

FlatUpdate fedavg(const std::vector<FlatUpdate>& updates) {
  const Eigen::Index len = check_updates(updates);
  Vector sum = Vector::Zero(len);
  for (const auto& u : updates) sum += u.values;
  return FlatUpdate{sum / static_cast<double>(updates.size()), -1};
}

FlatUpdate trimmed_mean(const std::vector<FlatUpdate>& updates, int m) {
  const Eigen::Index len = check_updates(updates);
  const auto n = static_cast<long long>(updates.size());
  if (m < 0 || 2LL * m >= n) throw InvalidArgument("trimmed mean needs 0 <= 2m < n");
  if (m == 0) return fedavg(updates);
  Vector out(len);
  for (Eigen::Index j = 0; j < len; ++j) {
    auto col = column(updates, j);
    std::sort(col.begin(), col.end());
    double sum = 0.0;
    for (long long i = m; i < n - m; ++i) sum += col[static_cast<std::size_t>(i)];
    out(j) = sum / static_cast<double>(n - 2LL * m);
  }
  return FlatUpdate{out, -1};
}

FlatUpdate coordinate_median(const std::vector<FlatUpdate>& updates) {
  const Eigen::Index len = check_updates(updates);
  Vector out(len);
  for (Eigen::Index j = 0; j < len; ++j) out(j) = median_of(column(updates, j));
  return FlatUpdate{out, -1};
}

FlatUpdate norm_bound(const std::vector<FlatUpdate>& updates) {
  check_updates(updates);
  std::vector<double> norms;
  for (const auto& u : updates) norms.push_back(u.values.norm());
  const double bound = median_of(norms);
  std::vector<Vector> clipped;
  for (const auto& u : updates) clipped.push_back(clip_to(u.values, bound));
  return FlatUpdate{mean_of(clipped), -1};
}

double cosine_distance(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  const bool za = !(na > 0.0);
  const bool zb = !(nb > 0.0);
  if (za && zb) return 0.0;
  if (za || zb) return 1.0;
  return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

std::vector<std::size_t> flame_cluster(const Matrix& distances) {
  const auto n = static_cast<std::size_t>(distances.rows());
  if (distances.cols() != distances.rows()) throw DimensionError("distance matrix must be square");
  if (n < 3) throw InvalidArgument("clustering needs at least three points");
  const std::size_t min_size = n / 2 + 1;
  const std::size_t k = n / 2 + 1;

  // Core distance: k-th nearest other point.
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(distances(i, j));
    }
    std::nth_element(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k - 1), others.end());
    core[i] = others[k - 1];
  }
  auto reach = [&](std::size_t a, std::size_t b) {
    return std::max({core[a], core[b], distances(a, b)});
  };

  // Prim's algorithm on the complete mutual-reachability graph.
  struct Edge {
    std::size_t a, b;
    double w;
  };
  std::vector<Edge> mst;
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(n, 0);
  in_tree[0] = true;
  for (std::size_t j = 1; j < n; ++j) {
    best[j] = reach(0, j);
    parent[j] = 0;
  }
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] < best[next])) next = j;
    }
    in_tree[next] = true;
    mst.push_back({parent[next], next, best[next]});
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && reach(next, j) < best[j]) {
        best[j] = reach(next, j);
        parent[j] = next;
      }
    }
  }

  std::vector<std::size_t> current(n);
  std::iota(current.begin(), current.end(), 0);
  std::vector<Edge> edges = mst;
  while (!edges.empty()) {
    double top = edges.front().w;
    for (const auto& e : edges) top = std::max(top, e.w);
    std::vector<Edge> kept;
    for (const auto& e : edges) {
      if (e.w < top) kept.push_back(e);
    }
    // Components of `current` under the kept edges (union-find).
    std::vector<std::size_t> root(n);
    std::iota(root.begin(), root.end(), 0);
    auto find = [&](std::size_t x) {
      while (root[x] != x) x = root[x] = root[root[x]];
      return x;
    };
    for (const auto& e : kept) root[find(e.a)] = find(e.b);
    std::vector<std::size_t> survivor;
    for (std::size_t i : current) {
      std::vector<std::size_t> members;
      for (std::size_t j : current) {
        if (find(j) == find(i)) members.push_back(j);
      }
      if (members.size() >= min_size) {
        survivor = std::move(members);
        break;
      }
    }
    if (survivor.empty()) break;
    current = std::move(survivor);
    std::vector<bool> member(n, false);
    for (std::size_t i : current) member[i] = true;
    edges.clear();
    for (const auto& e : kept) {
      if (member[e.a] && member[e.b]) edges.push_back(e);
    }
  }
  return current;
}

FlatUpdate flame(const std::vector<FlatUpdate>& updates, double lambda, std::uint64_t seed) {
  const Eigen::Index len = check_updates(updates);
  if (updates.size() < 3) throw InvalidArgument("flame needs at least three updates");
  if (!(lambda >= 0.0)) throw InvalidArgument("flame lambda must be non-negative");
  std::vector<Vector> values;
  for (const auto& u : updates) values.push_back(u.values);
  const auto accepted = flame_cluster(pairwise_cosine_distances(values, Execution::Serial));

  std::vector<double> norms;
  for (std::size_t i : accepted) norms.push_back(values[i].norm());
  const double bound = median_of(norms);
  std::vector<Vector> clipped;
  for (std::size_t i : accepted) clipped.push_back(clip_to(values[i], bound));
  Vector out = mean_of(clipped);

  const double sigma = lambda * bound;
  Rng rng(seed);
  for (Eigen::Index j = 0; j < len; ++j) out(j) += sigma * rng.normal();
  return FlatUpdate{out, -1};
}

FlatUpdate aggregate(const AggregatorSpec& spec, std::vector<FlatUpdate> updates, std::uint64_t seed) {
  std::stable_sort(updates.begin(), updates.end(),
                   [](const FlatUpdate& a, const FlatUpdate& b) { return a.client_id < b.client_id; });
  struct Visitor {
    const std::vector<FlatUpdate>& u;
    std::uint64_t seed;
    FlatUpdate operator()(const MeanAggregator&) const { return fedavg(u); }
    FlatUpdate operator()(const TrimmedMeanAggregator& t) const { return trimmed_mean(u, t.m); }
    FlatUpdate operator()(const MedianAggregator&) const { return coordinate_median(u); }
    FlatUpdate operator()(const NormBoundAggregator&) const { return norm_bound(u); }
    FlatUpdate operator()(const FlameAggregator& f) const { return flame(u, f.lambda, seed); }
  };
  return std::visit(Visitor{updates, seed}, spec);
}

}  // namespace sabre
