#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "gcskel/cloud.hpp"
#include "gcskel/spatial_index.hpp"
#include "gcskel/types.hpp"

namespace gcskel {

struct Edge {
  std::size_t a = 0, b = 0;  // a < b
  double length = 0.0;
};

struct EdgeList {
  std::vector<Edge> edges;
  std::size_t n_points = 0;
  std::size_t components = 1;  // > 1 when the input graph was disconnected
};

/// Disjoint-set forest with path halving and union by size.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

 private:
  std::vector<std::size_t> parent_, size_;
};

/// Kruskal over an explicit edge set; returns the minimum spanning forest.
inline EdgeList kruskal(std::vector<Edge> edges, std::size_t n_points) {
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.length != y.length) return x.length < y.length;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  UnionFind uf(n_points);
  EdgeList out;
  out.n_points = n_points;
  for (const Edge& e : edges)
    if (uf.unite(e.a, e.b)) out.edges.push_back(e);
  out.components = n_points - out.edges.size();
  return out;
}

/// Minimum spanning tree over the k-nearest-neighbor graph of the cloud.
/// When that graph is disconnected the spanning forest is returned and
/// `components` reports how many trees it has.
inline EdgeList build_mst(const PointCloud& cloud, std::size_t knn = 100) {
  const std::size_t n = cloud.size();
  if (n < 2) throw InvalidArgument("build_mst needs at least 2 points");
  const auto pos = cloud.positions();
  const KdTree tree(pos);
  const std::size_t k = std::min(knn, n - 1);
  std::vector<Edge> edges;
  edges.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (const Neighbor& nb : tree.nearest(pos[i], k + 1)) {
      if (nb.index == i) continue;
      const std::size_t a = std::min(i, nb.index), b = std::max(i, nb.index);
      edges.push_back({a, b, std::sqrt(nb.dist2)});
    }
  }
  // Each undirected edge may appear twice; Kruskal skips the duplicate.
  return kruskal(std::move(edges), n);
}

struct AdaptiveThresholds {
  std::vector<double> d_max;       // longest incident spanning-tree edge
  std::vector<double> delta_cnct;  // multiplier * d_max
};

inline AdaptiveThresholds compute_thresholds(const EdgeList& mst,
                                             std::size_t n_points,
                                             double multiplier = 1.5) {
  AdaptiveThresholds thr;
  thr.d_max.assign(n_points, -1.0);
  for (const Edge& e : mst.edges) {
    if (e.a >= n_points || e.b >= n_points)
      throw InvalidArgument("edge index out of range");
    thr.d_max[e.a] = std::max(thr.d_max[e.a], e.length);
    thr.d_max[e.b] = std::max(thr.d_max[e.b], e.length);
  }
  for (std::size_t i = 0; i < n_points; ++i)
    if (thr.d_max[i] < 0.0)
      throw InvalidArgument("point " + std::to_string(i) +
                            " has no spanning-tree edge");
  thr.delta_cnct.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i)
    thr.delta_cnct[i] = multiplier * thr.d_max[i];
  return thr;
}

/// Undirected point adjacency; each list sorted ascending.
class ConnectivityGraph {
 public:
  ConnectivityGraph() = default;
  explicit ConnectivityGraph(std::vector<std::vector<std::size_t>> adj)
      : adj_(std::move(adj)) {}

  std::size_t size() const { return adj_.size(); }
  const std::vector<std::size_t>& neighbors(std::size_t i) const {
    return adj_[i];
  }
  bool connected(std::size_t i, std::size_t j) const {
    const auto& n = adj_[i];
    return std::binary_search(n.begin(), n.end(), j);
  }
  std::size_t edge_count() const {
    std::size_t c = 0;
    for (const auto& n : adj_) c += n.size();
    return c / 2;
  }

 private:
  std::vector<std::vector<std::size_t>> adj_;
};

/// Points i, j are adjacent iff dist(i, j) <= max(delta_cnct[i], delta_cnct[j]).
inline ConnectivityGraph build_connectivity(const PointCloud& cloud,
                                            const AdaptiveThresholds& thr) {
  const std::size_t n = cloud.size();
  if (thr.delta_cnct.size() != n)
    throw InvalidArgument("thresholds do not cover the cloud");
  const auto pos = cloud.positions();
  const KdTree tree(pos);
  std::vector<std::vector<std::size_t>> adj(n);
  // Query each point at its own threshold; the max rule makes the relation
  // symmetric once both directions are inserted.
  for (std::size_t i = 0; i < n; ++i) {
    for (const Neighbor& nb : tree.within(pos[i], thr.delta_cnct[i])) {
      if (nb.index == i) continue;
      adj[i].push_back(nb.index);
      adj[nb.index].push_back(i);
    }
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return ConnectivityGraph(std::move(adj));
}

/// Vertices reachable from `seed` through `graph` while staying inside the
/// subset marked by `allowed` (seed is always included). Sorted ascending.
inline IndexSet connected_component(const ConnectivityGraph& graph,
                                    std::size_t seed,
                                    const std::vector<char>& allowed) {
  std::vector<char> seen(graph.size(), 0);
  IndexSet out{seed};
  seen[seed] = 1;
  for (std::size_t head = 0; head < out.size(); ++head) {
    for (std::size_t j : graph.neighbors(out[head])) {
      if (!seen[j] && allowed[j]) {
        seen[j] = 1;
        out.push_back(j);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Number of connected components of the whole graph.
inline std::size_t count_components(const ConnectivityGraph& graph) {
  UnionFind uf(graph.size());
  std::size_t comps = graph.size();
  for (std::size_t i = 0; i < graph.size(); ++i)
    for (std::size_t j : graph.neighbors(i))
      if (uf.unite(i, j)) --comps;
  return comps;
}

struct Clustering {
  std::vector<std::size_t> labels;  // per point, in [0, M)
  std::vector<Vec3> centers;
  std::vector<std::size_t> seeds;   // member closest to its center
  std::vector<std::set<std::size_t>> cluster_adjacency;

  std::size_t size() const { return centers.size(); }
  IndexSet members(std::size_t c) const {
    IndexSet out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) out.push_back(i);
    return out;
  }
};

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double shift_tolerance = 1e-6;  // fraction of the bounding-box diagonal
  std::size_t max_reseeds = 5;
};

/// k-means (k-means++ initialisation, Lloyd iterations) over positions.
/// Deterministic for a given rng_seed. Cluster adjacency is derived from
/// `cnct` when provided.
inline Clustering cluster_cloud(const PointCloud& cloud, std::size_t m,
                                std::uint64_t rng_seed,
                                const ConnectivityGraph* cnct = nullptr,
                                const KMeansOptions& opt = {}) {
  const std::size_t n = cloud.size();
  if (m == 0 || m > n)
    throw InvalidArgument("cluster count must be in [1, N]");
  std::mt19937_64 rng(rng_seed);
  const auto pos = cloud.positions();

  // k-means++ seeding.
  std::vector<Vec3> centers;
  centers.reserve(m);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  centers.push_back(pos[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  while (centers.size() < m) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (pos[i] - centers.back()).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        if (r < d2[pick]) break;
        r -= d2[pick];
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;  // never re-pick a center
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centers.push_back(pos[pick]);
  }

  const double tol = opt.shift_tolerance * std::max(cloud.bbox_diagonal(), 1e-300);
  std::vector<std::size_t> labels(n, 0);
  std::size_t reseeds = 0;
  auto assign = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < m; ++c) {
        const double d = (pos[i] - centers[c]).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      labels[i] = best;
    }
  };

  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    assign();
    std::vector<Vec3> sum(m, Vec3::Zero());
    std::vector<std::size_t> count(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[labels[i]] += pos[i];
      ++count[labels[i]];
    }
    bool reseeded = false;
    for (std::size_t c = 0; c < m; ++c) {
      if (count[c] > 0) continue;
      if (++reseeds > opt.max_reseeds)
        throw NumericalError("k-means left a cluster empty after reseeding");
      // Move the empty centroid onto the point farthest from its center.
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (pos[i] - centers[labels[i]]).squaredNorm();
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      centers[c] = pos[far];
      reseeded = true;
    }
    if (reseeded) continue;
    double shift = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const Vec3 nc = sum[c] / double(count[c]);
      shift = std::max(shift, (nc - centers[c]).norm());
      centers[c] = nc;
    }
    if (shift <= tol) break;
  }
  assign();

  Clustering out;
  out.labels = labels;
  out.centers.assign(m, Vec3::Zero());
  std::vector<std::size_t> count(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    out.centers[labels[i]] += pos[i];
    ++count[labels[i]];
  }
  for (std::size_t c = 0; c < m; ++c) {
    if (count[c] == 0)
      throw NumericalError("k-means produced an empty cluster");
    out.centers[c] /= double(count[c]);
  }
  out.seeds.assign(m, n);
  std::vector<double> best(m, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (pos[i] - out.centers[labels[i]]).squaredNorm();
    if (d < best[labels[i]]) {
      best[labels[i]] = d;
      out.seeds[labels[i]] = i;
    }
  }
  out.cluster_adjacency.assign(m, {});
  if (cnct != nullptr) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : cnct->neighbors(i))
        if (labels[i] != labels[j]) {
          out.cluster_adjacency[labels[i]].insert(labels[j]);
          out.cluster_adjacency[labels[j]].insert(labels[i]);
        }
  }
  return out;
}

/// Lower median of d_max over the members of one cluster.
inline double cluster_plane_threshold(const Clustering& clustering,
                                      const AdaptiveThresholds& thr,
                                      std::size_t cluster_id) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < clustering.labels.size(); ++i)
    if (clustering.labels[i] == cluster_id) vals.push_back(thr.d_max[i]);
  if (vals.empty()) throw InvalidArgument("empty cluster");
  const std::size_t mid = (vals.size() - 1) / 2;
  std::nth_element(vals.begin(), vals.begin() + mid, vals.end());
  return vals[mid];
}

}  // namespace gcskel
