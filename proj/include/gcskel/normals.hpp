#pragma once

#include <vector>

#include <Eigen/Eigenvalues>

#include "gcskel/cloud.hpp"
#include "gcskel/graph.hpp"
#include "gcskel/spatial_index.hpp"

namespace gcskel {

struct NormalEstimate {
  PointCloud cloud;                 // normals set, signs not yet consistent
  std::vector<std::size_t> degenerate;  // points whose neighborhood has rank < 2
};

/// Unsigned normals from a plane fit over the k nearest neighbors (the
/// point itself included): the smallest-eigenvalue eigenvector of the
/// neighborhood covariance.
inline NormalEstimate estimate_normals(const PointCloud& cloud,
                                       std::size_t k = 15) {
  const std::size_t n = cloud.size();
  if (k < 3 || n <= k)
    throw InvalidArgument("estimate_normals needs N > k >= 3");
  const auto pos = cloud.positions();
  const KdTree tree(pos);
  std::vector<OrientedPoint> pts = cloud.points();
  NormalEstimate out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = tree.nearest(pos[i], k);
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += pos[nb.index];
    mean /= double(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = pos[nb.index] - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 ev = es.eigenvalues();  // ascending
    if (ev(1) <= 1e-12 * std::max(ev(2), 1e-300)) {
      out.degenerate.push_back(i);
      pts[i].normal = Vec3::UnitZ();
    } else {
      pts[i].normal = es.eigenvectors().col(0).normalized();
    }
  }
  out.cloud = PointCloud(std::move(pts), true);
  return out;
}

/// Make normal signs consistent by walking the spanning tree from point 0 and
/// flipping every child whose normal disagrees with its parent's.
inline PointCloud orient_normals(const PointCloud& cloud, const EdgeList& mst) {
  const std::size_t n = cloud.size();
  if (!cloud.has_normals()) throw InvalidArgument("cloud has no normals");
  std::vector<std::vector<std::size_t>> adj(n);
  for (const Edge& e : mst.edges) {
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  UnionFind uf(n);
  std::size_t comps = n;
  for (const Edge& e : mst.edges)
    if (uf.unite(e.a, e.b)) --comps;
  if (comps != 1)
    throw DisconnectedGraphError("spanning tree does not reach every point", comps);

  PointCloud out = cloud;
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> queue{0};
  seen[0] = 1;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t p = queue[head];
    for (std::size_t c : adj[p]) {
      if (seen[c]) continue;
      seen[c] = 1;
      if (out.normal(p).dot(out.normal(c)) < 0.0) out.set_normal(c, -out.normal(c));
      queue.push_back(c);
    }
  }
  return out;
}

}  // namespace gcskel
