#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "gcskel/types.hpp"

namespace gcskel {

struct Neighbor {
  std::size_t index;
  double dist2;

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
  friend bool operator==(const Neighbor& a, const Neighbor& b) {
    return a.index == b.index && a.dist2 == b.dist2;
  }
};

/// Static 3-d tree over a set of positions.
///
/// Queries return neighbors ordered by (squared distance, index), so results
/// are identical to a brute-force sort with ties broken by ascending index.
/// The tree copies the positions and is immutable after construction.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Vec3> positions)
      : points_(positions.begin(), positions.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// k nearest neighbors of `query` (fewer if the tree is smaller).
  std::vector<Neighbor> nearest(const Vec3& query, std::size_t k) const {
    std::vector<Neighbor> heap;
    if (k == 0 || points_.empty()) return heap;
    heap.reserve(k + 1);
    knn_search(0, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// All points with squared distance <= radius^2, sorted.
  std::vector<Neighbor> within(const Vec3& query, double radius) const {
    std::vector<Neighbor> out;
    if (points_.empty() || radius < 0.0) return out;
    radius_search(0, query, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 12;

  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Vec3 lo, hi;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](std::size_t a, std::size_t b) {
                       return points_[a][axis] < points_[b][axis];
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const std::size_t l = build(begin, mid);
    const std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  double box_dist2(const Node& n, const Vec3& q) const {
    const Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  void knn_search(std::size_t id, const Vec3& q, std::size_t k,
                  std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_dist2(n, q) > heap.front().dist2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    knn_search(go_left ? n.left : n.right, q, k, heap);
    knn_search(go_left ? n.right : n.left, q, k, heap);
  }

  void radius_search(std::size_t id, const Vec3& q, double r2,
                     std::vector<Neighbor>& out) const {
    const Node& n = nodes_[id];
    if (box_dist2(n, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const double d2 = (points_[idx] - q).squaredNorm();
        if (d2 <= r2) out.push_back({idx, d2});
      }
      return;
    }
    radius_search(n.left, q, r2, out);
    radius_search(n.right, q, r2, out);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace gcskel
