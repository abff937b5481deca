#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "nimblereg/types.hpp"

namespace nimblereg {

/// Static 3D kd-tree over a borrowed point array.
///
/// Nearest-neighbour queries return the same index a brute-force scan would
/// (lowest index among exact ties), and distances are computed with
/// squared_distance() so the two paths agree bitwise.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 12)
      : points_(points), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    index_.resize(points.size());
    std::iota(index_.begin(), index_.end(), std::size_t{0});
    if (!points.empty()) {
      nodes_.reserve(2 * points.size() / leaf_size_ + 2);
      build(0, points.size());
    }
  }

  std::size_t size() const { return points_.size(); }

  struct Hit {
    std::size_t index = std::numeric_limits<std::size_t>::max();
    double sq_dist = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vec3& q) const {
    Hit best;
    if (!nodes_.empty()) nearest_rec(0, q, best);
    return best;
  }

  /// Appends indices of all points with squared distance <= radius².
  void radius_search(const Vec3& q, double radius, std::vector<std::size_t>& out) const {
    if (nodes_.empty()) return;
    radius_rec(0, q, radius * radius, out);
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Vec3 lo, hi;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[index_[i]]);
      hi = hi.cwiseMax(points_[index_[i]]);
    }
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = lo;
    node.hi = hi;
    if (end - begin > leaf_size_) {
      int axis = 0;
      (hi - lo).maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                       [&](std::size_t a, std::size_t b) {
                         const double pa = points_[a][axis], pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                       });
      node.axis = axis;
      node.split = points_[index_[mid]][axis];
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  static double box_sq_dist(const Node& n, const Vec3& q) {
    double d = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double e = std::max({n.lo[a] - q[a], 0.0, q[a] - n.hi[a]});
      d += e * e;
    }
    return d;
  }

  void nearest_rec(std::size_t id, const Vec3& q, Hit& best) const {
    const Node& n = nodes_[id];
    if (box_sq_dist(n, q) > best.sq_dist) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = index_[i];
        const double d = squared_distance(points_[idx], q);
        if (d < best.sq_dist || (d == best.sq_dist && idx < best.index)) best = {idx, d};
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    nearest_rec(go_left ? n.left : n.right, q, best);
    nearest_rec(go_left ? n.right : n.left, q, best);
  }

  void radius_rec(std::size_t id, const Vec3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    if (box_sq_dist(n, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i)
        if (squared_distance(points_[index_[i]], q) <= r2) out.push_back(index_[i]);
      return;
    }
    radius_rec(n.left, q, r2, out);
    radius_rec(n.right, q, r2, out);
  }

  std::span<const Vec3> points_;
  std::size_t leaf_size_ = 12;
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
};

}  // namespace nimblereg
