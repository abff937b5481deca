#pragma once

#include <span>
#include <vector>

#include "nimblereg/geometry.hpp"
#include "nimblereg/kdtree.hpp"

namespace nimblereg {

/// Symmetric Chamfer distance with squared Euclidean distances, together
/// with the nearest-neighbour assignments used by its gradient.
struct ChamferResult {
  double value = 0.0;
  std::vector<std::size_t> nearest_in_q;  // for every p
  std::vector<std::size_t> nearest_in_p;  // for every q
};

/// Per-side sums are taken over sorted terms so the value depends only on the
/// point sets, not their order.
inline ChamferResult chamfer_detailed(std::span<const Vec3> p, std::span<const Vec3> q) {
  require(!p.empty() && !q.empty(), ErrorCode::InvalidArgument, "Chamfer distance of an empty point set");
  ChamferResult r;
  const KdTree tree_q(q), tree_p(p);
  std::vector<double> dp(p.size()), dq(q.size());
  r.nearest_in_q.resize(p.size());
  r.nearest_in_p.resize(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto hit = tree_q.nearest(p[i]);
    r.nearest_in_q[i] = hit.index;
    dp[i] = hit.sq_dist;
  }
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto hit = tree_p.nearest(q[j]);
    r.nearest_in_p[j] = hit.index;
    dq[j] = hit.sq_dist;
  }
  r.value = order_free_sum(std::move(dp)) / static_cast<double>(p.size()) +
            order_free_sum(std::move(dq)) / static_cast<double>(q.size());
  return r;
}

inline double chamfer(std::span<const Vec3> p, std::span<const Vec3> q) { return chamfer_detailed(p, q).value; }

/// Gradient of upstream * chamfer(p, q) with respect to p, holding the
/// nearest-neighbour assignments fixed.
inline PointCloud chamfer_backward(std::span<const Vec3> p, std::span<const Vec3> q, const ChamferResult& fwd,
                                   double upstream = 1.0) {
  require(fwd.nearest_in_q.size() == p.size() && fwd.nearest_in_p.size() == q.size(), ErrorCode::ShapeMismatch,
          "Chamfer assignments do not match the point sets");
  PointCloud grad(p.size(), Vec3::Zero());
  const double sp = 2.0 * upstream / static_cast<double>(p.size());
  const double sq = 2.0 * upstream / static_cast<double>(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) grad[i] += sp * (p[i] - q[fwd.nearest_in_q[i]]);
  for (std::size_t j = 0; j < q.size(); ++j) {
    const std::size_t k = fwd.nearest_in_p[j];
    grad[k] += sq * (p[k] - q[j]);
  }
  return grad;
}

inline PointCloud chamfer_backward(std::span<const Vec3> p, std::span<const Vec3> q, double upstream = 1.0) {
  return chamfer_backward(p, q, chamfer_detailed(p, q), upstream);
}

/// Velocity-smoothness penalty over mesh simplices:
///   (1/|s|) sum_k sum_{i != j in s_k} |v_i - v_j|^2 / |p_i - p_j|^2
/// with every unordered pair counted twice. Optionally returns d/dv.
inline double simplex_regularizer(std::span<const Vec3> points, std::span<const Triangle> simplices,
                                  std::span<const Vec3> velocities, PointCloud* grad_v = nullptr) {
  require(points.size() == velocities.size(), ErrorCode::ShapeMismatch,
          "regularizer: point/velocity count mismatch");
  require(!simplices.empty(), ErrorCode::InvalidArgument, "regularizer needs at least one simplex");
  if (grad_v) grad_v->assign(points.size(), Vec3::Zero());
  const double inv_s = 1.0 / static_cast<double>(simplices.size());
  double total = 0.0;
  for (const Triangle& t : simplices) {
    for (int a = 0; a < 3; ++a) {
      const int i = t[a], j = t[(a + 1) % 3];
      require(i >= 0 && j >= 0 && static_cast<std::size_t>(std::max(i, j)) < points.size(),
              ErrorCode::ShapeMismatch, "regularizer: simplex index out of range");
      const double d2 = squared_distance(points[i], points[j]);
      require(d2 > 0.0, ErrorCode::DegenerateGeometry, "regularizer: zero-length simplex edge");
      const Vec3 dv = velocities[i] - velocities[j];
      total += 2.0 * dv.squaredNorm() / d2;
      if (grad_v) {
        (*grad_v)[i] += (4.0 * inv_s / d2) * dv;
        (*grad_v)[j] -= (4.0 * inv_s / d2) * dv;
      }
    }
  }
  return total * inv_s;
}

}  // namespace nimblereg
