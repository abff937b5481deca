#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nimblereg/kdtree.hpp"
#include "nimblereg/types.hpp"

namespace nimblereg {

/// Sparse velocity samples defining a smooth stationary velocity field by
/// normalized Gaussian convolution:
///
///   V(x) = sum_i K(|x - p_i|) v_i / (epsilon + sum_i K(|x - p_i|)),
///   K(r) = exp(-r^2 / (2 sigma^2)).
struct SvfSample {
  PointCloud control_points;
  PointCloud velocities;
  double sigma = 1e-2;
  double epsilon = 1e-8;

  std::size_t size() const { return control_points.size(); }

  void validate() const {
    require(!control_points.empty(), ErrorCode::InvalidArgument, "SVF needs at least one control point");
    require(control_points.size() == velocities.size(), ErrorCode::ShapeMismatch,
            "SVF control/velocity count mismatch");
    require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::InvalidArgument, "SVF sigma must be positive");
    require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::InvalidArgument, "SVF epsilon must be positive");
    for (std::size_t i = 0; i < size(); ++i)
      require(is_finite(control_points[i]) && is_finite(velocities[i]), ErrorCode::NonFinite,
              "SVF sample " + std::to_string(i) + " is not finite");
  }
};

enum class Evaluation {
  Exact,  // every control contributes
  Tree,   // controls beyond 4 sigma are skipped (inference-only approximation)
};

inline constexpr double kTreeCutoffSigmas = 4.0;

namespace detail {

inline bool sample_less(const Vec3& pa, const Vec3& va, const Vec3& pb, const Vec3& vb) {
  if (lex_less(pa, pb)) return true;
  if (lex_less(pb, pa)) return false;
  return lex_less(va, vb);
}

/// Control coordinates laid out for SIMD weight evaluation. Every weight goes
/// through the same packet exp whatever its slot, so a weight depends only on
/// the control and the query.
class KernelTable {
 public:
  using Packet = Eigen::internal::packet_traits<double>::type;
  static constexpr std::size_t kLanes = Eigen::internal::packet_traits<double>::size;

  KernelTable() = default;
  explicit KernelTable(double inv_two_sigma2) : scale_(-inv_two_sigma2) {}

  void assign(std::span<const Vec3> points) {
    clear();
    for (const Vec3& p : points) push_back(p);
  }
  void clear() {
    x_.clear();
    y_.clear();
    z_.clear();
    size_ = 0;
  }
  void push_back(const Vec3& p) {
    x_.resize(padded(size_ + 1), 0.0);
    y_.resize(x_.size(), 0.0);
    z_.resize(x_.size(), 0.0);
    x_[size_] = p.x();
    y_[size_] = p.y();
    z_[size_] = p.z();
    ++size_;
  }
  std::size_t size() const { return size_; }

  /// out[k] = exp(-|x - p_k|^2 / (2 sigma^2)); `out` needs padded(size()) slots.
  /// Weights below exp(kUnderflow) are stored as 0 (denormal arithmetic is very slow).
  void weights(const Vec3& x, double* out) const {
    using namespace Eigen::internal;
    const Packet qx = pset1<Packet>(x.x()), qy = pset1<Packet>(x.y()), qz = pset1<Packet>(x.z());
    const Packet scale = pset1<Packet>(scale_), floor = pset1<Packet>(kUnderflow);
    for (std::size_t k = 0; k < x_.size(); k += kLanes) {
      const Packet dx = psub(ploadu<Packet>(&x_[k]), qx);
      const Packet dy = psub(ploadu<Packet>(&y_[k]), qy);
      const Packet dz = psub(ploadu<Packet>(&z_[k]), qz);
      const Packet d2 = padd(padd(pmul(dx, dx), pmul(dy, dy)), pmul(dz, dz));
      const Packet a = pmul(d2, scale);
      pstoreu(out + k, pand(pexp(a), pcmp_le(floor, a)));
    }
  }

  static std::size_t padded(std::size_t n) { return (n + kLanes - 1) / kLanes * kLanes; }
  static constexpr double kUnderflow = -650.0;

 private:
  std::vector<double> x_, y_, z_;
  std::size_t size_ = 0;
  double scale_ = 0.0;
};

/// Controls reordered canonically (by position, then velocity). Summing in
/// this order makes evaluation independent of how the samples were listed.
struct CanonicalSvf {
  std::vector<std::size_t> order;  // canonical slot -> original index
  std::vector<std::size_t> rank;   // original index -> canonical slot
  PointCloud points, velocities;
  KernelTable table;
  double inv_two_sigma2 = 0.0;
  double epsilon = 0.0;
  double sigma = 0.0;

  explicit CanonicalSvf(const SvfSample& s) {
    s.validate();
    order.resize(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sample_less(s.control_points[a], s.velocities[a], s.control_points[b], s.velocities[b]);
    });
    rank.resize(s.size());
    points.reserve(s.size());
    velocities.reserve(s.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      rank[order[k]] = k;
      points.push_back(s.control_points[order[k]]);
      velocities.push_back(s.velocities[order[k]]);
    }
    sigma = s.sigma;
    epsilon = s.epsilon;
    inv_two_sigma2 = 1.0 / (2.0 * s.sigma * s.sigma);
    table = KernelTable(inv_two_sigma2);
    table.assign(points);
  }

  std::vector<double> weight_buffer() const { return std::vector<double>(KernelTable::padded(points.size())); }

  /// Field at x; `w` receives the kernel weights in canonical order.
  Vec3 eval_exact(const Vec3& x, std::vector<double>& w) const {
    table.weights(x, w.data());
    Vec3 num = Vec3::Zero();
    double den = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      num += w[k] * velocities[k];
      den += w[k];
    }
    return num / (epsilon + den);
  }
};

/// Tree-accelerated evaluator; neighbours are summed in canonical order.
class TreeSvf {
 public:
  explicit TreeSvf(const CanonicalSvf& c) : c_(c), tree_(c.points), near_(c.inv_two_sigma2) {}

  Vec3 eval(const Vec3& x) const {
    hits_.clear();
    tree_.radius_search(x, kTreeCutoffSigmas * c_.sigma, hits_);
    std::sort(hits_.begin(), hits_.end());  // tree indexes canonical slots
    near_.clear();
    for (std::size_t k : hits_) near_.push_back(c_.points[k]);
    w_.resize(KernelTable::padded(hits_.size()));
    near_.weights(x, w_.data());
    Vec3 num = Vec3::Zero();
    double den = 0.0;
    for (std::size_t h = 0; h < hits_.size(); ++h) {
      num += w_[h] * c_.velocities[hits_[h]];
      den += w_[h];
    }
    return num / (c_.epsilon + den);
  }

 private:
  const CanonicalSvf& c_;
  KdTree tree_;
  mutable KernelTable near_;
  mutable std::vector<std::size_t> hits_;
  mutable std::vector<double> w_;
};

}  // namespace detail

inline PointCloud eval_velocity(const SvfSample& svf, std::span<const Vec3> queries,
                                Evaluation mode = Evaluation::Exact) {
  const detail::CanonicalSvf c(svf);
  PointCloud out(queries.size());
  if (mode == Evaluation::Exact) {
    std::vector<double> w = c.weight_buffer();
    for (std::size_t m = 0; m < queries.size(); ++m) out[m] = c.eval_exact(queries[m], w);
  } else {
    const detail::TreeSvf tree(c);
    for (std::size_t m = 0; m < queries.size(); ++m) out[m] = tree.eval(queries[m]);
  }
  return out;
}

/// Forward-Euler flow of the field for unit time: x <- x + V(x) / steps.
inline PointCloud exp_svf(const SvfSample& svf, std::span<const Vec3> queries, int steps = 12,
                          Evaluation mode = Evaluation::Exact) {
  require(steps >= 1, ErrorCode::InvalidArgument, "integration needs at least one step");
  const detail::CanonicalSvf c(svf);
  std::optional<detail::TreeSvf> tree;
  if (mode == Evaluation::Tree) tree.emplace(c);
  const double h = 1.0 / steps;
  std::vector<double> w = c.weight_buffer();
  PointCloud x(queries.begin(), queries.end());
  for (int s = 0; s < steps; ++s) {
    for (Vec3& p : x) {
      p += h * (tree ? tree->eval(p) : c.eval_exact(p, w));
      require(is_finite(p), ErrorCode::NonFinite, "non-finite position at integration step " + std::to_string(s));
    }
  }
  return x;
}

/// Reverse-mode derivative of exp_svf() with respect to the velocities.
/// `upstream` holds dL/d(output) per query; the result holds dL/dv_i in the
/// caller's control order. Kernel weights are differentiated through the
/// moving positions at every step.
inline PointCloud exp_svf_backward(const SvfSample& svf, std::span<const Vec3> queries, int steps,
                                   std::span<const Vec3> upstream) {
  require(steps >= 1, ErrorCode::InvalidArgument, "integration needs at least one step");
  require(upstream.size() == queries.size(), ErrorCode::ShapeMismatch,
          "upstream gradient count does not match query count");
  const detail::CanonicalSvf c(svf);
  const std::size_t n = c.points.size(), m_count = queries.size();
  const double h = 1.0 / steps;
  const double inv_sigma2 = 1.0 / (c.sigma * c.sigma);

  std::vector<double> w = c.weight_buffer();
  std::vector<PointCloud> traj(static_cast<std::size_t>(steps));
  PointCloud x(queries.begin(), queries.end());
  for (int s = 0; s < steps; ++s) {
    traj[s] = x;
    for (Vec3& p : x) p += h * c.eval_exact(p, w);
  }

  PointCloud grad_v(n, Vec3::Zero());  // canonical order
  PointCloud g(upstream.begin(), upstream.end());
  for (int s = steps - 1; s >= 0; --s) {
    for (std::size_t m = 0; m < m_count; ++m) {
      const Vec3& xm = traj[s][m];
      c.table.weights(xm, w.data());
      Vec3 num = Vec3::Zero();
      double den = c.epsilon;
      for (std::size_t k = 0; k < n; ++k) {
        num += w[k] * c.velocities[k];
        den += w[k];
      }
      const Vec3 vel = num / den;
      const Vec3 gm = g[m];
      Vec3 jt_g = Vec3::Zero();
      for (std::size_t k = 0; k < n; ++k) {
        const double a = w[k] / den;
        grad_v[k] += (h * a) * gm;
        // dV/dx^T g = sum_k grad(w_k) ((v_k - V) . g) / den
        jt_g += (-a * inv_sigma2 * (c.velocities[k] - vel).dot(gm)) * (xm - c.points[k]);
      }
      g[m] = gm + h * jt_g;
    }
  }

  PointCloud out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = grad_v[c.rank[i]];
  return out;
}

inline SvfSample negate(SvfSample svf) {
  for (Vec3& v : svf.velocities) v = -v;
  return svf;
}

inline SvfSample scaled(SvfSample svf, double factor) {
  for (Vec3& v : svf.velocities) v *= factor;
  return svf;
}

/// Concatenates per-region samples into one field. Points shared by several
/// regions keep every velocity; the normalized convolution averages them.
inline SvfSample fuse_regions(std::span<const SvfSample> svfs) {
  require(!svfs.empty(), ErrorCode::InvalidArgument, "fuse_regions needs at least one field");
  SvfSample out;
  out.sigma = svfs[0].sigma;
  out.epsilon = svfs[0].epsilon;
  for (const SvfSample& s : svfs) {
    require(s.sigma == out.sigma && s.epsilon == out.epsilon, ErrorCode::BandwidthMismatch,
            "fused fields must share sigma and epsilon");
    out.control_points.insert(out.control_points.end(), s.control_points.begin(), s.control_points.end());
    out.velocities.insert(out.velocities.end(), s.velocities.begin(), s.velocities.end());
  }
  out.validate();
  return out;
}

/// First-order Baker-Campbell-Hausdorff approximation of log(exp(a) o exp(b)):
/// the union of both control sets, each carrying its own velocity plus the
/// other field evaluated there.
inline SvfSample bch_first_order(const SvfSample& a, const SvfSample& b) {
  require(a.sigma == b.sigma && a.epsilon == b.epsilon, ErrorCode::BandwidthMismatch,
          "BCH operands must share sigma and epsilon");
  const PointCloud b_at_a = eval_velocity(b, a.control_points);
  const PointCloud a_at_b = eval_velocity(a, b.control_points);
  SvfSample out;
  out.sigma = a.sigma;
  out.epsilon = a.epsilon;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.control_points.push_back(a.control_points[i]);
    out.velocities.push_back(a.velocities[i] + b_at_a[i]);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    out.control_points.push_back(b.control_points[j]);
    out.velocities.push_back(b.velocities[j] + a_at_b[j]);
  }
  return out;
}

}  // namespace nimblereg
