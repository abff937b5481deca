#pragma once

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <map>
#include <span>

#include "nimblereg/geometry.hpp"
#include "nimblereg/transform.hpp"

namespace nimblereg {

/// Per-region centroids in normalized coordinates with their support sizes.
struct CentroidSet {
  std::map<Label, Vec3> centroid;
  std::map<Label, std::size_t> count;

  std::size_t size() const { return centroid.size(); }
};

/// Mean voxel center of every non-background label, normalized through `box`.
inline CentroidSet centroids(const LabelVolume& vol, const DomainBox& box) {
  vol.validate();
  std::map<Label, Vec3> sum;
  CentroidSet out;
  for (int k = 0; k < vol.dims[2]; ++k)
    for (int j = 0; j < vol.dims[1]; ++j)
      for (int i = 0; i < vol.dims[0]; ++i) {
        const Label l = vol.at(i, j, k);
        if (l == 0) continue;
        auto [it, fresh] = sum.try_emplace(l, Vec3::Zero());
        it->second += vol.voxel_center(i, j, k);
        ++out.count[l];
      }
  require(!sum.empty(), ErrorCode::EmptyRegion, "volume has no labelled region");
  for (const auto& [l, s] : sum) out.centroid[l] = box.normalize(s / static_cast<double>(out.count[l]));
  return out;
}

/// Mean of the simplex-carrying points of each surface.
inline CentroidSet centroids(std::span<const RegionSurface> surfaces) {
  CentroidSet out;
  for (const RegionSurface& s : surfaces) {
    const std::size_t n = std::min(s.core_count, s.points.size());
    if (n == 0) {
      spdlog::warn("region {} has no points; omitted from centroids", s.region);
      continue;
    }
    Vec3 sum = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) sum += s.points[i];
    out.centroid[s.region] = sum / static_cast<double>(n);
    out.count[s.region] = n;
  }
  require(out.size() > 0, ErrorCode::EmptyRegion, "no non-empty region surface");
  return out;
}

/// Silverman's rule of thumb in three dimensions:
/// (4 / (d + 2))^(1 / (d + 4)) * n^(-1 / (d + 4)) * sigma_hat, where sigma_hat
/// is the root mean of the per-axis sample variances.
inline double silverman_bandwidth(std::span<const Vec3> points) {
  require(points.size() >= 2, ErrorCode::InvalidArgument, "Silverman bandwidth needs at least 2 points");
  const double n = static_cast<double>(points.size());
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : points) mean += p;
  mean /= n;
  Vec3 var = Vec3::Zero();
  for (const Vec3& p : points) var += (p - mean).cwiseAbs2();
  var /= (n - 1.0);
  const double sigma_hat = std::sqrt(var.mean());
  require(sigma_hat > 0.0, ErrorCode::DegenerateGeometry, "Silverman bandwidth: all points coincide");
  constexpr double d = 3.0;
  return std::pow(4.0 / (d + 2.0), 1.0 / (d + 4.0)) * std::pow(n, -1.0 / (d + 4.0)) * sigma_hat;
}

inline std::vector<Label> shared_regions(const CentroidSet& a, const CentroidSet& b) {
  std::vector<Label> out;
  for (const auto& [l, c] : a.centroid)
    if (b.centroid.count(l)) out.push_back(l);
  return out;
}

/// Weighted least-squares affine taking moving centroids onto reference
/// centroids (weights: smaller of the two region sizes), as a matrix log.
inline AffineLog fit_affine(const CentroidSet& moving, const CentroidSet& reference) {
  const auto regions = shared_regions(moving, reference);
  require(regions.size() >= 4, ErrorCode::RankDeficient,
          "affine fit needs at least 4 shared regions, got " + std::to_string(regions.size()));
  const Eigen::Index n = static_cast<Eigen::Index>(regions.size());
  Eigen::MatrixXd design(n, 4), target(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Label l = regions[static_cast<std::size_t>(r)];
    const double w = std::sqrt(static_cast<double>(
        std::max<std::size_t>(1, std::min(moving.count.at(l), reference.count.at(l)))));
    design.row(r) << w * moving.centroid.at(l).transpose(), w;
    target.row(r) = w * reference.centroid.at(l).transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  require(qr.rank() == 4, ErrorCode::RankDeficient, "centroids are coplanar; affine fit is rank-deficient");
  const Eigen::MatrixXd x = qr.solve(target);  // 4 x 3
  Mat4 a = Mat4::Identity();
  a.topLeftCorner<3, 3>() = x.topRows(3).transpose();
  a.topRightCorner<3, 1>() = x.row(3).transpose();
  return affine_log(a);
}

/// Per-region translation residuals left by `affine`, as an SVF attached to
/// the affinely mapped moving centroids.
inline SvfSample polyaffine_residuals(const CentroidSet& moving, const CentroidSet& reference,
                                      const AffineLog& affine, double sigma, double epsilon = 1e-8) {
  const Mat4 m = affine.matrix();
  SvfSample s;
  s.sigma = sigma;
  s.epsilon = epsilon;
  for (Label l : shared_regions(moving, reference)) {
    const Vec3 mapped = m.topLeftCorner<3, 3>() * moving.centroid.at(l) + m.topRightCorner<3, 1>();
    s.control_points.push_back(mapped);
    s.velocities.push_back(reference.centroid.at(l) - mapped);
  }
  s.validate();
  return s;
}

struct PrealignOptions {
  std::optional<double> sigma;  // default: Silverman over the reference centroids
  int steps = 12;
};

/// Centroid-driven polyaffine initialization: [affine, residual SVF].
inline TransformChain prealign_chain(const CentroidSet& moving, const CentroidSet& reference,
                                     const PrealignOptions& opt = {}) {
  const AffineLog affine = fit_affine(moving, reference);
  double sigma = 0.0;
  if (opt.sigma) {
    sigma = *opt.sigma;
  } else {
    PointCloud ref;
    for (Label l : shared_regions(moving, reference)) ref.push_back(reference.centroid.at(l));
    sigma = silverman_bandwidth(ref);
  }
  TransformChain chain;
  chain.tag = "prealign";
  chain.terms.emplace_back(affine);
  chain.terms.emplace_back(SvfTerm{polyaffine_residuals(moving, reference, affine, sigma), 1.0, opt.steps});
  return chain;
}

}  // namespace nimblereg
