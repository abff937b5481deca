#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "nimblereg/geometry.hpp"
#include "nimblereg/transform.hpp"

namespace nimblereg {

/// Parameters of the synthetic phantom family. Lengths are in normalized
/// units of the template box unless noted.
struct SyntheticSpec {
  int dims = 64;
  double spacing = 1.0;  // mm
  int regions = 6;       // core, shell, then regions - 2 parcels of the outer shell
  double magnitude = 0.12;
  double bandwidth = 0.08;
  int controls_per_axis = 5;
  double affine_jitter = 0.04;
  int steps = 12;
  std::uint64_t template_seed = 0;
  int probe = 32;  // Jacobian probe grid
  int max_attempts = 20;

  void validate() const {
    require(dims >= 8 && spacing > 0.0, ErrorCode::InvalidArgument, "synthetic grid is too small");
    require(regions >= 2, ErrorCode::InvalidArgument, "synthetic phantom needs at least 2 regions");
    require(magnitude >= 0.0 && bandwidth > 0.0 && affine_jitter >= 0.0 && affine_jitter < 0.5,
            ErrorCode::InvalidArgument, "synthetic deformation parameters out of range");
    require(magnitude / steps < bandwidth, ErrorCode::InvalidArgument,
            "synthetic step displacement must stay below the bandwidth");
    require(controls_per_axis >= 1 && steps >= 1 && probe >= 2 && max_attempts >= 1, ErrorCode::InvalidArgument,
            "synthetic sampling parameters out of range");
  }
};

/// Analytic label field of the template in normalized coordinates.
class PhantomTemplate {
 public:
  explicit PhantomTemplate(const SyntheticSpec& spec) : regions_(spec.regions) {
    spec.validate();
    Rng rng(derive_seed(spec.template_seed, 0x7e3a));
    const int parcels = std::max(0, regions_ - 2);
    // Fibonacci directions under a random rotation, one per parcel
    const Mat3 rot = Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI),
                                       Vec3(rng.normal(), rng.normal(), rng.normal()).normalized())
                         .toRotationMatrix();
    for (int p = 0; p < parcels; ++p) {
      const double z = 1.0 - (2.0 * p + 1.0) / parcels;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = p * M_PI * (3.0 - std::sqrt(5.0));
      directions_.push_back(rot * Vec3(r * std::cos(phi), r * std::sin(phi), z));
      for (int t = 0; t < 3; ++t) {
        waves_.push_back({Vec3(rng.normal(), rng.normal(), rng.normal()) * 2.0, rng.uniform(0, 2 * M_PI),
                          rng.uniform(0.05, 0.12)});
      }
    }
  }

  Label label_at(const Vec3& u) const {
    const Vec3 r = u - Vec3::Constant(0.5);
    if (inside(r, Vec3(0.15, 0.12, 0.10))) return 1;
    if (inside(r, Vec3(0.24, 0.20, 0.17))) return 2;
    if (directions_.empty() || !inside(r, Vec3(0.36, 0.31, 0.27))) return 0;
    const Vec3 dir = r.norm() > 0 ? Vec3(r.normalized()) : Vec3::UnitX();
    int best = 0;
    double best_score = -1e300;
    for (std::size_t p = 0; p < directions_.size(); ++p) {
      double score = directions_[p].dot(dir);
      for (int t = 0; t < 3; ++t) {
        const Wave& w = waves_[3 * p + t];
        score += w.amplitude * std::sin(w.frequency.dot(dir) + w.phase);
      }
      if (score > best_score) best_score = score, best = static_cast<int>(p);
    }
    return 3 + best;
  }

 private:
  struct Wave {
    Vec3 frequency;
    double phase;
    double amplitude;
  };

  static bool inside(const Vec3& r, const Vec3& axes) { return r.cwiseQuotient(axes).squaredNorm() <= 1.0; }

  int regions_;
  std::vector<Vec3> directions_;
  std::vector<Wave> waves_;
};

inline LabelVolume empty_grid(const SyntheticSpec& spec) {
  return LabelVolume({spec.dims, spec.dims, spec.dims}, Vec3::Constant(spec.spacing), Vec3::Zero());
}

/// Fills `vol` with template labels looked up at the images of its voxel
/// centers under `to_template` (normalized coordinates of `box`).
inline void sample_template(const PhantomTemplate& tmpl, const TransformChain& to_template, const DomainBox& box,
                            LabelVolume& vol) {
  PointCloud centers;
  centers.reserve(vol.voxel_count());
  for (int k = 0; k < vol.dims[2]; ++k)
    for (int j = 0; j < vol.dims[1]; ++j)
      for (int i = 0; i < vol.dims[0]; ++i) centers.push_back(box.normalize(vol.voxel_center(i, j, k)));
  const PointCloud src = to_template.terms.empty() ? centers : apply_chain(to_template, centers);
  for (std::size_t v = 0; v < src.size(); ++v) vol.data[v] = tmpl.label_at(src[v]);
}

inline LabelVolume make_template(const SyntheticSpec& spec) {
  LabelVolume vol = empty_grid(spec);
  sample_template(PhantomTemplate(spec), TransformChain{}, vol.bounds(), vol);
  return vol;
}

struct SyntheticSubject {
  LabelVolume volume;
  TransformChain truth;  // template -> subject point mapping, normalized coordinates
  int attempts = 0;
  double min_jacobian = 0.0;
};

/// Random small affine about the box center followed by a random smooth SVF.
inline TransformChain random_deformation(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const double j = spec.affine_jitter;
  TransformChain chain;
  chain.tag = "synthetic-truth";
  if (j > 0.0) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Mat3 m = Eigen::AngleAxisd(rng.uniform(-j, j), axis).toRotationMatrix() *
                   Vec3(1 + rng.uniform(-j, j), 1 + rng.uniform(-j, j), 1 + rng.uniform(-j, j)).asDiagonal();
    const Vec3 c = Vec3::Constant(0.5);
    const Vec3 t(rng.uniform(-j, j) / 2, rng.uniform(-j, j) / 2, rng.uniform(-j, j) / 2);
    Mat4 a = Mat4::Identity();
    a.topLeftCorner<3, 3>() = m;
    a.topRightCorner<3, 1>() = c - m * c + t;
    chain.terms.emplace_back(affine_log(a));
  }
  if (spec.magnitude > 0.0) {
    SvfSample s;
    s.sigma = spec.bandwidth;
    const int n = spec.controls_per_axis;
    const double step = n > 1 ? 0.6 / (n - 1) : 0.0;
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const Vec3 base = n > 1 ? Vec3(0.2 + step * x, 0.2 + step * y, 0.2 + step * z) : Vec3::Constant(0.5);
          s.control_points.push_back(base + Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) * step / 4);
          Vec3 v(rng.normal(), rng.normal(), rng.normal());
          v *= spec.magnitude / std::sqrt(3.0);
          if (v.norm() > spec.magnitude) v *= spec.magnitude / v.norm();
          s.velocities.push_back(v);
        }
    chain.terms.emplace_back(SvfTerm{std::move(s), 1.0, spec.steps});
  }
  return chain;
}

/// Template warped by a seeded random chain whose Jacobian is positive on the
/// probe grid; failing draws are resampled.
inline SyntheticSubject synth_subject(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const PhantomTemplate tmpl(spec);
  SyntheticSubject out;
  out.volume = empty_grid(spec);
  const DomainBox box = out.volume.bounds();
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    TransformChain truth = random_deformation(spec, derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    truth.domain = box;
    const std::vector<double> det = jacobian_determinant(truth, GridSpec::cube(spec.probe));
    const double lowest = *std::min_element(det.begin(), det.end());
    if (!(lowest > 0.0)) continue;
    out.truth = std::move(truth);
    out.attempts = attempt + 1;
    out.min_jacobian = lowest;
    sample_template(tmpl, invert(out.truth), box, out.volume);
    return out;
  }
  throw Error(ErrorCode::DegenerateGeometry, "no diffeomorphic synthetic deformation after " +
                                                 std::to_string(spec.max_attempts) + " attempts");
}

/// Ground-truth images in subject b of points given in subject a.
inline PointCloud ground_truth_map(const TransformChain& truth_a, const TransformChain& truth_b,
                                   std::span<const Vec3> points) {
  return apply_chain(truth_b, apply_chain(invert(truth_a), points));
}

}  // namespace nimblereg
