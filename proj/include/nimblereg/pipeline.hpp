#pragma once

#include <spdlog/spdlog.h>

#include <map>
#include <set>
#include <string>

#include "nimblereg/decimate.hpp"
#include "nimblereg/geometry.hpp"
#include "nimblereg/model.hpp"
#include "nimblereg/prealign.hpp"
#include "nimblereg/training.hpp"

namespace nimblereg {

struct PipelineOptions {
  SurfaceTargets targets;
  SmoothOptions smoothing;
  PrealignOptions prealign;
  std::set<Label> skip;  // labels ignored besides background
  std::uint64_t seed = 0;

  static PipelineOptions from(const TrainConfig& cfg, std::uint64_t seed = 0) {
    PipelineOptions o;
    o.targets = {static_cast<std::size_t>(cfg.points), static_cast<std::size_t>(cfg.simplices)};
    o.seed = seed;
    return o;
  }
};

/// A subject ready for training or registration.
struct PreparedSubject {
  std::string id;
  TransformChain prealign;        // subject -> template, normalized coordinates
  std::map<Label, Mesh> meshes;   // smoothed full-resolution surfaces, normalized, before prealignment
  SubjectSurfaces surfaces;       // prealigned fixed-size surfaces
  std::size_t clamped = 0;        // coordinates pushed back into the unit cube
};

inline CentroidSet region_centroids(const LabelVolume& vol, const DomainBox& box, const std::set<Label>& skip) {
  CentroidSet c = centroids(vol, box);
  for (Label l : skip) {
    c.centroid.erase(l);
    c.count.erase(l);
  }
  return c;
}

/// Stitched and smoothed multi-region mesh of every kept label, in normalized
/// coordinates.
inline Mesh stitched_surface(const LabelVolume& vol, const DomainBox& box, const PipelineOptions& opt) {
  std::vector<Mesh> parts;
  for (Label l : vol.labels())
    if (l != 0 && !opt.skip.count(l)) parts.push_back(extract_region_surface(vol, l));
  require(!parts.empty(), ErrorCode::EmptyRegion, "volume has no region to extract");
  Mesh merged = merge_and_stitch(parts);
  merged = smooth(merged, opt.smoothing);
  for (Vec3& p : merged.points) p = box.normalize(p);
  return merged;
}

/// Surface extraction, prealignment onto the template centroids, then
/// decimation to fixed-size region surfaces.
inline PreparedSubject prepare_subject(const LabelVolume& vol, const CentroidSet& template_centroids,
                                       const DomainBox& box, const PipelineOptions& opt, std::string id = {}) {
  PreparedSubject out;
  out.id = std::move(id);
  out.surfaces.id = out.id;
  Mesh merged = stitched_surface(vol, box, opt);
  for (auto& [label, mesh] : split_by_region(merged)) out.meshes.emplace(label, std::move(mesh));

  out.prealign = prealign_chain(region_centroids(vol, box, opt.skip), template_centroids, opt.prealign);
  out.prealign.domain = box;
  merged.points = apply_chain(out.prealign, merged.points);
  for (const auto& [label, mesh] : split_by_region(merged)) {
    std::size_t clamped = 0;
    out.surfaces.regions.emplace(label, decimate_and_fix_counts(mesh, label, opt.targets,
                                                                derive_seed(opt.seed, static_cast<std::uint64_t>(label)),
                                                                DomainBox{}, &clamped));
    out.clamped += clamped;
  }
  if (out.clamped > 0)
    spdlog::warn("subject {}: {} prealigned coordinates clamped into the unit cube", out.id, out.clamped);
  return out;
}

struct RegionFit {
  Label region = 0;
  double before = 0.0;  // squared Chamfer of prealigned surfaces
  double after = 0.0;   // same after the fused field
};

struct Registration {
  TransformChain chain;  // moving -> reference
  SvfSample field;       // fused per-region velocities
  std::vector<RegionFit> fits;
  double min_jacobian = std::numeric_limits<double>::quiet_NaN();
};

struct RegisterOptions {
  int probe = 32;  // Jacobian probe grid; 0 disables the check
  Evaluation probe_mode = Evaluation::Exact;
};

/// Per-region velocities from the model, fused into one field and composed as
/// [moving prealignment, field, inverse reference prealignment].
inline Registration register_pair(const PreparedSubject& moving, const PreparedSubject& reference,
                                  const ModelParams& params, const TrainConfig& cfg, const RegisterOptions& opt = {}) {
  std::vector<SvfSample> parts;
  std::vector<Label> used;
  for (const auto& [label, p] : moving.surfaces.regions) {
    auto it = reference.surfaces.regions.find(label);
    if (it == reference.surfaces.regions.end()) {
      spdlog::warn("region {} is missing from the reference; skipped", label);
      continue;
    }
    const PointCloud v = forward(params, p.points, it->second.points).velocities;
    parts.push_back({p.points, v, cfg.sigma, cfg.epsilon});
    used.push_back(label);
  }
  for (const auto& [label, q] : reference.surfaces.regions)
    if (!moving.surfaces.regions.count(label)) spdlog::warn("region {} is missing from the moving subject; skipped", label);
  require(!parts.empty(), ErrorCode::EmptyRegion, "moving and reference share no region");

  Registration out;
  out.field = fuse_regions(parts);
  for (Label label : used) {
    const RegionSurface& p = moving.surfaces.regions.at(label);
    const RegionSurface& q = reference.surfaces.regions.at(label);
    const PointCloud moved = exp_svf(out.field, p.points, cfg.steps);
    out.fits.push_back({label, chamfer(p.points, q.points), chamfer(moved, q.points)});
  }

  out.chain.tag = "register";
  out.chain.domain = moving.prealign.domain;
  out.chain.append(moving.prealign);
  out.chain.terms.emplace_back(SvfTerm{out.field, 1.0, cfg.steps});
  out.chain.append(invert(reference.prealign));
  if (opt.probe > 0) {
    const std::vector<double> det = jacobian_determinant(out.chain, GridSpec::cube(opt.probe), opt.probe_mode);
    out.min_jacobian = *std::min_element(det.begin(), det.end());
    if (!(out.min_jacobian > 0.0))
      spdlog::warn("registration {} -> {} folds space: minimum Jacobian determinant {}", moving.id, reference.id,
                   out.min_jacobian);
  }
  return out;
}

/// Chain from prealignment alone, the baseline the learned field refines.
inline TransformChain prealign_only(const PreparedSubject& moving, const PreparedSubject& reference) {
  TransformChain chain;
  chain.tag = "prealign-pair";
  chain.domain = moving.prealign.domain;
  chain.append(moving.prealign);
  chain.append(invert(reference.prealign));
  return chain;
}

/// Resamples `moving` on the grid of `grid` by backward mapping: the inverse
/// chain is evaluated at every output voxel center and the moving label is
/// read with nearest-neighbour lookup; outside the moving grid is background.
inline LabelVolume warp_labels(const LabelVolume& moving, const TransformChain& chain, const LabelVolume& grid,
                               Evaluation mode = Evaluation::Exact) {
  moving.validate();
  require(chain.domain.has_value(), ErrorCode::InvalidArgument, "warping needs a chain with a world domain");
  const DomainBox& box = *chain.domain;
  LabelVolume out(grid.dims, grid.spacing, grid.origin);
  PointCloud centers;
  centers.reserve(out.voxel_count());
  for (int k = 0; k < out.dims[2]; ++k)
    for (int j = 0; j < out.dims[1]; ++j)
      for (int i = 0; i < out.dims[0]; ++i) centers.push_back(box.normalize(out.voxel_center(i, j, k)));
  const PointCloud src = apply_chain(invert(chain), centers, mode);
  for (std::size_t v = 0; v < src.size(); ++v) {
    const Vec3 ijk = (box.denormalize(src[v]) - moving.origin).cwiseQuotient(moving.spacing);
    const int i = static_cast<int>(std::lround(ijk.x())), j = static_cast<int>(std::lround(ijk.y())),
              k = static_cast<int>(std::lround(ijk.z()));
    out.data[v] = moving.contains(i, j, k) ? moving.at(i, j, k) : 0;
  }
  return out;
}

/// Maps a world-space mesh through a chain with a world domain.
inline Mesh warp_mesh(const Mesh& mesh, const TransformChain& chain, Evaluation mode = Evaluation::Exact) {
  require(chain.domain.has_value(), ErrorCode::InvalidArgument, "warping needs a chain with a world domain");
  PointCloud unit;
  for (const Vec3& p : mesh.points) unit.push_back(chain.domain->normalize(p));
  Mesh out = mesh;
  const PointCloud mapped = apply_chain(chain, unit, mode);
  for (std::size_t i = 0; i < mapped.size(); ++i) out.points[i] = chain.domain->denormalize(mapped[i]);
  return out;
}

/// Seeded ordered pairs of distinct subjects drawn from `pool`.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_subject_pairs(std::span<const std::size_t> pool,
                                                                             std::size_t count, std::uint64_t seed) {
  require(pool.size() >= 2, ErrorCode::InvalidArgument, "pair sampling needs at least 2 subjects");
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  while (out.size() < count) {
    const std::size_t a = pool[rng.index(pool.size())];
    const std::size_t b = pool[rng.index(pool.size())];
    if (a != b) out.emplace_back(a, b);
  }
  return out;
}

/// Training/validation split by subject: the last val_fraction of the
/// subjects (at least 2) are held out.
inline Dataset make_dataset(std::vector<PreparedSubject> subjects, const TrainConfig& cfg) {
  const std::size_t n = subjects.size();
  const std::size_t n_val = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(cfg.val_fraction * n)));
  require(n >= n_val + 2, ErrorCode::InvalidArgument,
          "need at least " + std::to_string(n_val + 2) + " subjects, got " + std::to_string(n));
  Dataset d;
  std::vector<std::size_t> train_pool, val_pool;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n - n_val ? train_pool : val_pool).push_back(i);
    d.subjects.push_back(std::move(subjects[i].surfaces));
  }
  d.train_pairs = sample_subject_pairs(train_pool, static_cast<std::size_t>(cfg.train_pairs), derive_seed(cfg.seed, 1));
  d.val_pairs = sample_subject_pairs(val_pool, static_cast<std::size_t>(cfg.val_pairs), derive_seed(cfg.seed, 2));
  return d;
}

}  // namespace nimblereg
