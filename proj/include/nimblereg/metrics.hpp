#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nimblereg/geometry.hpp"
#include "nimblereg/kdtree.hpp"

namespace nimblereg {

/// Intersection over union of the voxels carrying `label`.
inline double jaccard(const LabelVolume& a, const LabelVolume& b, Label label) {
  require(a.same_grid(b) && a.data.size() == b.data.size(), ErrorCode::ShapeMismatch,
          "Jaccard needs volumes on the same grid");
  std::size_t inter = 0, uni = 0;
  for (std::size_t v = 0; v < a.data.size(); ++v) {
    const bool x = a.data[v] == label, y = b.data[v] == label;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) {
    spdlog::warn("label {} is absent from both volumes; Jaccard taken as 1", label);
    return 1.0;
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

using InterfaceMap = std::map<std::pair<Label, Label>, PointCloud>;

/// Interfaces of region meshes sharing bitwise-equal vertices.
inline InterfaceMap mesh_interfaces(const std::map<Label, Mesh>& meshes) {
  std::vector<TaggedPoints> tagged;
  for (const auto& [label, m] : meshes) tagged.push_back({label, m.points});
  return extract_interfaces<TaggedPoints>(tagged);
}

struct InterfaceDistance {
  Label a = 0, b = 0;
  double mm = 0.0;
};

struct InterfaceReport {
  std::vector<InterfaceDistance> pairs;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
};

/// Mean nearest-neighbour distance from every point of `from` to `to`.
inline double mean_nearest_distance(std::span<const Vec3> from, std::span<const Vec3> to) {
  const KdTree tree(to);
  std::vector<double> d;
  d.reserve(from.size());
  for (const Vec3& p : from) d.push_back(std::sqrt(tree.nearest(p).sq_dist));
  return order_free_sum(std::move(d)) / static_cast<double>(from.size());
}

/// Symmetric non-squared Chamfer distance in world units between matching
/// interfaces; only region pairs adjacent on both sides are reported.
/// Inputs are normalized coordinates of `box`.
inline InterfaceReport interface_chamfer_report(const InterfaceMap& moved, const InterfaceMap& reference,
                                                const DomainBox& box) {
  InterfaceReport r;
  auto world = [&](const PointCloud& pts) {
    PointCloud out;
    out.reserve(pts.size());
    for (const Vec3& p : pts) out.push_back(box.denormalize(p));
    return out;
  };
  for (const auto& [key, pm] : moved) {
    auto it = reference.find(key);
    if (it == reference.end() || pm.empty() || it->second.empty()) continue;
    const PointCloud a = world(pm), b = world(it->second);
    r.pairs.push_back({key.first, key.second, 0.5 * (mean_nearest_distance(a, b) + mean_nearest_distance(b, a))});
  }
  if (r.pairs.empty()) {
    spdlog::warn("no region pair is adjacent in both the moved and the reference surfaces");
    return r;
  }
  std::vector<double> d;
  for (const auto& p : r.pairs) d.push_back(p.mm);
  std::sort(d.begin(), d.end());
  r.mean = order_free_sum(d) / static_cast<double>(d.size());
  const std::size_t h = d.size() / 2;
  r.median = d.size() % 2 ? d[h] : 0.5 * (d[h - 1] + d[h]);
  return r;
}

/// Per-point world-space distances between mapped points and their known
/// correspondences, both in normalized coordinates of `box`.
inline std::vector<double> target_registration_errors(std::span<const Vec3> mapped, std::span<const Vec3> truth,
                                                      const DomainBox& box) {
  require(mapped.size() == truth.size(), ErrorCode::ShapeMismatch, "TRE needs one truth point per mapped point");
  std::vector<double> out;
  out.reserve(mapped.size());
  for (std::size_t i = 0; i < mapped.size(); ++i)
    out.push_back((box.denormalize(mapped[i]) - box.denormalize(truth[i])).norm());
  return out;
}

inline double mean(std::span<const double> v) {
  require(!v.empty(), ErrorCode::InvalidArgument, "mean of an empty sequence");
  return order_free_sum(std::vector<double>(v.begin(), v.end())) / static_cast<double>(v.size());
}

namespace memory {

/// Process peak resident set size in bytes (VmHWM), if the platform exposes it.
inline std::optional<std::size_t> peak_bytes() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::stoull(line.substr(6)) * 1024;
  return std::nullopt;
}

/// Restarts peak tracking from the current resident size. Returns false if
/// the platform does not support it.
inline bool reset_peak() {
  std::ofstream out("/proc/self/clear_refs");
  if (!out) return false;
  out << "5";
  out.flush();
  return static_cast<bool>(out);
}

struct PhaseReport {
  std::string phase;
  std::optional<std::size_t> peak;

  std::string text() const { return peak ? std::to_string(*peak) : std::string("unavailable"); }
};

/// Runs `fn` and reports the peak resident memory reached while it ran.
template <class F>
PhaseReport measure(const std::string& phase, F&& fn) {
  const bool tracked = reset_peak();
  fn();
  return {phase, tracked ? peak_bytes() : std::nullopt};
}

}  // namespace memory
}  // namespace nimblereg
