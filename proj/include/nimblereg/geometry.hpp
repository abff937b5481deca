#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nimblereg/marching_cubes.hpp"
#include "nimblereg/types.hpp"

namespace nimblereg {

using Label = std::int32_t;
using Triangle = std::array<int, 3>;

/// 3D integer label grid, x-fastest storage, label 0 is background.
struct LabelVolume {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();
  std::vector<Label> data;

  LabelVolume() = default;
  LabelVolume(std::array<int, 3> d, Vec3 sp = Vec3::Ones(), Vec3 org = Vec3::Zero())
      : dims(d), spacing(sp), origin(org),
        data(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0) {}

  std::size_t voxel_count() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
  }
  Label at(int i, int j, int k) const { return data[index(i, j, k)]; }
  Label& at(int i, int j, int k) { return data[index(i, j, k)]; }

  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }

  Vec3 voxel_center(int i, int j, int k) const {
    return origin + spacing.cwiseProduct(Vec3(i, j, k));
  }

  /// Box enclosing every voxel (voxel centers at half-spacing from the faces).
  DomainBox bounds() const {
    const Vec3 d(dims[0], dims[1], dims[2]);
    return {origin - 0.5 * spacing, origin + spacing.cwiseProduct(d - Vec3::Constant(0.5))};
  }

  bool same_grid(const LabelVolume& o) const {
    return dims == o.dims && spacing == o.spacing && origin == o.origin;
  }

  void validate() const {
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorCode::InvalidArgument,
            "label volume dims must be positive");
    require(spacing.minCoeff() > 0.0, ErrorCode::InvalidArgument, "label volume spacing must be positive");
    require(data.size() == voxel_count(), ErrorCode::ShapeMismatch, "label volume data size does not match dims");
    for (Label l : data) require(l >= 0, ErrorCode::InvalidArgument, "negative label in volume");
  }

  /// Distinct labels present, ascending.
  std::vector<Label> labels() const {
    std::set<Label> s(data.begin(), data.end());
    return {s.begin(), s.end()};
  }
};

/// Triangle mesh; face_region is either empty or one label per simplex.
struct Mesh {
  PointCloud points;
  std::vector<Triangle> simplices;
  std::vector<Label> face_region;
  bool clipped = false;  // surface was cut by the volume border

  std::size_t size() const { return points.size(); }

  void validate() const {
    const int n = static_cast<int>(points.size());
    for (const Triangle& t : simplices) {
      for (int i : t) require(i >= 0 && i < n, ErrorCode::ShapeMismatch, "simplex index out of range");
      require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], ErrorCode::DegenerateGeometry,
              "simplex with repeated vertex");
    }
    require(face_region.empty() || face_region.size() == simplices.size(), ErrorCode::ShapeMismatch,
            "face_region length does not match simplices");
  }
};

/// Fixed-size region surface in normalized coordinates.
///
/// The first `core_count` points carry the simplices; points after that are
/// random duplicates recorded in `duplicated_from` as (source, index) pairs.
struct RegionSurface {
  Label region = 0;
  PointCloud points;
  std::vector<Triangle> simplices;
  std::vector<std::pair<int, int>> duplicated_from;
  std::size_t core_count = 0;
  std::uint64_t seed = 0;

  void validate(std::size_t target_points, std::size_t target_simplices) const {
    require(points.size() == target_points, ErrorCode::ShapeMismatch, "region surface point count mismatch");
    require(simplices.size() == target_simplices, ErrorCode::ShapeMismatch,
            "region surface simplex count mismatch");
    for (const Vec3& p : points)
      require(p.minCoeff() >= 0.0 && p.maxCoeff() <= 1.0, ErrorCode::InvalidArgument,
              "region surface point outside the unit cube");
    for (const Triangle& t : simplices)
      for (int i : t)
        require(i >= 0 && static_cast<std::size_t>(i) < core_count, ErrorCode::ShapeMismatch,
                "simplex references a duplicated point");
  }
};

namespace detail {

struct CoordKey {
  std::array<std::uint64_t, 3> bits;
  bool operator==(const CoordKey&) const = default;
};

inline CoordKey coord_key(const Vec3& p) {
  CoordKey k{};
  for (int a = 0; a < 3; ++a) {
    const double v = p[a] == 0.0 ? 0.0 : p[a];  // fold -0.0 onto 0.0
    std::memcpy(&k.bits[a], &v, sizeof(double));
  }
  return k;
}

struct CoordKeyHash {
  std::size_t operator()(const CoordKey& k) const {
    std::size_t h = 1469598103934665603ull;
    for (auto b : k.bits) h = (h ^ b) * 1099511628211ull;
    return h;
  }
};

}  // namespace detail

/// Iso-surface of the binary mask {data == label} with every vertex at the
/// exact midpoint of a grid edge that crosses the mask boundary.
inline Mesh extract_region_surface(const LabelVolume& vol, Label label) {
  vol.validate();
  const auto& table = mc::case_table();
  require(table.complete, ErrorCode::InvalidArgument, "marching-cubes case table is incomplete");

  const auto [nx, ny, nz] = vol.dims;
  bool present = false, border = false;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (vol.at(i, j, k) == label) {
          present = true;
          if (i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1) border = true;
        }
  require(present, ErrorCode::EmptyRegion, "label " + std::to_string(label) + " does not occur in the volume");

  Mesh mesh;
  mesh.clipped = border;
  std::array<std::vector<int>, 3> vertex_of_edge;
  for (auto& v : vertex_of_edge) v.assign(vol.voxel_count(), -1);

  auto grid_vertex = [&](int i, int j, int k, int axis) {
    int& slot = vertex_of_edge[axis][vol.index(i, j, k)];
    if (slot < 0) {
      Vec3 p;
      const std::array<int, 3> ijk{i, j, k};
      for (int a = 0; a < 3; ++a) {
        const double offset = a == axis ? ijk[a] + 0.5 : static_cast<double>(ijk[a]);
        p[a] = vol.origin[a] + vol.spacing[a] * offset;
      }
      slot = static_cast<int>(mesh.points.size());
      mesh.points.push_back(p);
    }
    return slot;
  };

  for (int k = 0; k + 1 < nz; ++k)
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        int config = 0;
        for (int c = 0; c < 8; ++c)
          if (vol.at(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) == label) config |= 1 << c;
        for (const auto& tri : table.triangles[config]) {
          Triangle t{};
          for (int v = 0; v < 3; ++v) {
            const int e = tri[v];
            const int c0 = mc::kEdges[e][0];
            t[v] = grid_vertex(i + (c0 & 1), j + ((c0 >> 1) & 1), k + ((c0 >> 2) & 1), mc::kEdgeAxis[e]);
          }
          mesh.simplices.push_back(t);
          mesh.face_region.push_back(label);
        }
      }
  return mesh;
}

/// Concatenates region meshes, unifying vertices with bitwise-equal coordinates.
inline Mesh merge_and_stitch(std::span<const Mesh> meshes) {
  Mesh out;
  std::unordered_map<detail::CoordKey, int, detail::CoordKeyHash> index;
  for (const Mesh& m : meshes) {
    require(m.face_region.size() == m.simplices.size(), ErrorCode::ShapeMismatch,
            "merge_and_stitch needs region-tagged meshes");
    out.clipped = out.clipped || m.clipped;
    std::vector<int> remap(m.points.size());
    for (std::size_t i = 0; i < m.points.size(); ++i) {
      auto [it, inserted] = index.try_emplace(detail::coord_key(m.points[i]), static_cast<int>(out.points.size()));
      if (inserted) out.points.push_back(m.points[i]);
      remap[i] = it->second;
    }
    for (std::size_t f = 0; f < m.simplices.size(); ++f) {
      const Triangle& t = m.simplices[f];
      out.simplices.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
      out.face_region.push_back(m.face_region[f]);
    }
  }
  return out;
}

/// Unique undirected neighbours of every vertex, ascending.
inline std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh) {
  std::vector<std::vector<int>> nbrs(mesh.points.size());
  for (const Triangle& t : mesh.simplices)
    for (int a = 0; a < 3; ++a) {
      nbrs[t[a]].push_back(t[(a + 1) % 3]);
      nbrs[t[a]].push_back(t[(a + 2) % 3]);
    }
  for (auto& n : nbrs) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return nbrs;
}

/// Sum over vertices of the squared uniform-Laplacian residual.
inline double laplacian_energy(const Mesh& mesh) {
  const auto nbrs = vertex_neighbors(mesh);
  double e = 0.0;
  for (std::size_t i = 0; i < mesh.points.size(); ++i) {
    if (nbrs[i].empty()) continue;
    Vec3 mean = Vec3::Zero();
    for (int j : nbrs[i]) mean += mesh.points[j];
    mean /= static_cast<double>(nbrs[i].size());
    e += (mean - mesh.points[i]).squaredNorm();
  }
  return e;
}

struct SmoothOptions {
  int iterations = 100;
  double lambda_pass = 0.5;
  double mu_pass = -0.53;
};

/// Taubin lambda|mu smoothing with the uniform Laplacian. Connectivity is
/// untouched; isolated vertices stay where they are.
inline Mesh smooth(const Mesh& mesh, const SmoothOptions& opt = {}) {
  require(opt.iterations >= 0, ErrorCode::InvalidArgument, "smoothing iterations must be >= 0");
  Mesh out = mesh;
  if (opt.iterations == 0) return out;
  const auto nbrs = vertex_neighbors(mesh);
  PointCloud scratch(out.points.size());
  auto pass = [&](double factor) {
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (nbrs[i].empty()) {
        scratch[i] = out.points[i];
        continue;
      }
      Vec3 mean = Vec3::Zero();
      for (int j : nbrs[i]) mean += out.points[j];
      mean /= static_cast<double>(nbrs[i].size());
      scratch[i] = out.points[i] + factor * (mean - out.points[i]);
    }
    out.points.swap(scratch);
  };
  for (int it = 0; it < opt.iterations; ++it) {
    pass(opt.lambda_pass);
    pass(opt.mu_pass);
  }
  return out;
}

/// One mesh per region of a stitched mesh, in ascending region order.
/// Vertices keep their relative order from the merged mesh.
inline std::vector<std::pair<Label, Mesh>> split_by_region(const Mesh& merged) {
  require(merged.face_region.size() == merged.simplices.size(), ErrorCode::ShapeMismatch,
          "split_by_region needs face_region");
  std::map<Label, std::vector<std::size_t>> faces_of;
  for (std::size_t f = 0; f < merged.simplices.size(); ++f) faces_of[merged.face_region[f]].push_back(f);

  std::vector<std::pair<Label, Mesh>> out;
  std::vector<int> remap(merged.points.size(), -1);
  for (const auto& [region, faces] : faces_of) {
    std::vector<int> used;
    for (std::size_t f : faces)
      for (int v : merged.simplices[f]) used.push_back(v);
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());

    Mesh m;
    m.clipped = merged.clipped;
    for (int v : used) {
      remap[v] = static_cast<int>(m.points.size());
      m.points.push_back(merged.points[v]);
    }
    for (std::size_t f : faces) {
      const Triangle& t = merged.simplices[f];
      m.simplices.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
      m.face_region.push_back(region);
    }
    for (int v : used) remap[v] = -1;
    out.emplace_back(region, std::move(m));
  }
  return out;
}

/// Points shared (bitwise) between the surfaces of each unordered pair of
/// distinct regions; pairs with no shared point are omitted. The point sets
/// are deduplicated and sorted lexicographically.
template <class Surface>
std::map<std::pair<Label, Label>, PointCloud> extract_interfaces(std::span<const Surface> surfaces) {
  std::vector<std::unordered_map<detail::CoordKey, Vec3, detail::CoordKeyHash>> sets;
  for (const Surface& s : surfaces) {
    auto& m = sets.emplace_back();
    for (const Vec3& p : s.points) m.try_emplace(detail::coord_key(p), p);
  }
  std::map<std::pair<Label, Label>, PointCloud> out;
  for (std::size_t a = 0; a < surfaces.size(); ++a)
    for (std::size_t b = a + 1; b < surfaces.size(); ++b) {
      if (surfaces[a].region == surfaces[b].region) continue;
      const auto& small = sets[a].size() <= sets[b].size() ? sets[a] : sets[b];
      const auto& large = sets[a].size() <= sets[b].size() ? sets[b] : sets[a];
      PointCloud shared;
      for (const auto& [key, p] : small)
        if (large.count(key)) shared.push_back(p);
      if (shared.empty()) continue;
      std::sort(shared.begin(), shared.end(), lex_less);
      const Label ra = std::min(surfaces[a].region, surfaces[b].region);
      const Label rb = std::max(surfaces[a].region, surfaces[b].region);
      auto& dst = out[{ra, rb}];
      dst.insert(dst.end(), shared.begin(), shared.end());
      std::sort(dst.begin(), dst.end(), lex_less);
      dst.erase(std::unique(dst.begin(), dst.end()), dst.end());
    }
  return out;
}

/// Region-tagged view of a split mesh, usable with extract_interfaces().
struct TaggedPoints {
  Label region = 0;
  PointCloud points;
};

}  // namespace nimblereg
