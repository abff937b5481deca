#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "nimblereg/types.hpp"

namespace nimblereg::mc {

// Corner c of a unit cell sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Edge e joins kEdges[e][0] -> kEdges[e][1] and runs along kEdgeAxis[e].
inline constexpr std::array<std::array<int, 2>, 12> kEdges = {{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // x
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // y
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // z
}};
inline constexpr std::array<int, 12> kEdgeAxis = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};

inline Vec3 corner_position(int c) {
  return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1);
}

inline Vec3 edge_midpoint(int e) {
  return 0.5 * (corner_position(kEdges[e][0]) + corner_position(kEdges[e][1]));
}

inline int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kEdges[e][0] == a && kEdges[e][1] == b) || (kEdges[e][0] == b && kEdges[e][1] == a))
      return e;
  return -1;
}

/// True when both edges lie on a common face of the cell.
inline bool edges_cofacial(int e1, int e2) {
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      auto on_face = [&](int e) {
        return kEdgeAxis[e] != axis && ((kEdges[e][0] >> axis) & 1) == side;
      };
      if (on_face(e1) && on_face(e2)) return true;
    }
  return false;
}

/// Triangles (as edge-id triples) for each of the 256 inside/outside corner
/// configurations.
///
/// The table is generated rather than transcribed: each face contributes
/// boundary segments (ambiguous faces always separate the inside corners, so
/// neighbouring cells agree), segments are chained into oriented loops, and
/// each loop is triangulated without any diagonal lying in a cell face. The
/// result is crack-free and every mesh edge is shared by exactly two
/// triangles on closed surfaces.
struct CaseTable {
  std::array<std::vector<std::array<int, 3>>, 256> triangles;
  bool complete = true;
};

namespace detail {

inline std::vector<std::array<int, 2>> face_segments(int config) {
  std::vector<std::array<int, 2>> segments;
  auto inside = [&](int c) { return ((config >> c) & 1) != 0; };
  for (int axis = 0; axis < 3; ++axis) {
    const int b = (axis + 1) % 3, c2 = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      const Vec3 normal = Vec3::Unit(axis) * (side == 0 ? -1.0 : 1.0);
      // corners of the face in cyclic order
      std::array<int, 4> ring{};
      const std::array<std::array<int, 2>, 4> uv = {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};
      for (int k = 0; k < 4; ++k)
        ring[k] = (side << axis) | (uv[k][0] << b) | (uv[k][1] << c2);
      int n_in = 0;
      for (int k = 0; k < 4; ++k) n_in += inside(ring[k]) ? 1 : 0;
      if (n_in == 0 || n_in == 4) continue;

      // pairs (edge_a, edge_b, reference corner, reference is inside?)
      struct Seg { int ea, eb, ref; bool ref_inside; };
      std::vector<Seg> segs;
      auto edge_k = [&](int k) { return edge_between(ring[k], ring[(k + 1) % 4]); };
      const bool ambiguous = n_in == 2 && inside(ring[0]) == inside(ring[2]);
      if (ambiguous || n_in == 1) {
        for (int k = 0; k < 4; ++k)
          if (inside(ring[k])) segs.push_back({edge_k((k + 3) % 4), edge_k(k), ring[k], true});
      } else if (n_in == 3) {
        for (int k = 0; k < 4; ++k)
          if (!inside(ring[k])) segs.push_back({edge_k((k + 3) % 4), edge_k(k), ring[k], false});
      } else {
        std::vector<int> cut;
        int ref = -1;
        for (int k = 0; k < 4; ++k) {
          if (inside(ring[k]) != inside(ring[(k + 1) % 4])) cut.push_back(edge_k(k));
          if (inside(ring[k])) ref = ring[k];
        }
        segs.push_back({cut[0], cut[1], ref, true});
      }
      for (const Seg& s : segs) {
        const Vec3 a = edge_midpoint(s.ea), bpt = edge_midpoint(s.eb);
        const double side_test = (corner_position(s.ref) - a).dot((bpt - a).cross(normal));
        const bool keep = s.ref_inside ? side_test > 0 : side_test < 0;
        segments.push_back(keep ? std::array<int, 2>{s.ea, s.eb} : std::array<int, 2>{s.eb, s.ea});
      }
    }
  }
  return segments;
}

inline bool triangulate_loop(const std::vector<int>& loop, std::vector<std::array<int, 3>>& out) {
  const int n = static_cast<int>(loop.size());
  if (n < 3) return false;
  auto allowed = [&](int i, int j) {
    if (j == i + 1 || (i == 0 && j == n - 1)) return true;
    return !edges_cofacial(loop[i], loop[j]);
  };
  // ok[i][j]: polygon chain i..j (closed by chord i-j) can be triangulated.
  std::vector<std::vector<int>> split(n, std::vector<int>(n, -2));
  std::function<bool(int, int)> solve = [&](int i, int j) -> bool {
    if (j == i + 1) return true;
    if (split[i][j] != -2) return split[i][j] >= 0;
    split[i][j] = -1;
    for (int k = i + 1; k < j; ++k) {
      if (allowed(i, k) && allowed(k, j) && solve(i, k) && solve(k, j)) {
        split[i][j] = k;
        return true;
      }
    }
    return false;
  };
  if (!solve(0, n - 1)) return false;
  std::function<void(int, int)> emit = [&](int i, int j) {
    if (j == i + 1) return;
    const int k = split[i][j];
    out.push_back({loop[i], loop[k], loop[j]});
    emit(i, k);
    emit(k, j);
  };
  emit(0, n - 1);
  return true;
}

}  // namespace detail

inline CaseTable build_case_table() {
  CaseTable table;
  for (int config = 1; config < 255; ++config) {
    const auto segments = detail::face_segments(config);
    std::array<int, 12> next;
    std::array<int, 12> in_degree{};
    next.fill(-1);
    for (const auto& s : segments) {
      if (next[s[0]] != -1) table.complete = false;
      next[s[0]] = s[1];
      ++in_degree[s[1]];
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      std::vector<int> loop;
      int e = start;
      while (e >= 0 && !used[e]) {
        used[e] = true;
        loop.push_back(e);
        e = next[e];
      }
      if (e != start) table.complete = false;
      if (!detail::triangulate_loop(loop, table.triangles[config])) table.complete = false;
    }
    for (int e = 0; e < 12; ++e)
      if ((next[e] >= 0) != (in_degree[e] == 1)) table.complete = false;
  }
  return table;
}

inline const CaseTable& case_table() {
  static const CaseTable table = build_case_table();
  return table;
}

}  // namespace nimblereg::mc
