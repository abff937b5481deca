#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <queue>
#include <vector>

#include "nimblereg/geometry.hpp"

namespace nimblereg {

namespace detail {

/// Garland-Heckbert quadric edge collapse on a triangle mesh.
class QuadricDecimator {
 public:
  explicit QuadricDecimator(const Mesh& mesh)
      : pos_(mesh.points), faces_(mesh.simplices), face_alive_(mesh.simplices.size(), true),
        vfaces_(mesh.points.size()), stamp_(mesh.points.size(), 0), quadric_(mesh.points.size(), Mat4::Zero()) {
    for (std::size_t f = 0; f < faces_.size(); ++f)
      for (int v : faces_[f]) vfaces_[v].push_back(static_cast<int>(f));
    for (std::size_t v = 0; v < pos_.size(); ++v)
      if (!vfaces_[v].empty()) ++live_vertices_;
    live_faces_ = faces_.size();
    for (std::size_t f = 0; f < faces_.size(); ++f) add_face_quadric(static_cast<int>(f));
    add_boundary_quadrics();
  }

  std::size_t live_faces() const { return live_faces_; }
  std::size_t live_vertices() const { return live_vertices_; }

  /// Collapses edges in cost order until both counts are within target.
  /// Returns false when no admissible collapse remains.
  bool run(std::size_t target_points, std::size_t target_faces) {
    for (bool strict : {true, false}) {
      strict_ = strict;
      rebuild_heap();
      while (!done(target_points, target_faces) && !heap_.empty()) {
        const Candidate c = heap_.top();
        heap_.pop();
        if (!is_current(c)) continue;
        if (!try_collapse(c)) continue;
      }
      if (done(target_points, target_faces)) return true;
    }
    return false;
  }

  Mesh result() const {
    Mesh out;
    std::vector<int> remap(pos_.size(), -1);
    for (std::size_t v = 0; v < pos_.size(); ++v) {
      bool used = false;
      for (int f : vfaces_[v]) used = used || face_alive_[f];
      if (!used) continue;
      remap[v] = static_cast<int>(out.points.size());
      out.points.push_back(pos_[v]);
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      const Triangle& t = faces_[f];
      out.simplices.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    }
    return out;
  }

 private:
  struct Candidate {
    double cost;
    int u, v;  // u < v; u survives
    unsigned su, sv;
    Vec3 target;
  };
  struct Worse {
    bool operator()(const Candidate& a, const Candidate& b) const {
      if (a.cost != b.cost) return a.cost > b.cost;
      if (a.u != b.u) return a.u > b.u;
      return a.v > b.v;
    }
  };

  bool done(std::size_t tp, std::size_t tf) const { return live_faces_ <= tf && live_vertices_ <= tp; }

  static Eigen::Vector4d plane_of(const Vec3& a, const Vec3& b, const Vec3& c, double& area) {
    Vec3 n = (b - a).cross(c - a);
    const double len = n.norm();
    area = 0.5 * len;
    if (len == 0.0) return Eigen::Vector4d::Zero();
    n /= len;
    return {n.x(), n.y(), n.z(), -n.dot(a)};
  }

  void add_face_quadric(int f) {
    double area = 0.0;
    const Triangle& t = faces_[f];
    const Eigen::Vector4d p = plane_of(pos_[t[0]], pos_[t[1]], pos_[t[2]], area);
    const Mat4 k = area * (p * p.transpose());
    for (int v : t) quadric_[v] += k;
  }

  // Planes perpendicular to open borders keep clipped surfaces from shrinking.
  void add_boundary_quadrics() {
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t f = 0; f < faces_.size(); ++f)
      for (int a = 0; a < 3; ++a) {
        const int u = faces_[f][a], v = faces_[f][(a + 1) % 3];
        edge_faces[{std::min(u, v), std::max(u, v)}].push_back(static_cast<int>(f));
      }
    for (const auto& [e, fs] : edge_faces) {
      if (fs.size() != 1) continue;
      const Triangle& t = faces_[fs[0]];
      const Vec3 fn = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]);
      const Vec3 ev = pos_[e.second] - pos_[e.first];
      Vec3 n = ev.cross(fn);
      const double len = n.norm();
      if (len == 0.0) continue;
      n /= len;
      const Eigen::Vector4d p(n.x(), n.y(), n.z(), -n.dot(pos_[e.first]));
      const Mat4 k = 10.0 * ev.squaredNorm() * (p * p.transpose());
      quadric_[e.first] += k;
      quadric_[e.second] += k;
    }
  }

  static double quadric_cost(const Mat4& q, const Vec3& x) {
    const Eigen::Vector4d h(x.x(), x.y(), x.z(), 1.0);
    return std::max(0.0, h.dot(q * h));
  }

  Candidate make_candidate(int u, int v) const {
    const Mat4 q = quadric_[u] + quadric_[v];
    const Vec3 mid = 0.5 * (pos_[u] + pos_[v]);
    Vec3 best = mid;
    double best_cost = quadric_cost(q, mid);
    const Mat3 a = q.topLeftCorner<3, 3>();
    const Vec3 b = q.topRightCorner<3, 1>();
    Eigen::FullPivLU<Mat3> lu(a);
    lu.setThreshold(1e-10);
    if (lu.isInvertible()) {
      const Vec3 x = lu.solve(-b);
      if (is_finite(x) && (x - mid).norm() <= (pos_[u] - pos_[v]).norm()) {
        const double c = quadric_cost(q, x);
        if (c <= best_cost) { best = x; best_cost = c; }
      }
    }
    for (const Vec3& x : {pos_[u], pos_[v]}) {
      const double c = quadric_cost(q, x);
      if (c < best_cost) { best = x; best_cost = c; }
    }
    return {best_cost, u, v, stamp_[u], stamp_[v], best};
  }

  bool is_current(const Candidate& c) const {
    return stamp_[c.u] == c.su && stamp_[c.v] == c.sv && !live_faces_of(c.u).empty() &&
           !live_faces_of(c.v).empty();
  }

  std::vector<int> live_faces_of(int v) const {
    std::vector<int> out;
    for (int f : vfaces_[v])
      if (face_alive_[f]) out.push_back(f);
    return out;
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> n;
    for (int f : live_faces_of(v))
      for (int w : faces_[f])
        if (w != v) n.push_back(w);
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
    return n;
  }

  void rebuild_heap() {
    heap_ = {};
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!face_alive_[f]) continue;
      for (int a = 0; a < 3; ++a) {
        const int u = faces_[f][a], v = faces_[f][(a + 1) % 3];
        if (u < v) heap_.push(make_candidate(u, v));
        else heap_.push(make_candidate(v, u));
      }
    }
  }

  static std::array<int, 3> sorted(Triangle t) {
    std::sort(t.begin(), t.end());
    return t;
  }

  bool try_collapse(const Candidate& c) {
    const int u = c.u, v = c.v;
    const auto fu = live_faces_of(u), fv = live_faces_of(v);
    std::vector<int> shared;
    for (int f : fu)
      if (std::find(fv.begin(), fv.end(), f) != fv.end()) shared.push_back(f);
    if (shared.empty() || shared.size() > 2) return false;

    // link condition
    const auto nu = neighbors(u), nv = neighbors(v);
    std::vector<int> common;
    std::set_intersection(nu.begin(), nu.end(), nv.begin(), nv.end(), std::back_inserter(common));
    if (common.size() != shared.size()) return false;
    if (live_vertices_ <= 4) return false;

    // resulting faces must not duplicate one another, flip, or degenerate
    std::set<std::array<int, 3>> keep;
    for (int f : fu)
      if (std::find(shared.begin(), shared.end(), f) == shared.end()) keep.insert(sorted(faces_[f]));
    for (int f : fv) {
      if (std::find(shared.begin(), shared.end(), f) != shared.end()) continue;
      Triangle t = faces_[f];
      for (int& w : t)
        if (w == v) w = u;
      if (!keep.insert(sorted(t)).second) return false;
    }
    for (int f : fu) if (!face_ok(f, u, v, c.target, shared)) return false;
    for (int f : fv) if (!face_ok(f, u, v, c.target, shared)) return false;

    for (int f : shared) {
      face_alive_[f] = false;
      --live_faces_;
    }
    for (int f : fv) {
      if (!face_alive_[f]) continue;
      for (int& w : faces_[f])
        if (w == v) w = u;
      vfaces_[u].push_back(f);
    }
    vfaces_[v].clear();
    --live_vertices_;
    pos_[u] = c.target;
    quadric_[u] += quadric_[v];
    ++stamp_[u];
    ++stamp_[v];
    for (int w : neighbors(u)) {
      ++stamp_[w];
    }
    // neighbours' stamps changed: re-push every edge around the ring
    for (int w : neighbors(u)) {
      heap_.push(make_candidate(std::min(u, w), std::max(u, w)));
      for (int x : neighbors(w))
        if (x != u) heap_.push(make_candidate(std::min(w, x), std::max(w, x)));
    }
    return true;
  }

  bool face_ok(int f, int u, int v, const Vec3& target, const std::vector<int>& shared) const {
    if (std::find(shared.begin(), shared.end(), f) != shared.end()) return true;
    const Triangle& t = faces_[f];
    std::array<Vec3, 3> before, after;
    for (int a = 0; a < 3; ++a) {
      before[a] = pos_[t[a]];
      after[a] = (t[a] == u || t[a] == v) ? target : pos_[t[a]];
    }
    const Vec3 nb = (before[1] - before[0]).cross(before[2] - before[0]);
    const Vec3 na = (after[1] - after[0]).cross(after[2] - after[0]);
    if (na.norm() <= 1e-12 * std::max(1.0, nb.norm())) return false;
    if (!strict_) return true;
    return nb.dot(na) > 0.0;
  }

  PointCloud pos_;
  std::vector<Triangle> faces_;
  std::vector<bool> face_alive_;
  std::vector<std::vector<int>> vfaces_;
  std::vector<unsigned> stamp_;
  std::vector<Mat4> quadric_;
  std::priority_queue<Candidate, std::vector<Candidate>, Worse> heap_;
  std::size_t live_faces_ = 0, live_vertices_ = 0;
  bool strict_ = true;
};

}  // namespace detail

/// Quadric-error edge collapse until the mesh has at most the given number of
/// points and simplices. Ties in collapse cost go to the lowest vertex index.
inline Mesh decimate(const Mesh& mesh, std::size_t target_points, std::size_t target_simplices) {
  mesh.validate();
  detail::QuadricDecimator q(mesh);
  require(q.run(target_points, target_simplices), ErrorCode::DegenerateGeometry,
          "decimation stalled above the requested point/simplex counts");
  return q.result();
}

struct SurfaceTargets {
  std::size_t points = 1100;
  std::size_t simplices = 2000;
};

/// Decimates a single-region mesh, pads it to exact counts by seeded random
/// duplication, and maps coordinates into the unit cube through `box`.
/// Returns the number of coordinates that had to be clamped into [0,1].
inline RegionSurface decimate_and_fix_counts(const Mesh& mesh, Label region, SurfaceTargets targets,
                                             std::uint64_t seed, const DomainBox& box,
                                             std::size_t* clamped = nullptr) {
  require(mesh.points.size() >= 4, ErrorCode::DegenerateGeometry, "mesh has fewer than 4 points");
  require(targets.points >= 4 && targets.simplices >= 1, ErrorCode::InvalidArgument,
          "targets must be >= 4 points and >= 1 simplex");

  Mesh reduced = (mesh.points.size() <= targets.points && mesh.simplices.size() <= targets.simplices)
                     ? mesh
                     : decimate(mesh, targets.points, targets.simplices);
  if (reduced.simplices.empty())
    throw Error(ErrorCode::DegenerateGeometry, "mesh has no simplices");

  RegionSurface out;
  out.region = region;
  out.seed = seed;
  out.core_count = reduced.points.size();
  out.points = reduced.points;
  out.simplices = reduced.simplices;

  Rng rng(seed);
  const std::size_t base_faces = out.simplices.size();
  while (out.simplices.size() < targets.simplices) out.simplices.push_back(out.simplices[rng.index(base_faces)]);
  while (out.points.size() < targets.points) {
    const int from = static_cast<int>(rng.index(out.core_count));
    out.duplicated_from.emplace_back(from, static_cast<int>(out.points.size()));
    out.points.push_back(out.points[from]);
  }

  std::size_t n_clamped = 0;
  for (Vec3& p : out.points) {
    Vec3 u = box.normalize(p);
    const Vec3 c = u.cwiseMax(0.0).cwiseMin(1.0);
    if (c != u) ++n_clamped;
    p = c;
  }
  if (clamped) *clamped = n_clamped;
  return out;
}

}  // namespace nimblereg
