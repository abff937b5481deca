#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nimblereg/io.hpp"
#include "nimblereg/svf.hpp"

namespace nimblereg {

/// Matrix logarithm of a homogeneous affine transform, applied as
/// exp(scale * log_matrix).
struct AffineLog {
  Mat4 log_matrix = Mat4::Zero();
  double scale = 1.0;

  Mat4 matrix() const {
    Mat4 m = (scale * log_matrix).exp();
    m.row(3) << 0.0, 0.0, 0.0, 1.0;
    return m;
  }
};

/// Logarithm of a homogeneous affine (inverse scaling and squaring).
/// Fails when the linear part has a non-positive real eigenvalue.
inline AffineLog affine_log(const Mat4& affine) {
  require(affine.allFinite(), ErrorCode::NonFinite, "affine matrix is not finite");
  require((affine.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= 1e-12,
          ErrorCode::InvalidArgument, "affine matrix must have bottom row (0, 0, 0, 1)");
  const Mat3 linear = affine.topLeftCorner<3, 3>();
  Eigen::EigenSolver<Mat3> es(linear, false);
  for (int i = 0; i < 3; ++i) {
    const auto ev = es.eigenvalues()[i];
    const double mag = std::abs(ev);
    if (std::abs(ev.imag()) <= 1e-12 * std::max(1.0, mag) && ev.real() <= 0.0)
      throw Error(ErrorCode::NotLogable,
                  "affine has a non-positive real eigenvalue; no real logarithm exists (consider a rigid fit)");
  }
  AffineLog out;
  out.log_matrix = affine.log();
  out.log_matrix.row(3).setZero();
  require(out.log_matrix.allFinite(), ErrorCode::NotLogable, "affine logarithm is not finite");
  return out;
}

inline AffineLog inverse(AffineLog a) {
  a.scale = -a.scale;
  return a;
}

/// SVF term of a chain; applied as exp(sign * V) with `steps` Euler steps.
struct SvfTerm {
  SvfSample field;
  double sign = 1.0;
  int steps = 12;
};

inline SvfTerm inverse(SvfTerm t) {
  t.sign = -t.sign;
  return t;
}

using ChainTerm = std::variant<AffineLog, SvfTerm>;

/// Ordered composition; terms[0] is applied to a point first.
struct TransformChain {
  std::vector<ChainTerm> terms;
  std::string tag;
  std::optional<DomainBox> domain;  // world box the normalized coordinates refer to

  void append(const TransformChain& other) {
    terms.insert(terms.end(), other.terms.begin(), other.terms.end());
  }
};

inline TransformChain invert(const TransformChain& chain) {
  TransformChain out;
  out.tag = chain.tag.empty() ? std::string() : chain.tag + "-inverse";
  out.domain = chain.domain;
  for (auto it = chain.terms.rbegin(); it != chain.terms.rend(); ++it)
    out.terms.push_back(std::visit([](const auto& t) -> ChainTerm { return inverse(t); }, *it));
  return out;
}

inline PointCloud apply_affine(const Mat4& m, std::span<const Vec3> points) {
  const Mat3 a = m.topLeftCorner<3, 3>();
  const Vec3 t = m.topRightCorner<3, 1>();
  PointCloud out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(a * p + t);
  return out;
}

inline PointCloud apply_chain(const TransformChain& chain, std::span<const Vec3> points,
                              Evaluation mode = Evaluation::Exact) {
  PointCloud x(points.begin(), points.end());
  for (const ChainTerm& term : chain.terms) {
    if (const auto* a = std::get_if<AffineLog>(&term)) {
      const Mat4 m = a->matrix();
      require(m.allFinite(), ErrorCode::NonFinite, "affine term exponentiates to a non-finite matrix");
      x = apply_affine(m, x);
    } else {
      const auto& s = std::get<SvfTerm>(term);
      x = exp_svf(scaled(s.field, s.sign), x, s.steps, mode);
    }
    for (const Vec3& p : x) require(is_finite(p), ErrorCode::NonFinite, "transform chain produced a non-finite point");
  }
  return x;
}

/// Regular grid in normalized coordinates; node (i,j,k) sits at
/// origin + spacing * (i,j,k), x fastest.
struct GridSpec {
  std::array<int, 3> dims{2, 2, 2};
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();

  std::size_t count() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }

  PointCloud nodes() const {
    PointCloud out;
    out.reserve(count());
    for (int k = 0; k < dims[2]; ++k)
      for (int j = 0; j < dims[1]; ++j)
        for (int i = 0; i < dims[0]; ++i) out.push_back(origin + spacing.cwiseProduct(Vec3(i, j, k)));
    return out;
  }

  /// n^3 nodes spanning [lo, hi]^3.
  static GridSpec cube(int n, double lo = 0.0, double hi = 1.0) {
    GridSpec g;
    g.dims = {n, n, n};
    g.spacing = Vec3::Constant((hi - lo) / (n - 1));
    g.origin = Vec3::Constant(lo);
    return g;
  }
};

/// Jacobian determinant of the mapped grid at every node: central
/// differences inside, one-sided differences on the grid faces.
inline std::vector<double> jacobian_determinant(const TransformChain& chain, const GridSpec& grid,
                                                Evaluation mode = Evaluation::Exact) {
  for (int a = 0; a < 3; ++a) {
    require(grid.dims[a] >= 2, ErrorCode::InvalidArgument, "Jacobian grid needs at least 2 nodes per axis");
    require(grid.spacing[a] > 0.0 && std::isfinite(grid.spacing[a]), ErrorCode::DegenerateGeometry,
            "Jacobian grid spacing must be positive");
  }
  const PointCloud mapped = apply_chain(chain, grid.nodes(), mode);
  const auto [nx, ny, nz] = grid.dims;
  auto idx = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k);
  };
  std::vector<double> det(grid.count());
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        Mat3 jac;
        const std::array<int, 3> ijk{i, j, k};
        for (int a = 0; a < 3; ++a) {
          std::array<int, 3> lo = ijk, hi = ijk;
          if (ijk[a] > 0) --lo[a];
          if (ijk[a] < grid.dims[a] - 1) ++hi[a];
          const double h = (hi[a] - lo[a]) * grid.spacing[a];
          jac.col(a) = (mapped[idx(hi[0], hi[1], hi[2])] - mapped[idx(lo[0], lo[1], lo[2])]) / h;
        }
        det[idx(i, j, k)] = jac.determinant();
      }
  return det;
}

namespace io {

inline constexpr std::uint32_t kSvfBlobVersion = 1;
inline constexpr int kChainVersion = 1;

// "NSVF", u32 version, u64 count, f64 sigma, f64 epsilon, then count x 3 f64
// control points followed by count x 3 f64 velocities.
inline std::string encode_svf(const SvfSample& s) {
  s.validate();
  ByteWriter w;
  w.put_raw("NSVF");
  w.put(kSvfBlobVersion);
  w.put(static_cast<std::uint64_t>(s.size()));
  w.put(s.sigma);
  w.put(s.epsilon);
  for (const Vec3& p : s.control_points)
    for (int a = 0; a < 3; ++a) w.put(p[a]);
  for (const Vec3& v : s.velocities)
    for (int a = 0; a < 3; ++a) w.put(v[a]);
  return w.bytes();
}

inline SvfSample decode_svf(std::string_view bytes) {
  ByteReader r(bytes, "svf blob");
  require(r.raw(4) == "NSVF", ErrorCode::Format, "svf blob: bad magic");
  require(r.get<std::uint32_t>() == kSvfBlobVersion, ErrorCode::Format, "svf blob: unsupported version");
  const auto n = r.get<std::uint64_t>();
  SvfSample s;
  s.sigma = r.get<double>();
  s.epsilon = r.get<double>();
  s.control_points.resize(n);
  s.velocities.resize(n);
  for (Vec3& p : s.control_points)
    for (int a = 0; a < 3; ++a) p[a] = r.get<double>();
  for (Vec3& v : s.velocities)
    for (int a = 0; a < 3; ++a) v[a] = r.get<double>();
  require(r.at_end(), ErrorCode::Format, "svf blob: trailing bytes");
  s.validate();
  return s;
}

/// Chain file: JSON listing terms in application order. SVF terms reference a
/// binary blob stored next to the chain file.
inline void write_chain(const fs::path& path, const TransformChain& chain) {
  nlohmann::ordered_json j;
  j["format"] = "nimblereg-chain";
  j["version"] = kChainVersion;
  j["tag"] = chain.tag;
  if (chain.domain) {
    const Vec3 lo = chain.domain->lower, hi = chain.domain->upper;
    j["domain"] = {{"lower", {lo.x(), lo.y(), lo.z()}}, {"upper", {hi.x(), hi.y(), hi.z()}}};
  }
  j["terms"] = nlohmann::ordered_json::array();
  const std::string stem = path.filename().string();
  int blob = 0;
  for (const ChainTerm& term : chain.terms) {
    nlohmann::ordered_json t;
    if (const auto* a = std::get_if<AffineLog>(&term)) {
      t["type"] = "affine_log";
      t["scale"] = a->scale;
      std::vector<double> m;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m.push_back(a->log_matrix(r, c));
      t["matrix"] = m;
    } else {
      const auto& s = std::get<SvfTerm>(term);
      const std::string blob_name = stem + ".svf" + std::to_string(blob++) + ".bin";
      write_atomic(path.parent_path() / blob_name, encode_svf(s.field));
      t["type"] = "svf";
      t["sign"] = s.sign;
      t["steps"] = s.steps;
      t["count"] = s.field.size();
      t["blob"] = blob_name;
    }
    j["terms"].push_back(t);
  }
  write_atomic(path, j.dump(2) + "\n");
}

inline TransformChain read_chain(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, "chain file " + path.string() + ": " + e.what());
  }
  try {
    require(j.at("format") == "nimblereg-chain", ErrorCode::Format, "not a chain file: " + path.string());
    require(j.at("version").get<int>() == kChainVersion, ErrorCode::Format, "unsupported chain version");
    TransformChain chain;
    chain.tag = j.value("tag", "");
    if (j.contains("domain")) {
      const auto lo = j["domain"].at("lower").get<std::vector<double>>();
      const auto hi = j["domain"].at("upper").get<std::vector<double>>();
      require(lo.size() == 3 && hi.size() == 3, ErrorCode::Format, "chain domain needs 3 lower and 3 upper values");
      chain.domain = DomainBox{Vec3(lo[0], lo[1], lo[2]), Vec3(hi[0], hi[1], hi[2])};
    }
    for (const auto& t : j.at("terms")) {
      const std::string type = t.at("type");
      if (type == "affine_log") {
        AffineLog a;
        a.scale = t.at("scale").get<double>();
        const auto m = t.at("matrix").get<std::vector<double>>();
        require(m.size() == 16, ErrorCode::Format, "affine_log term needs 16 values");
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) a.log_matrix(r, c) = m[r * 4 + c];
        chain.terms.emplace_back(a);
      } else if (type == "svf") {
        SvfTerm s;
        s.sign = t.at("sign").get<double>();
        s.steps = t.at("steps").get<int>();
        s.field = decode_svf(read_file(path.parent_path() / t.at("blob").get<std::string>()));
        require(s.field.size() == t.at("count").get<std::size_t>(), ErrorCode::Format,
                "svf blob size does not match its chain entry");
        chain.terms.emplace_back(std::move(s));
      } else {
        throw Error(ErrorCode::Format, "unknown chain term type '" + type + "'");
      }
    }
    return chain;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, "chain file " + path.string() + ": " + e.what());
  }
}

}  // namespace io
}  // namespace nimblereg
