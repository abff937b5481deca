#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "nimblereg/geometry.hpp"

namespace nimblereg::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace fs = std::filesystem;

/// Writes to `<path>.tmp` and renames over `path`.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::Io, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class ByteWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.append(p, sizeof(T));
  }
  void put_raw(std::string_view s) { bytes_.append(s); }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <class T>
  T get() {
    require(pos_ + sizeof(T) <= bytes_.size(), ErrorCode::Format, what_ + ": unexpected end of data");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view raw(std::size_t n) {
    require(pos_ + n <= bytes_.size(), ErrorCode::Format, what_ + ": unexpected end of data");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kVolumeVersion = 1;

// "NVOL", u32 version, 3 x u32 dims, 3 x f64 spacing, 3 x f64 origin, i32 labels (x fastest)
inline std::string encode_volume(const LabelVolume& vol) {
  vol.validate();
  ByteWriter w;
  w.put_raw("NVOL");
  w.put(kVolumeVersion);
  for (int d : vol.dims) w.put(static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) w.put(vol.spacing[a]);
  for (int a = 0; a < 3; ++a) w.put(vol.origin[a]);
  for (Label l : vol.data) w.put(static_cast<std::int32_t>(l));
  return w.bytes();
}

inline LabelVolume decode_volume(std::string_view bytes) {
  ByteReader r(bytes, "label volume");
  require(r.raw(4) == "NVOL", ErrorCode::Format, "label volume: bad magic");
  const auto version = r.get<std::uint32_t>();
  require(version == kVolumeVersion, ErrorCode::Format, "label volume: unsupported version " + std::to_string(version));
  LabelVolume vol;
  for (int& d : vol.dims) d = static_cast<int>(r.get<std::uint32_t>());
  for (int a = 0; a < 3; ++a) vol.spacing[a] = r.get<double>();
  for (int a = 0; a < 3; ++a) vol.origin[a] = r.get<double>();
  vol.data.resize(vol.voxel_count());
  for (Label& l : vol.data) l = r.get<std::int32_t>();
  require(r.at_end(), ErrorCode::Format, "label volume: trailing bytes");
  vol.validate();
  return vol;
}

inline void write_volume(const fs::path& path, const LabelVolume& vol) { write_atomic(path, encode_volume(vol)); }
inline LabelVolume read_volume(const fs::path& path) { return decode_volume(read_file(path)); }

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), ErrorCode::Format, what + ": bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::Format, what + ": bad number '" + s + "'");
  }
}

// Text surface format:
//   #region <id>      (optional)
//   #core <n>         (optional, points carrying simplices)
//   #seed <s>         (optional)
//   #clipped          (optional)
//   #dup <from> <to>  (one per duplicated point)
//   v x y z
//   f i j k [region]  (0-based)
inline std::string encode_surface(const RegionSurface& s) {
  std::ostringstream out;
  out << "#region " << s.region << "\n#core " << s.core_count << "\n#seed " << s.seed << "\n";
  for (const auto& [from, to] : s.duplicated_from) out << "#dup " << from << ' ' << to << '\n';
  for (const Vec3& p : s.points)
    out << "v " << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  for (const Triangle& t : s.simplices) out << "f " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  return out.str();
}

inline std::string encode_mesh(const Mesh& m, std::optional<Label> region = std::nullopt) {
  std::ostringstream out;
  if (region) out << "#region " << *region << '\n';
  if (m.clipped) out << "#clipped\n";
  for (const Vec3& p : m.points)
    out << "v " << format_double(p.x()) << ' ' << format_double(p.y()) << ' ' << format_double(p.z()) << '\n';
  for (std::size_t f = 0; f < m.simplices.size(); ++f) {
    const Triangle& t = m.simplices[f];
    out << "f " << t[0] << ' ' << t[1] << ' ' << t[2];
    if (!m.face_region.empty()) out << ' ' << m.face_region[f];
    out << '\n';
  }
  return out.str();
}

struct ParsedSurface {
  std::optional<Label> region;
  std::optional<std::size_t> core;
  std::uint64_t seed = 0;
  bool clipped = false;
  std::vector<std::pair<int, int>> dups;
  Mesh mesh;
};

inline ParsedSurface parse_surface_text(std::string_view text) {
  ParsedSurface out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool any_region = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    const std::string where = "surface line " + std::to_string(lineno);
    if (tag == "v") {
      std::string a, b, c;
      require(static_cast<bool>(ls >> a >> b >> c), ErrorCode::Format, where + ": expected 3 coordinates");
      out.mesh.points.emplace_back(parse_double(a, where), parse_double(b, where), parse_double(c, where));
    } else if (tag == "f") {
      Triangle t{};
      require(static_cast<bool>(ls >> t[0] >> t[1] >> t[2]), ErrorCode::Format, where + ": expected 3 indices");
      out.mesh.simplices.push_back(t);
      Label r;
      if (ls >> r) {
        out.mesh.face_region.push_back(r);
        any_region = true;
      }
    } else if (tag == "#region") {
      Label r;
      require(static_cast<bool>(ls >> r), ErrorCode::Format, where + ": bad #region");
      out.region = r;
    } else if (tag == "#core") {
      std::size_t n;
      require(static_cast<bool>(ls >> n), ErrorCode::Format, where + ": bad #core");
      out.core = n;
    } else if (tag == "#seed") {
      require(static_cast<bool>(ls >> out.seed), ErrorCode::Format, where + ": bad #seed");
    } else if (tag == "#clipped") {
      out.clipped = true;
    } else if (tag == "#dup") {
      int from, to;
      require(static_cast<bool>(ls >> from >> to), ErrorCode::Format, where + ": bad #dup");
      out.dups.emplace_back(from, to);
    } else if (!tag.empty() && tag[0] == '#') {
      continue;  // comment
    } else {
      throw Error(ErrorCode::Format, where + ": unknown record '" + tag + "'");
    }
  }
  if (any_region)
    require(out.mesh.face_region.size() == out.mesh.simplices.size(), ErrorCode::Format,
            "surface: region tags present on only some faces");
  out.mesh.clipped = out.clipped;
  out.mesh.validate();
  return out;
}

inline RegionSurface decode_surface(std::string_view text) {
  ParsedSurface p = parse_surface_text(text);
  require(p.region.has_value(), ErrorCode::Format, "region surface: missing #region header");
  RegionSurface s;
  s.region = *p.region;
  s.points = std::move(p.mesh.points);
  s.simplices = std::move(p.mesh.simplices);
  s.duplicated_from = std::move(p.dups);
  s.seed = p.seed;
  s.core_count = p.core.value_or(s.points.size() - s.duplicated_from.size());
  return s;
}

inline Mesh decode_mesh(std::string_view text) { return parse_surface_text(text).mesh; }

inline void write_surface(const fs::path& path, const RegionSurface& s) { write_atomic(path, encode_surface(s)); }
inline RegionSurface read_surface(const fs::path& path) { return decode_surface(read_file(path)); }
inline void write_mesh(const fs::path& path, const Mesh& m, std::optional<Label> region = std::nullopt) {
  write_atomic(path, encode_mesh(m, region));
}
inline Mesh read_mesh(const fs::path& path) { return decode_mesh(read_file(path)); }

}  // namespace nimblereg::io
