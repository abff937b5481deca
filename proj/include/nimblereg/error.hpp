#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nimblereg {

enum class ErrorCode {
  InvalidArgument,
  EmptyRegion,
  ShapeMismatch,
  NonFinite,
  RankDeficient,
  NotLogable,
  BandwidthMismatch,
  DegenerateGeometry,
  Io,
  Format,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::EmptyRegion: return "empty_region";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::RankDeficient: return "rank_deficient";
    case ErrorCode::NotLogable: return "not_logable";
    case ErrorCode::BandwidthMismatch: return "bandwidth_mismatch";
    case ErrorCode::DegenerateGeometry: return "degenerate_geometry";
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
  }
  return "unknown";
}

/// Every failure raised by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace nimblereg
