#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdeid {

enum class Errc {
  not_hurwitz,
  no_convergence,
  dimension_mismatch,
  rank_deficient,
  singular,
  invalid_param,
  diverged,
  non_finite,
  degenerate_column,
  degenerate_spectrum,
  alpha_degenerate,
  config_error,
  io_error,
  parse_error,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure in the library is reported as an `Error` carrying a code the
/// caller can branch on (resample on `rank_deficient`, restart on `non_finite`).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::not_hurwitz: return "NotHurwitz";
    case Errc::no_convergence: return "NoConvergence";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::rank_deficient: return "RankDeficient";
    case Errc::singular: return "Singular";
    case Errc::invalid_param: return "InvalidParam";
    case Errc::diverged: return "Diverged";
    case Errc::non_finite: return "NonFinite";
    case Errc::degenerate_column: return "DegenerateColumn";
    case Errc::degenerate_spectrum: return "DegenerateSpectrum";
    case Errc::alpha_degenerate: return "AlphaDegenerate";
    case Errc::config_error: return "ConfigError";
    case Errc::io_error: return "IoError";
    case Errc::parse_error: return "ParseError";
  }
  return "Unknown";
}

}  // namespace sdeid
