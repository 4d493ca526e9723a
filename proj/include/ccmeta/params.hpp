#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "ccmeta/error.hpp"

namespace ccmeta {

enum class UserClass { kCenter, kEdge };

inline std::string_view to_string(UserClass c) {
  return c == UserClass::kCenter ? "CCU" : "CEU";
}

inline UserClass parse_user_class(std::string_view s) {
  if (s == "CCU" || s == "ccu" || s == "center") return UserClass::kCenter;
  if (s == "CEU" || s == "ceu" || s == "edge") return UserClass::kEdge;
  throw DomainError("unknown user class '" + std::string(s) + "'");
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double linear) { return 10.0 * std::log10(linear); }

/// Spatial and channel constants of the network. The SIR threshold is held in
/// linear scale; the transmit power cancels out of the interference-limited
/// SIR and is carried for reporting only.
struct NetworkParams {
  double bs_density = 1e-4;        // BSs per m^2
  double user_density = 3e-4;      // users per m^2
  double pathloss_exponent = 3.0;  // alpha
  double ratio_threshold = 0.5;    // R
  double sir_threshold = 1.0;      // theta, linear
  double tx_power_dbm = 23.0;

  double delta() const { return 2.0 / pathloss_exponent; }
  double load_ratio() const { return user_density / bs_density; }

  void validate() const {
    detail::require(bs_density > 0.0, "bs_density must be > 0");
    detail::require(user_density > 0.0, "user_density must be > 0");
    detail::require(pathloss_exponent > 2.0, "pathloss_exponent must be > 2");
    detail::require(ratio_threshold > 0.0 && ratio_threshold < 1.0,
                    "ratio_threshold must lie in (0, 1)");
    detail::require(sir_threshold > 0.0 && std::isfinite(sir_threshold),
                    "sir_threshold must be finite and > 0");
  }

  NetworkParams with_theta(double theta) const {
    NetworkParams p = *this;
    p.sir_threshold = theta;
    return p;
  }

  NetworkParams with_ratio(double ratio) const {
    NetworkParams p = *this;
    p.ratio_threshold = ratio;
    return p;
  }
};

/// Per-user Bernoulli arrival rate (packets per slot).
struct TrafficParams {
  double arrival_rate = 0.1;

  void validate() const {
    detail::require(arrival_rate >= 0.0 && arrival_rate <= 1.0, "arrival_rate must lie in [0, 1]");
  }
};

}  // namespace ccmeta
