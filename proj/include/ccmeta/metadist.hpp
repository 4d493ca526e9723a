#pragma once

// Meta distribution of the conditional success probability: Gil-Pelaez
// inversion of the imaginary-order moments, the moment-matched beta
// approximation, the Little's-law activity coupling and its fixed point.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ccmeta/error.hpp"
#include "ccmeta/geometry.hpp"
#include "ccmeta/moments.hpp"
#include "ccmeta/params.hpp"
#include "ccmeta/quadrature.hpp"
#include "ccmeta/specialfn.hpp"

namespace ccmeta {

/// CCDF of the conditional success probability on an ascending grid that
/// starts at x = 0 (value 1) and ends at x = 1 (value 0).
struct MetaCurve {
  std::vector<double> grid;
  std::vector<double> values;
  // Estimated size of the Gil-Pelaez tail beyond the truncation point (0 otherwise).
  double tail_bound = 0.0;
  double truncation = 0.0;

  /// Linear interpolation; 1 left of the grid and 0 right of it.
  double at(double x) const {
    if (x <= grid.front()) return values.front();
    if (x >= grid.back()) return values.back();
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - grid.begin());
    const double w = (x - grid[i - 1]) / (grid[i] - grid[i - 1]);
    return values[i - 1] + w * (values[i] - values[i - 1]);
  }

  /// Integral of the CCDF over [0, 1] (trapezoidal), i.e. the mean.
  double mean() const {
    double sum = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
      sum += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    return sum;
  }
};

/// Interior reliabilities 0.01, 0.02, ..., 0.99 for `steps` = 100.
inline std::vector<double> default_grid(int steps = 100) {
  detail::require(steps >= 2, "grid needs at least two steps");
  std::vector<double> xs;
  for (int i = 1; i < steps; ++i) xs.push_back(static_cast<double>(i) / steps);
  return xs;
}

namespace detail {

// Clamps to [0, 1], enforces a non-increasing sequence and adds the x = 0 and
// x = 1 end points.
inline MetaCurve finish_curve(const std::vector<double>& xs, std::vector<double> values) {
  MetaCurve curve;
  curve.grid.push_back(0.0);
  curve.values.push_back(1.0);
  double running = 1.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] <= 0.0 || xs[i] >= 1.0) continue;
    running = std::min(running, std::clamp(values[i], 0.0, 1.0));
    curve.grid.push_back(xs[i]);
    curve.values.push_back(running);
  }
  curve.grid.push_back(1.0);
  curve.values.push_back(0.0);
  return curve;
}

inline void check_grid(const std::vector<double>& xs) {
  require(!xs.empty(), "reliability grid is empty");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(xs[i] > 0.0 && xs[i] < 1.0, "reliability grid points must lie in (0, 1)");
    require(i == 0 || xs[i] > xs[i - 1], "reliability grid must be strictly ascending");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gil-Pelaez inversion

struct GilPelaezControl {
  // Width of each 16-point Gauss-Legendre panel in t.
  double panel_width = 1.0;
  // Hard cap on the truncation point.
  double t_max = 2000.0;
  // Stop once |M(jT)| / (pi T |log x|) falls below this for every x.
  double tail_tol = 1e-5;

  void validate() const {
    detail::require(panel_width > 0.0 && t_max >= panel_width && tail_tol > 0.0,
                    "invalid Gil-Pelaez control");
  }
};

/// F(x) = 1/2 + (1/pi) int_0^T Im(exp(-jt log x) M(jt)) / t dt for every x in
/// `xs`, with M evaluated once per quadrature node and shared across x. The
/// truncation point T grows panel by panel until the tail estimate
/// |M(jT)| / (pi T |log x|) is below tail_tol or T reaches t_max; the estimate
/// at the stopping point is returned in tail_bound. Values are clamped to [0, 1].
/// Throws EvaluationError (carrying the tail estimate reached so far) when the
/// moment function returns a non-finite value.
template <class MomentFn>
MetaCurve gil_pelaez_curve(MomentFn&& moment_at, const std::vector<double>& xs,
                           const GilPelaezControl& ctrl = {}) {
  detail::check_grid(xs);
  ctrl.validate();
  std::vector<double> log_x(xs.size());
  double min_abs_log = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    log_x[i] = std::log(xs[i]);
    min_abs_log = std::min(min_abs_log, std::abs(log_x[i]));
  }
  const auto panel = quad::composite_gauss_legendre({0.0, ctrl.panel_width});
  std::vector<double> acc(xs.size(), 0.0);
  double t0 = 0.0;
  double tail = std::numeric_limits<double>::infinity();
  while (t0 < ctrl.t_max) {
    const double width = std::min(ctrl.panel_width, ctrl.t_max - t0);
    const double scale = width / ctrl.panel_width;
    for (std::size_t k = 0; k < panel.nodes.size(); ++k) {
      const double t = t0 + panel.nodes[k] * scale;
      const complex m = moment_at(t);
      if (!std::isfinite(m.real()) || !std::isfinite(m.imag())) {
        throw EvaluationError("gil_pelaez: moment is not finite at t = " + std::to_string(t), tail);
      }
      const double w = panel.weights[k] * scale / t;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double phase = -t * log_x[i];
        acc[i] += w * (std::sin(phase) * m.real() + std::cos(phase) * m.imag());
      }
    }
    t0 += width;
    tail = std::abs(moment_at(t0)) / (std::numbers::pi * t0 * min_abs_log);
    if (tail < ctrl.tail_tol) break;
  }
  std::vector<double> values(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) values[i] = 0.5 + acc[i] / std::numbers::pi;
  MetaCurve curve = detail::finish_curve(xs, std::move(values));
  curve.tail_bound = tail;
  curve.truncation = t0;
  return curve;
}

/// Single-point Gil-Pelaez inversion; see gil_pelaez_curve.
template <class MomentFn>
double gil_pelaez_ccdf(MomentFn&& moment_at, double x, const GilPelaezControl& ctrl = {}) {
  detail::require(x > 0.0 && x < 1.0, "gil_pelaez_ccdf: x must lie in (0, 1)");
  const MetaCurve curve = gil_pelaez_curve(std::forward<MomentFn>(moment_at), {x}, ctrl);
  return curve.values[1];
}

/// M(jt) for a user class at fixed activity, with the V tables shared across t.
class ImaginaryMoment {
 public:
  ImaginaryMoment(const NetworkParams& p, double q, UserClass cls)
      : cls_(cls),
        r2_(p.ratio_threshold * p.ratio_threshold),
        v1_(p, q, InnerScale::kUnit),
        v2_(p, q, InnerScale::kRatioPow) {}

  complex operator()(double t) {
    const complex b{0.0, t};
    const complex d2 = 1.0 + v2_(b);
    if (cls_ == UserClass::kCenter) return 1.0 / d2;
    const complex d1 = 1.0 + v1_(b);
    return (1.0 / d1 - r2_ / d2) / (1.0 - r2_);
  }

 private:
  UserClass cls_;
  double r2_;
  VTable v1_;
  VTable v2_;
};

// ---------------------------------------------------------------------------
// Beta approximation

struct BetaFit {
  enum class Kind { kRegular, kDegenerate, kBoundary };
  Kind kind = Kind::kRegular;
  double shape_a = 1.0;
  double shape_b = 1.0;
  // Location of the point mass for degenerate and boundary fits.
  double point = 0.0;

  double ccdf(double x) const {
    if (x <= 0.0) return 1.0;
    if (x >= 1.0) return 0.0;
    if (kind != Kind::kRegular) return x < point ? 1.0 : 0.0;
    return 1.0 - reg_inc_beta(x, shape_a, shape_b);
  }

  double mean() const {
    return kind == Kind::kRegular ? shape_a / (shape_a + shape_b) : point;
  }

  double variance() const {
    if (kind != Kind::kRegular) return 0.0;
    const double s = shape_a + shape_b;
    return shape_a * shape_b / (s * s * (s + 1.0));
  }
};

/// Beta law with mean M1 and second moment M2. Zero variance (M2 <= M1^2)
/// gives a degenerate fit at M1; M1 in {0, 1} gives a boundary fit.
inline BetaFit beta_approximation(double m1, double m2) {
  detail::require(m1 >= 0.0 && m1 <= 1.0, "beta_approximation: M1 must lie in [0, 1]");
  detail::require(std::isfinite(m2), "beta_approximation: M2 must be finite");
  BetaFit fit;
  if (m1 <= 0.0 || m1 >= 1.0) {
    fit.kind = BetaFit::Kind::kBoundary;
    fit.point = m1;
    return fit;
  }
  const double variance = m2 - m1 * m1;
  detail::require(m2 <= m1 * (1.0 + 1e-12), "beta_approximation: M2 must not exceed M1");
  if (variance <= 1e-15 * m1) {
    fit.kind = BetaFit::Kind::kDegenerate;
    fit.point = m1;
    return fit;
  }
  fit.shape_b = (m1 - m2) * (1.0 - m1) / variance;
  fit.shape_a = m1 * fit.shape_b / (1.0 - m1);
  if (!(fit.shape_b > 0.0) || !(fit.shape_a > 0.0)) {
    fit.kind = BetaFit::Kind::kDegenerate;
    fit.point = m1;
  }
  return fit;
}

inline MetaCurve beta_curve(const BetaFit& fit, const std::vector<double>& xs) {
  detail::check_grid(xs);
  std::vector<double> values(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) values[i] = fit.ccdf(xs[i]);
  return detail::finish_curve(xs, std::move(values));
}

// ---------------------------------------------------------------------------
// Class-level meta distribution

enum class MetaMethod { kGilPelaez, kBeta };

inline std::string_view to_string(MetaMethod m) {
  return m == MetaMethod::kGilPelaez ? "gil_pelaez" : "beta";
}

inline MetaMethod parse_meta_method(std::string_view s) {
  if (s == "gil_pelaez" || s == "gil-pelaez" || s == "exact") return MetaMethod::kGilPelaez;
  if (s == "beta") return MetaMethod::kBeta;
  throw DomainError("unknown meta-distribution method '" + std::string(s) + "'");
}

inline BetaFit beta_fit_for(const NetworkParams& p, const ActivityModel& activity, UserClass cls) {
  const double m1 = moment(MomentOrder::real(1.0), p, activity, cls).real();
  const double m2 = moment(MomentOrder::real(2.0), p, activity, cls).real();
  return beta_approximation(m1, m2);
}

inline MetaCurve meta_distribution(const NetworkParams& p, const ActivityModel& activity,
                                   UserClass cls, MetaMethod method,
                                   const std::vector<double>& xs = default_grid(),
                                   const GilPelaezControl& ctrl = {}) {
  p.validate();
  activity.validate();
  detail::check_grid(xs);
  const double q = activity.effective(p);
  if (q == 0.0) {
    // No interference: P = 1 almost surely.
    return detail::finish_curve(xs, std::vector<double>(xs.size(), 1.0));
  }
  if (method == MetaMethod::kBeta) return beta_curve(beta_fit_for(p, activity, cls), xs);
  return gil_pelaez_curve(ImaginaryMoment(p, q, cls), xs, ctrl);
}

// ---------------------------------------------------------------------------
// Little's-law activity coupling

namespace detail {

// Cell sizes nu = 1, 2, ... with weights g(nu) / (1 - g(0)), stopping at the
// first nu with nu * xi >= 1 (every larger cell is saturated) or once the
// remaining mass is negligible. `saturated_mass` receives the weight lumped
// into the activity-1 atom.
struct CellWeights {
  std::vector<double> weights;  // weights[i] belongs to nu = i + 1
  double saturated_mass = 0.0;
};

inline CellWeights cell_weights(double xi, double load_ratio) {
  CellWeights out;
  const double norm = 1.0 - cell_load_pmf(0, load_ratio);
  double used = 0.0;
  for (int nu = 1;; ++nu) {
    if (nu * xi >= 1.0 || 1.0 - used < 1e-14) break;
    const double w = cell_load_pmf(nu, load_ratio) / norm;
    out.weights.push_back(w);
    used += w;
  }
  out.saturated_mass = std::max(0.0, 1.0 - used);
  return out;
}

// E[min(1, c / P)^n] for a piecewise-linear CCDF and 0 < c < 1:
//   P(P <= c) + c^n * int_c^1 s^(-n) (-dF(s)),
// where -dF is constant on each grid interval.
inline double capped_ratio_moment(const MetaCurve& curve, double c, int n) {
  double sum = 1.0 - curve.at(c);
  const auto& g = curve.grid;
  const auto& f = curve.values;
  for (std::size_t i = 1; i < g.size(); ++i) {
    const double s0 = std::max(g[i - 1], c);
    const double s1 = g[i];
    if (s1 <= s0) continue;
    const double density = -(f[i] - f[i - 1]) / (g[i] - g[i - 1]);
    if (density == 0.0) continue;
    // int_{s0}^{s1} (c / s)^n ds
    const double piece = n == 1 ? c * std::log(s1 / s0)
                                : c * (std::pow(c / s0, n - 1) - std::pow(c / s1, n - 1)) / (n - 1);
    sum += density * piece;
  }
  return std::min(sum, 1.0);
}

}  // namespace detail

/// n-th moment of the per-cell activity min(1, nu xi / P), averaged over the
/// cell-size law (cells with at least one user) and over P ~ curve.
inline double mean_active_moment(const MetaCurve& curve, double xi, double load_ratio, int n) {
  detail::require(xi >= 0.0 && xi <= 1.0, "arrival rate must lie in [0, 1]");
  detail::require(load_ratio > 0.0, "load ratio must be > 0");
  detail::require(n >= 1, "moment order must be >= 1");
  if (xi == 0.0) return 0.0;
  const auto cells = detail::cell_weights(xi, load_ratio);
  double sum = cells.saturated_mass;
  for (std::size_t i = 0; i < cells.weights.size(); ++i) {
    sum += cells.weights[i] * detail::capped_ratio_moment(curve, (i + 1.0) * xi, n);
  }
  return std::clamp(sum, 0.0, 1.0);
}

/// Mean active probability E[q] implied by a meta distribution and arrival rate xi.
inline double mean_active_probability(const MetaCurve& curve, double xi, double load_ratio) {
  return mean_active_moment(curve, xi, load_ratio, 1);
}

// ---------------------------------------------------------------------------
// Fixed point

enum class FixedPointMode { kSimultaneous, kRecursiveTemporal };

/// How the activity enters the moments: through its mean (kMean) or through all
/// of its moments E[q^n] in the binomial series (kMomentFunctional; beta method only).
enum class ActivityCoupling { kMean, kMomentFunctional };

struct FixedPointOptions {
  MetaMethod method = MetaMethod::kGilPelaez;
  FixedPointMode mode = FixedPointMode::kSimultaneous;
  ActivityCoupling coupling = ActivityCoupling::kMean;
  double damping = 0.5;
  double tolerance = 1e-5;
  int max_iterations = 200;
  std::vector<double> grid = default_grid();
  GilPelaezControl gp{};
};

struct FixedPointResult {
  double q_star = 0.0;
  MetaCurve curve;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  bool saturated = false;
  std::vector<double> history;
};

namespace detail {

// V with E[q^n] in place of q^n in the binomial series (real orders only).
inline double v_series_functional(const NetworkParams& p, double b,
                                  const std::vector<double>& q_moments, InnerScale scale) {
  const double delta = p.delta();
  const double z = p.sir_threshold * inner_scale_factor(p, scale);
  double sum = 0.0;
  double binom = 1.0;
  double power = 1.0;
  for (std::size_t n = 1; n <= q_moments.size(); ++n) {
    binom *= (b - static_cast<double>(n - 1)) / static_cast<double>(n);
    if (binom == 0.0) return sum;
    power *= z;
    const double sign = (n % 2 == 1) ? 1.0 : -1.0;
    const double term = delta * binom * sign * q_moments[n - 1] * power / (n - delta) *
                        gauss_2f1(static_cast<double>(n), delta, z);
    sum += term;
    if (std::abs(term) < 1e-13 * std::abs(sum)) return sum;
  }
  throw EvaluationError("activity-moment series did not converge", std::abs(sum));
}

inline double functional_moment(const NetworkParams& p, double b,
                                const std::vector<double>& q_moments, UserClass cls) {
  const double d2 = 1.0 + v_series_functional(p, b, q_moments, InnerScale::kRatioPow);
  if (cls == UserClass::kCenter) return 1.0 / d2;
  const double r2 = p.ratio_threshold * p.ratio_threshold;
  const double d1 = 1.0 + v_series_functional(p, b, q_moments, InnerScale::kUnit);
  return (1.0 / d1 - r2 / d2) / (1.0 - r2);
}

}  // namespace detail

/// Solves q = E[q](curve(q)) for the homogeneous all-CCU or all-CEU network.
/// Simultaneous mode damps the Picard step, q <- (1 - w) q + w E[q]; recursive
/// temporal mode takes the undamped step (one slot per step). Starts at q = xi.
/// Never throws on non-convergence; the residual and flags report the outcome.
inline FixedPointResult fixed_point_solve(const NetworkParams& p, double xi, UserClass cls,
                                          const FixedPointOptions& opt = {}) {
  p.validate();
  detail::require(xi >= 0.0 && xi <= 1.0, "arrival rate must lie in [0, 1]");
  detail::require(opt.damping > 0.0 && opt.damping <= 1.0, "damping must lie in (0, 1]");
  detail::require(opt.tolerance > 0.0 && opt.max_iterations >= 1, "invalid fixed-point control");
  detail::require(opt.coupling == ActivityCoupling::kMean || opt.method == MetaMethod::kBeta,
                  "the moment-functional coupling is available with the beta method only");
  const double omega = opt.mode == FixedPointMode::kRecursiveTemporal ? 1.0 : opt.damping;
  const double load = p.load_ratio();

  FixedPointResult result;
  double q = xi;
  // Activity moments E[q^n] for the functional coupling; start from a point mass at xi.
  constexpr int kMomentTerms = 400;
  std::vector<double> q_moments(kMomentTerms);
  for (int n = 0; n < kMomentTerms; ++n) q_moments[n] = std::pow(xi, n + 1);

  auto curve_at = [&](double activity) {
    if (opt.coupling == ActivityCoupling::kMean) {
      return meta_distribution(p, ActivityModel{activity}, cls, opt.method, opt.grid, opt.gp);
    }
    const double m1 = detail::functional_moment(p, 1.0, q_moments, cls);
    const double m2 = detail::functional_moment(p, 2.0, q_moments, cls);
    return beta_curve(beta_approximation(m1, m2), opt.grid);
  };

  result.history.push_back(q);
  for (int k = 1; k <= opt.max_iterations; ++k) {
    MetaCurve curve = curve_at(q);
    const double target = mean_active_probability(curve, xi, load);
    const double next = std::clamp((1.0 - omega) * q + omega * target, xi, 1.0);
    if (opt.coupling == ActivityCoupling::kMomentFunctional) {
      for (int n = 0; n < kMomentTerms; ++n) {
        const double fresh = mean_active_moment(curve, xi, load, n + 1);
        q_moments[n] = (1.0 - omega) * q_moments[n] + omega * fresh;
      }
    }
    result.iterations = k;
    result.residual = std::abs(next - q);
    q = next;
    result.history.push_back(q);
    result.curve = std::move(curve);
    if (result.residual < opt.tolerance) {
      result.converged = true;
      break;
    }
  }
  result.q_star = q;
  result.saturated = q >= 1.0 - 1e-5;
  if (result.converged && result.residual > 0.0) result.curve = curve_at(q);
  return result;
}

enum class StabilityVerdict { kStable, kUnstable, kUndetermined };

inline std::string_view to_string(StabilityVerdict v) {
  switch (v) {
    case StabilityVerdict::kStable:
      return "stable";
    case StabilityVerdict::kUnstable:
      return "unstable";
    case StabilityVerdict::kUndetermined:
      break;
  }
  return "undetermined";
}

/// Empirical verdict: unstable iff the activity saturates, stable iff the
/// iteration converged short of saturation.
inline StabilityVerdict stability_verdict(const FixedPointResult& r) {
  if (r.saturated) return StabilityVerdict::kUnstable;
  if (r.converged) return StabilityVerdict::kStable;
  return StabilityVerdict::kUndetermined;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_curve_csv(const MetaCurve& curve, std::ostream& out) {
  out << std::setprecision(17);
  out << "x,ccdf\n";
  for (std::size_t i = 0; i < curve.grid.size(); ++i) {
    out << curve.grid[i] << ',' << curve.values[i] << '\n';
  }
}

inline MetaCurve read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "x,ccdf") throw DomainError("curve CSV: unexpected header");
  MetaCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DomainError("curve CSV: malformed row '" + line + "'");
    curve.grid.push_back(std::stod(line.substr(0, comma)));
    curve.values.push_back(std::stod(line.substr(comma + 1)));
  }
  if (curve.grid.size() < 2) throw DomainError("curve CSV: fewer than two rows");
  return curve;
}

inline void write_fixed_point(const FixedPointResult& r, std::ostream& out) {
  out << std::setprecision(17);
  out << "q_star=" << r.q_star << '\n'
      << "iterations=" << r.iterations << '\n'
      << "residual=" << r.residual << '\n'
      << "converged=" << (r.converged ? "true" : "false") << '\n'
      << "saturated=" << (r.saturated ? "true" : "false") << '\n'
      << "verdict=" << to_string(stability_verdict(r)) << '\n';
}

}  // namespace ccmeta
