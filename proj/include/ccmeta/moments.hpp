#pragma once

// Moments of the conditional success probability for cell-center (CCU) and
// cell-edge (CEU) users under i.i.d. interferer activity q, the mean local
// delay with its phase transition, and quadrature oracles built directly on
// the probability generating functional of the PPP.
//
// Notation: delta = 2 / alpha, z = theta * s with s = 1 (interferers beyond the
// serving distance) or s = R^alpha (interferers beyond r / R), and
//   V(b) = delta * sum_{n>=1} binom(b, n) (-1)^(n+1) (q z)^n / (n - delta)
//                * 2F1(n, n - delta; n - delta + 1; -z)
//        = delta * int_0^1 t^(-delta-1) [1 - (1 - q z t / (1 + z t))^b] dt.

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>
#include <algorithm>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "ccmeta/error.hpp"
#include "ccmeta/geometry.hpp"
#include "ccmeta/params.hpp"
#include "ccmeta/quadrature.hpp"
#include "ccmeta/specialfn.hpp"

namespace ccmeta {

/// Order b of a moment E[P^b]; real for moments and the local delay, purely
/// imaginary for Gil-Pelaez inversion.
struct MomentOrder {
  complex b{1.0, 0.0};

  static MomentOrder real(double b) { return MomentOrder{complex{b, 0.0}}; }
  static MomentOrder imaginary(double t) { return MomentOrder{complex{0.0, t}}; }
};

/// Reserved-band scenarios thin the interferer activity by the class share.
enum class Thinning { kNone, kReservedCenter, kReservedEdge };

struct ActivityModel {
  double q = 1.0;
  Thinning thinning = Thinning::kNone;

  double effective(const NetworkParams& p) const {
    const double r2 = p.ratio_threshold * p.ratio_threshold;
    switch (thinning) {
      case Thinning::kReservedCenter:
        return q * r2;
      case Thinning::kReservedEdge:
        return q * (1.0 - r2);
      case Thinning::kNone:
        break;
    }
    return q;
  }

  void validate() const {
    detail::require(q >= 0.0 && q <= 1.0, "activity q must lie in [0, 1]");
  }
};

struct MomentResult {
  complex value{1.0, 0.0};
  int terms_used = 0;
  double truncation_error_bound = 0.0;

  double real() const { return value.real(); }
};

/// Which distance the interferer field starts from, in units of the serving distance.
enum class InnerScale { kUnit, kRatioPow };

/// How V(b) is evaluated. kAuto sums the series for |b| <= 8 and falls back to
/// the integral form for larger orders or when the series loses precision.
enum class VMethod { kAuto, kSeries, kIntegral };

struct VResult {
  complex value{0.0, 0.0};
  int terms_used = 0;
  double truncation_error_bound = 0.0;
};

namespace detail {

inline double inner_scale_factor(const NetworkParams& p, InnerScale scale) {
  return scale == InnerScale::kUnit ? 1.0 : std::pow(p.ratio_threshold, p.pathloss_exponent);
}

// 1 - exp(x) for complex x without cancellation near 0.
inline complex one_minus_exp(complex x) {
  if (std::abs(x) < 1e-4) {
    return -x * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0);
  }
  return 1.0 - std::exp(x);
}

}  // namespace detail

/// V(theta, b) by the binomial series (V1 for kUnit, V2 for kRatioPow).
/// Throws EvaluationError when the term budget is exhausted or when terms are
/// more than 1e6 times larger than the sum (catastrophic cancellation).
inline VResult v_series(const NetworkParams& p, complex b, double q, InnerScale scale,
                        const SeriesControl& ctrl = {}) {
  p.validate();
  ctrl.validate();
  detail::require(q >= 0.0 && q <= 1.0, "v_series: q must lie in [0, 1]");
  VResult out;
  if (q == 0.0) return out;

  const double delta = p.delta();
  const double z = p.sir_threshold * detail::inner_scale_factor(p, scale);
  const double qz = q * z;
  complex sum{0.0, 0.0};
  complex binom{1.0, 0.0};
  double largest = 0.0;
  double power = 1.0;
  for (int n = 1; n <= ctrl.max_terms; ++n) {
    binom *= (b - static_cast<double>(n - 1)) / static_cast<double>(n);
    power *= qz;
    const double sign = (n % 2 == 1) ? 1.0 : -1.0;
    const complex term = delta * binom * sign * power / (n - delta) * gauss_2f1(n, delta, z, ctrl);
    sum += term;
    largest = std::max(largest, std::abs(term));
    out.terms_used = n;
    if (ctrl.converged(std::abs(term), std::abs(sum))) {
      // The term ratio tends to q z / (1 + z) < 1, so the tail is bounded
      // geometrically once the binomial ratio has settled.
      const double ratio = q * z / (1.0 + z) * std::abs(b - static_cast<double>(n)) / (n + 1.0);
      out.truncation_error_bound = ratio < 1.0 ? std::abs(term) * ratio / (1.0 - ratio)
                                               : std::abs(term);
      if (largest > 1e6 * std::max(std::abs(sum), 1e-300) && std::abs(sum) > 0.0) {
        throw EvaluationError("v_series: catastrophic cancellation for |b| = " +
                                  std::to_string(std::abs(b)),
                              largest * 1e-16);
      }
      out.value = sum;
      return out;
    }
  }
  throw EvaluationError("v_series: exceeded max_terms", std::abs(sum));
}

/// V(theta, b) from its integral representation (valid for any complex b).
inline VResult v_integral(const NetworkParams& p, complex b, double q, InnerScale scale,
                          quad::Tolerance tol = {}) {
  p.validate();
  detail::require(q >= 0.0 && q <= 1.0, "v_integral: q must lie in [0, 1]");
  VResult out;
  if (q == 0.0) return out;
  const double delta = p.delta();
  const double z = p.sir_threshold * detail::inner_scale_factor(p, scale);
  // t = u^k with k = 1 / (1 - delta) removes the t^(-delta-1) endpoint singularity.
  const double k = 1.0 / (1.0 - delta);
  auto integrand = [&](double u) -> complex {
    if (u <= 0.0) return b * q * z * k;
    const double t = std::pow(u, k);
    const double y = z * t / (1.0 + z * t);
    const double log_base = std::log1p(-q * y);
    return k * std::pow(u, -k) * detail::one_minus_exp(b * log_base);
  };
  out.value = delta * quad::integrate(integrand, 0.0, 1.0, tol);
  return out;
}

inline VResult v_function(const NetworkParams& p, complex b, double q, InnerScale scale,
                          const SeriesControl& ctrl = {}, VMethod method = VMethod::kAuto) {
  switch (method) {
    case VMethod::kSeries:
      return v_series(p, b, q, scale, ctrl);
    case VMethod::kIntegral:
      return v_integral(p, b, q, scale);
    case VMethod::kAuto:
      break;
  }
  if (std::abs(b) <= 8.0) {
    try {
      return v_series(p, b, q, scale, ctrl);
    } catch (const EvaluationError&) {
    }
  }
  return v_integral(p, b, q, scale);
}

/// V(theta, b) for many orders b at fixed (q, z), as used by Gil-Pelaez
/// inversion. In l = -log(1 - q z t / (1 + z t)) the integral representation is
///   V(b) = delta * int_0^{l1} t(l)^(-delta-1) t'(l) (1 - exp(-b l)) dl,
/// so the b-dependence sits in one exponential. Composite 16-point
/// Gauss-Legendre rules with panel width ~12 / |b| are built once per
/// power-of-two band of |b| and cached.
class VTable {
 public:
  VTable(const NetworkParams& p, double q, InnerScale scale) : delta_(p.delta()), q_(q) {
    p.validate();
    detail::require(q >= 0.0 && q <= 1.0, "VTable: q must lie in [0, 1]");
    z_ = p.sir_threshold * detail::inner_scale_factor(p, scale);
    l_end_ = -std::log1p(-q_ * z_ / (1.0 + z_));
  }

  complex operator()(complex b) {
    if (q_ == 0.0) return {0.0, 0.0};
    const double mag = std::abs(b);
    const int band = mag <= 1.0 ? 0 : static_cast<int>(std::ceil(std::log2(mag)));
    if (band >= static_cast<int>(rules_.size())) rules_.resize(band + 1);
    auto& rule = rules_[band];
    if (rule.nodes.empty()) rule = build(std::ldexp(1.0, band));
    complex sum{0.0, 0.0};
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      sum += rule.weights[i] * detail::one_minus_exp(-b * rule.nodes[i]);
    }
    return sum;
  }

 private:
  struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;
  };

  // delta * t^(-delta-1) * dt/dl at l.
  double density(double l) const {
    const double y = -std::expm1(-l);
    const double gap = q_ - y;
    const double t = y / (z_ * gap);
    const double dt = q_ * std::exp(-l) / (z_ * gap * gap);
    return delta_ * std::pow(t, -delta_ - 1.0) * dt;
  }

  Rule build(double max_order) const {
    constexpr double kPhasePerPanel = 12.0;
    const int panels = std::max(8, static_cast<int>(std::ceil(l_end_ * max_order / kPhasePerPanel)));
    const double h = l_end_ / panels;
    const double k = 1.0 / (1.0 - delta_);
    // [0, h / k] in l = (h / k) u^k absorbs the l^(-delta) endpoint behaviour.
    const double first = h / k;
    Rule rule;
    const auto sub = quad::composite_gauss_legendre({0.0, 1.0});
    for (std::size_t i = 0; i < sub.nodes.size(); ++i) {
      const double u = sub.nodes[i];
      const double l = first * std::pow(u, k);
      rule.nodes.push_back(l);
      rule.weights.push_back(sub.weights[i] * density(l) * first * k * std::pow(u, k - 1.0));
    }
    std::vector<double> edges{first};
    for (int j = 1; j <= panels; ++j) edges.push_back(std::max(first, j * h));
    edges.back() = l_end_;
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    const auto body = quad::composite_gauss_legendre(edges);
    for (std::size_t i = 0; i < body.nodes.size(); ++i) {
      rule.nodes.push_back(body.nodes[i]);
      rule.weights.push_back(body.weights[i] * density(body.nodes[i]));
    }
    return rule;
  }

  double delta_;
  double q_;
  double z_ = 0.0;
  double l_end_ = 0.0;
  std::vector<Rule> rules_;
};

/// b-th moment for a CCU: (1 + V2(theta, b))^(-1). Infinite when the bracket
/// is not positive (possible only for negative real b).
inline MomentResult moment_ccu(MomentOrder order, const NetworkParams& p,
                               const ActivityModel& activity, const SeriesControl& ctrl = {},
                               VMethod method = VMethod::kAuto) {
  activity.validate();
  const double q = activity.effective(p);
  const VResult v2 = v_function(p, order.b, q, InnerScale::kRatioPow, ctrl, method);
  MomentResult out;
  out.terms_used = v2.terms_used;
  const complex denom = 1.0 + v2.value;
  if (order.b.imag() == 0.0 && denom.real() <= 0.0) {
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  out.value = 1.0 / denom;
  out.truncation_error_bound = v2.truncation_error_bound / std::norm(denom);
  return out;
}

namespace detail {

// 2 pi lambda int_{lo}^{hi} (1 - g(x)^b) x dx with g(x) = 1 - q s / (1 + s),
// s = theta (r / x)^alpha. `hi` may be +inf. Evaluated in w = lo / x.
inline double pgfl_exponent(double b, double q, double r, double lo, double hi,
                            const NetworkParams& p) {
  thread_local boost::math::quadrature::tanh_sinh<double> rule;
  const double w_min = std::isinf(hi) ? 0.0 : lo / hi;
  // s = theta (r / x)^alpha = c w^alpha; (1 - g^b) / s is kept finite as s -> 0.
  const double c = p.sir_threshold * std::pow(r / lo, p.pathloss_exponent);
  auto integrand = [&](double w) {
    if (w <= 0.0) return 0.0;
    const double s = c * std::pow(w, p.pathloss_exponent);
    const double y = q * s / (1.0 + s);
    const double per_s = s < 1e-12 ? b * q : -std::expm1(b * std::log1p(-y)) / s;
    return per_s * c * std::pow(w, p.pathloss_exponent - 3.0) * lo * lo;
  };
  return 2.0 * std::numbers::pi * p.bs_density * rule.integrate(integrand, w_min, 1.0, 1e-12);
}

// Dimensionless outer integral over the serving distance r = scale * rho.
template <class F>
double outer_distance_integral(F&& integrand_in_r, double scale) {
  auto f = [&](double rho) { return rho <= 0.0 ? 0.0 : scale * integrand_in_r(scale * rho); };
  return quad::integrate(f, 0.0, std::numeric_limits<double>::infinity(), {1e-11, 18});
}

}  // namespace detail

/// Independent quadrature of the CCU moment for real b: an outer integral over
/// the serving distance against the CCU density and an inner integral of the
/// PGFL exponent over interferers beyond r / R, bypassing the binomial series.
/// Returns +inf when the outer integral diverges (b < 0 past the phase transition).
inline double moment_ccu_quadrature(double b, const NetworkParams& p,
                                    const ActivityModel& activity) {
  p.validate();
  activity.validate();
  const double q = activity.effective(p);
  if (q == 0.0 || b == 0.0) return 1.0;
  const double ratio = p.ratio_threshold;
  const double inf = std::numeric_limits<double>::infinity();
  const double scale = ratio / std::sqrt(std::numbers::pi * p.bs_density);

  // Both exponents scale with r^2; compare them at r = scale to detect divergence.
  const double geometric = std::numbers::pi * p.bs_density * scale * scale / (ratio * ratio);
  const double interference = detail::pgfl_exponent(b, q, scale, scale / ratio, inf, p);
  if (geometric + interference <= 0.0) return inf;

  // Density and PGFL combined in one exponent: for b < 0 the factors alone under/overflow.
  auto integrand = [&](double r) {
    const double density_exponent = std::numbers::pi * p.bs_density * r * r / (ratio * ratio);
    return 2.0 * std::numbers::pi * p.bs_density * r / (ratio * ratio) *
           std::exp(-density_exponent - detail::pgfl_exponent(b, q, r, r / ratio, inf, p));
  };
  return detail::outer_distance_integral(integrand, scale);
}

/// Independent quadrature of the exact CEU moment for real b. Given the serving
/// distance r, the ring r < |x| < r / R holds at least one BS (that is what makes
/// the user a CEU) and the field beyond r / R is an unconditioned PPP.
inline double moment_ceu_quadrature(double b, const NetworkParams& p,
                                    const ActivityModel& activity) {
  p.validate();
  activity.validate();
  const double q = activity.effective(p);
  if (q == 0.0 || b == 0.0) return 1.0;
  const double ratio = p.ratio_threshold;
  const double r2 = ratio * ratio;
  const double lam = p.bs_density;
  const double pi = std::numbers::pi;
  const double inf = std::numeric_limits<double>::infinity();
  const double scale = 1.0 / std::sqrt(pi * lam);

  const double ring_probe = detail::pgfl_exponent(b, q, scale, scale, scale / ratio, p);
  const double outer_probe = detail::pgfl_exponent(b, q, scale, scale / ratio, inf, p);
  if (1.0 + ring_probe + outer_probe <= 0.0 || 1.0 / r2 + outer_probe <= 0.0) return inf;

  auto integrand = [&](double r) {
    const double ring = detail::pgfl_exponent(b, q, r, r, r / ratio, p);
    const double outer = detail::pgfl_exponent(b, q, r, r / ratio, inf, p);
    const double void_ring = pi * lam * r * r * (1.0 / r2 - 1.0);
    const double nearest = pi * lam * r * r;
    return 2.0 * pi * lam * r *
           (std::exp(-nearest - ring - outer) - std::exp(-nearest - void_ring - outer)) / (1.0 - r2);
  };
  return detail::outer_distance_integral(integrand, scale);
}

namespace detail {

struct CeuV {
  VResult v1;
  VResult v2;
};

inline CeuV ceu_v(MomentOrder order, const NetworkParams& p, double q, const SeriesControl& ctrl,
                  VMethod method) {
  return {v_function(p, order.b, q, InnerScale::kUnit, ctrl, method),
          v_function(p, order.b, q, InnerScale::kRatioPow, ctrl, method)};
}

inline bool is_real_negative(MomentOrder order) {
  return order.b.imag() == 0.0 && order.b.real() < 0.0;
}

inline void check_real_moment(MomentOrder order, complex value, const char* what) {
  if (order.b.imag() != 0.0 || order.b.real() <= 0.0) return;
  constexpr double kSlack = 1e-9;
  if (value.real() < -kSlack || value.real() > 1.0 + kSlack) {
    throw EvaluationError(std::string(what) + ": moment outside [0, 1], formula and evaluation disagree",
                          std::abs(value));
  }
}

}  // namespace detail

/// CEU moment with the dominant-interferer ring conditioned on holding at least
/// one BS. The integral over the serving distance resums (its
/// series in t telescopes) to
///   (1 / (1 - R^2)) * (1 / (1 + V1) - R^2 / (1 + V2)).
/// Since "at least one BS in the ring" is exactly the CEU event, this is the
/// unconditional CEU moment under i.i.d. activity q of every interferer.
inline MomentResult moment_ceu_dominant_active(MomentOrder order, const NetworkParams& p,
                                               const ActivityModel& activity,
                                               const SeriesControl& ctrl = {},
                                               VMethod method = VMethod::kAuto) {
  activity.validate();
  const double q = activity.effective(p);
  const double r2 = p.ratio_threshold * p.ratio_threshold;
  const auto v = detail::ceu_v(order, p, q, ctrl, method);
  MomentResult out;
  out.terms_used = v.v1.terms_used + v.v2.terms_used;
  const complex d1 = 1.0 + v.v1.value;
  const complex d2 = 1.0 + v.v2.value;
  if (detail::is_real_negative(order) && (d1.real() <= 0.0 || d2.real() <= 0.0)) {
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  out.value = (1.0 / d1 - r2 / d2) / (1.0 - r2);
  out.truncation_error_bound =
      (v.v1.truncation_error_bound / std::norm(d1) + r2 * v.v2.truncation_error_bound / std::norm(d2)) /
      (1.0 - r2);
  detail::check_real_moment(order, out.value, "moment_ceu_dominant_active");
  return out;
}

/// The same CEU moment as the truncated triple sum over (t, l, m) obtained by
/// expanding 1 / (1 - exp(-C(r))) in a Maclaurin series. Terms decay like
/// 1 / t^2; truncation_error_bound is the exact remainder after `t_terms` terms.
inline MomentResult moment_ceu_dominant_active_series(MomentOrder order, const NetworkParams& p,
                                                      const ActivityModel& activity, int t_terms,
                                                      const SeriesControl& ctrl = {},
                                                      VMethod method = VMethod::kAuto) {
  activity.validate();
  detail::require(t_terms >= 1, "t_terms must be >= 1");
  const double q = activity.effective(p);
  const double r2 = p.ratio_threshold * p.ratio_threshold;
  const auto v = detail::ceu_v(order, p, q, ctrl, method);
  complex sum{0.0, 0.0};
  for (int t = 0; t < t_terms; ++t) {
    for (int l = 0; l <= 1; ++l) {
      for (int m = 0; m <= 1; ++m) {
        const double sign = ((l + m + 1) % 2 == 0) ? 1.0 : -1.0;
        // m = 0 pairs with V1, m = 1 with V2.
        const complex v_term = m == 0 ? r2 * v.v1.value : v.v2.value;
        const complex denom = (t + m) * (1.0 - r2) + v_term + std::pow(r2, l);
        sum += sign / denom;
      }
    }
  }
  MomentResult out;
  out.terms_used = t_terms;
  out.value = r2 / (1.0 - r2) * sum;
  // Each (l) pair telescopes; what remains is the first omitted numerator.
  const complex rest_a = 1.0 / (t_terms * (1.0 - r2) + r2 * v.v1.value + r2);
  const complex rest_b = 1.0 / ((t_terms + 1) * (1.0 - r2) + v.v2.value + r2);
  out.truncation_error_bound = std::abs(r2 / (1.0 - r2) * (rest_a - rest_b));
  return out;
}

/// CEU moment with the ring condition relaxed: interferers form a PPP beyond
/// the serving distance, averaged over the CEU serving-distance law:
///   (1 / (1 - R^2)) * (1 / (1 + V1) - R^2 / (1 + R^2 V1)).
inline MomentResult moment_ceu_dominant_inactive(MomentOrder order, const NetworkParams& p,
                                                 const ActivityModel& activity,
                                                 const SeriesControl& ctrl = {},
                                                 VMethod method = VMethod::kAuto) {
  activity.validate();
  const double q = activity.effective(p);
  const double r2 = p.ratio_threshold * p.ratio_threshold;
  const VResult v1 = v_function(p, order.b, q, InnerScale::kUnit, ctrl, method);
  MomentResult out;
  out.terms_used = v1.terms_used;
  const complex d1 = 1.0 + v1.value;
  const complex d2 = 1.0 + r2 * v1.value;
  if (detail::is_real_negative(order) && (d1.real() <= 0.0 || d2.real() <= 0.0)) {
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  out.value = (1.0 / d1 - r2 / d2) / (1.0 - r2);
  out.truncation_error_bound =
      v1.truncation_error_bound * (1.0 / std::norm(d1) + r2 * r2 / std::norm(d2)) / (1.0 - r2);
  detail::check_real_moment(order, out.value, "moment_ceu_dominant_inactive");
  return out;
}

/// The activity-weighted combination q * M_e1 + (1 - q) * M_e2. Kept for
/// comparison only: the dominant interferer's activity is already inside M_e1,
/// so this overstates the CEU moment (by up to ~25% for M2 at 5 dB, q = 0.7).
inline MomentResult moment_ceu_mixture(MomentOrder order, const NetworkParams& p,
                                       const ActivityModel& activity,
                                       const SeriesControl& ctrl = {},
                                       VMethod method = VMethod::kAuto) {
  const double q = activity.effective(p);
  const MomentResult active = moment_ceu_dominant_active(order, p, activity, ctrl, method);
  const MomentResult inactive = moment_ceu_dominant_inactive(order, p, activity, ctrl, method);
  MomentResult out;
  out.terms_used = active.terms_used + inactive.terms_used;
  if (q == 1.0) return active;
  if (q == 0.0) return inactive;
  out.value = q * active.value + (1.0 - q) * inactive.value;
  out.truncation_error_bound =
      q * active.truncation_error_bound + (1.0 - q) * inactive.truncation_error_bound;
  return out;
}

/// b-th moment for a CEU (exact under i.i.d. activity; see moment_ceu_dominant_active).
inline MomentResult moment_ceu(MomentOrder order, const NetworkParams& p,
                               const ActivityModel& activity, const SeriesControl& ctrl = {},
                               VMethod method = VMethod::kAuto) {
  return moment_ceu_dominant_active(order, p, activity, ctrl, method);
}

inline MomentResult moment(MomentOrder order, const NetworkParams& p,
                           const ActivityModel& activity, UserClass cls,
                           const SeriesControl& ctrl = {}, VMethod method = VMethod::kAuto) {
  return cls == UserClass::kCenter ? moment_ccu(order, p, activity, ctrl, method)
                                   : moment_ceu(order, p, activity, ctrl, method);
}

/// Left side of the critical-value equation: |V(theta, -1)| in closed form,
///   q theta s delta / (1 - delta) * 2F1(1, 1 - delta; 2 - delta; -(1 - q) theta s),
/// with s = R^alpha for a CCU and s = 1 for a CEU. The mean local delay is
/// finite iff this is < 1.
inline double delay_divergence_term(const NetworkParams& p, double q, UserClass cls) {
  detail::require(q >= 0.0 && q <= 1.0, "q must lie in [0, 1]");
  const double delta = p.delta();
  const double s = cls == UserClass::kCenter
                       ? detail::inner_scale_factor(p, InnerScale::kRatioPow)
                       : 1.0;
  const double z = p.sir_threshold * s;
  return q * z * delta / (1.0 - delta) * gauss_2f1(1.0, delta, (1.0 - q) * z);
}

/// Mean local delay E[1 / P] for the class; +inf past the phase transition.
/// CCU: 1 / (1 - T_c). CEU: (1 / (1 - R^2)) (1 / (1 - T_1) - R^2 / (1 - T_2)).
inline double mean_local_delay(const NetworkParams& p, const ActivityModel& activity,
                               UserClass cls) {
  p.validate();
  activity.validate();
  const double q = activity.effective(p);
  const double inf = std::numeric_limits<double>::infinity();
  if (cls == UserClass::kCenter) {
    const double t = delay_divergence_term(p, q, UserClass::kCenter);
    return t >= 1.0 ? inf : 1.0 / (1.0 - t);
  }
  const double r2 = p.ratio_threshold * p.ratio_threshold;
  const double t1 = delay_divergence_term(p, q, UserClass::kEdge);
  const double t2 = delay_divergence_term(p, q, UserClass::kCenter);
  if (t1 >= 1.0 || t2 >= 1.0) return inf;
  return (1.0 / (1.0 - t1) - r2 / (1.0 - t2)) / (1.0 - r2);
}

/// Smallest activity q in (0, 1] at which the mean local delay becomes
/// infinite, by bisection to 1e-6; std::nullopt when it is finite for every q.
inline std::optional<double> critical_activity(const NetworkParams& p, UserClass cls) {
  p.validate();
  if (delay_divergence_term(p, 1.0, cls) < 1.0) return std::nullopt;
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-7) {
    const double mid = 0.5 * (lo + hi);
    (delay_divergence_term(p, mid, cls) >= 1.0 ? hi : lo) = mid;
  }
  return hi;
}

/// Smallest SIR threshold (linear) at which the mean local delay becomes
/// infinite for fixed activity q; bisection in log(theta) over
/// [1e-12, theta_max]. std::nullopt when the delay stays finite up to theta_max.
inline std::optional<double> critical_theta(const NetworkParams& p, double q, UserClass cls,
                                            double theta_max = 1e12) {
  p.validate();
  detail::require(q >= 0.0 && q <= 1.0, "q must lie in [0, 1]");
  auto term = [&](double log_theta) {
    return delay_divergence_term(p.with_theta(std::exp(log_theta)), q, cls);
  };
  double lo = std::log(1e-12);
  double hi = std::log(theta_max);
  if (q == 0.0 || term(hi) < 1.0) return std::nullopt;
  if (term(lo) >= 1.0) return std::exp(lo);
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    (term(mid) >= 1.0 ? hi : lo) = mid;
  }
  return std::exp(hi);
}

}  // namespace ccmeta
