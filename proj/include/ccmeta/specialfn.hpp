#pragma once

// Special-function kernel shared by the analytical formulas: the Gauss
// hypergeometric shape 2F1(n, n-delta; n-delta+1; -z), binomial coefficients
// at complex order and the regularized incomplete beta function.

#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include <boost/math/special_functions/beta.hpp>

#include "ccmeta/error.hpp"

namespace ccmeta {

using complex = std::complex<double>;

/// Truncation policy for every infinite sum in the library. A sum stops once
/// |term| < rel_tol * |partial sum| + abs_tol; max_terms is a hard cap.
struct SeriesControl {
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  int max_terms = 500;

  void validate() const {
    detail::require(rel_tol > 0.0, "SeriesControl: rel_tol must be > 0");
    detail::require(abs_tol > 0.0, "SeriesControl: abs_tol must be > 0");
    detail::require(max_terms >= 1, "SeriesControl: max_terms must be >= 1");
  }

  bool converged(double term_abs, double sum_abs) const {
    return term_abs < rel_tol * sum_abs + abs_tol;
  }
};

/// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double x, double a, double b) {
  detail::require(a > 0.0 && b > 0.0, "reg_inc_beta: shapes must be positive");
  detail::require(x >= 0.0 && x <= 1.0, "reg_inc_beta: x must lie in [0, 1]");
  return boost::math::ibeta(a, b, x);
}

/// Binomial coefficient binom(b, n) for complex order b, by running product.
inline complex gen_binomial(complex b, int n) {
  detail::require(n >= 0, "gen_binomial: n must be nonnegative");
  complex value{1.0, 0.0};
  for (int k = 0; k < n; ++k) {
    value *= (b - static_cast<double>(k)) / static_cast<double>(k + 1);
  }
  return value;
}

/// 2F1(n, n - delta; n - delta + 1; -z) for z >= 0.
///
/// This equals (n - delta) * int_0^1 t^(n-delta-1) (1 + z t)^(-n) dt and lies in
/// (0, 1]. For w = z / (1 + z) <= 0.9 the Pfaff-transformed power series
/// (1 + z)^(-n) * sum_k (n)_k / (n - delta + 1)_k w^k is summed. Beyond that the
/// series needs thousands of terms, so the identity
///   2F1(n, n-delta; n-delta+1; -z) = (n - delta) z^(delta-n) B_w(n - delta, delta)
/// is used with the regularized incomplete beta.
///
/// delta = 0 is accepted as a limit (the series branch only).
inline double gauss_2f1(double n, double delta, double z, const SeriesControl& ctrl = {}) {
  ctrl.validate();
  detail::require(delta >= 0.0 && delta < 1.0, "gauss_2f1: delta must lie in [0, 1)");
  detail::require(n > delta, "gauss_2f1: n must exceed delta");
  detail::require(z >= 0.0 && std::isfinite(z), "gauss_2f1: z must be finite and >= 0");
  if (z == 0.0) return 1.0;

  const double w = z / (1.0 + z);
  if (w <= 0.9 || delta == 0.0) {
    double term = 1.0;
    double sum = 1.0;
    for (int k = 0; k < ctrl.max_terms; ++k) {
      term *= (n + k) / (n - delta + 1.0 + k) * w;
      sum += term;
      // term ratios stay below w, so the tail is at most term * w / (1 - w)
      if (ctrl.converged(term * w / (1.0 - w), sum)) {
        return std::exp(-n * std::log1p(z)) * sum;
      }
    }
    throw EvaluationError("gauss_2f1: power series exceeded max_terms", term);
  }

  const double a = n - delta;
  const double log_complete_beta = std::lgamma(a) + std::lgamma(delta) - std::lgamma(a + delta);
  const double log_scale = std::log(a) + (delta - n) * std::log(z) + log_complete_beta;
  return std::exp(log_scale) * reg_inc_beta(w, a, delta);
}

}  // namespace ccmeta
