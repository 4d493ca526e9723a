#pragma once

// Thin wrappers over Boost's adaptive Gauss-Kronrod rule plus a fixed
// composite Gauss-Legendre grid for integrands sampled once and reused.

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ccmeta/error.hpp"

namespace ccmeta::quad {

struct Tolerance {
  double rel = 1e-10;
  unsigned max_depth = 20;
};

/// Adaptive 31-point Gauss-Kronrod on [a, b]; either bound may be infinite.
/// Throws EvaluationError when the result is not finite or the error estimate
/// exceeds max(1000 * rel, 1e-6) relative to the L1 norm of the integrand
/// (Boost itself never reports failure).
template <class F>
auto integrate(F&& f, double a, double b, Tolerance tol = {}) {
  double error = 0.0;
  double l1 = 0.0;
  auto value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      f, a, b, tol.max_depth, tol.rel, &error, &l1);
  const double allowed = std::max(1000.0 * tol.rel, 1e-6) * l1;
  if (!std::isfinite(std::abs(value)) || error > allowed + 1e-300) {
    throw EvaluationError("adaptive quadrature did not converge", error);
  }
  return value;
}

/// Nodes and weights of composite 16-point Gauss-Legendre over consecutive
/// panels [edges[i], edges[i+1]].
struct CompositeRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline CompositeRule composite_gauss_legendre(const std::vector<double>& edges) {
  const auto& abscissa = boost::math::quadrature::gauss<double, 16>::abscissa();
  const auto& weight = boost::math::quadrature::gauss<double, 16>::weights();
  CompositeRule rule;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double mid = 0.5 * (edges[p] + edges[p + 1]);
    const double half = 0.5 * (edges[p + 1] - edges[p]);
    // Boost stores the nonnegative half of a symmetric rule.
    for (std::size_t i = 0; i < abscissa.size(); ++i) {
      if (abscissa[i] == 0.0) {
        rule.nodes.push_back(mid);
        rule.weights.push_back(half * weight[i]);
        continue;
      }
      rule.nodes.push_back(mid - half * abscissa[i]);
      rule.weights.push_back(half * weight[i]);
      rule.nodes.push_back(mid + half * abscissa[i]);
      rule.weights.push_back(half * weight[i]);
    }
  }
  return rule;
}

}  // namespace ccmeta::quad
