#pragma once

// Spatial layer: PPP sampling on a torus, nearest-BS association, CCU/CEU
// classification, the conditional serving-distance laws and the per-cell
// user-count PMF.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <random>
#include <string>
#include <vector>

#include "ccmeta/error.hpp"
#include "ccmeta/params.hpp"
#include "ccmeta/rng.hpp"

namespace ccmeta {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Shortest distance between two points of a square torus of side `side`.
inline double torus_distance(const Point& a, const Point& b, double side) {
  double dx = std::abs(a.x - b.x);
  double dy = std::abs(a.y - b.y);
  dx = std::min(dx, side - dx);
  dy = std::min(dy, side - dy);
  return std::hypot(dx, dy);
}

/// One PPP realization with association and classification of every user.
/// Invariants: link_distance[u] <= dominant_distance[u];
/// user_class[u] == kCenter iff link_distance[u] / dominant_distance[u] < ratio_threshold.
struct GeometrySnapshot {
  double window_side = 0.0;
  double ratio_threshold = 0.5;
  std::vector<Point> bs_points;
  std::vector<Point> user_points;
  std::vector<int> association;
  std::vector<double> link_distance;
  std::vector<double> dominant_distance;
  std::vector<UserClass> user_class;

  std::size_t num_users() const { return user_points.size(); }
  std::size_t num_bs() const { return bs_points.size(); }

  std::size_t count(UserClass c) const {
    return static_cast<std::size_t>(std::count(user_class.begin(), user_class.end(), c));
  }
};

namespace detail {

inline void associate(GeometrySnapshot& snap) {
  const std::size_t n_users = snap.user_points.size();
  snap.association.assign(n_users, -1);
  snap.link_distance.assign(n_users, 0.0);
  snap.dominant_distance.assign(n_users, 0.0);
  snap.user_class.assign(n_users, UserClass::kEdge);
  for (std::size_t u = 0; u < n_users; ++u) {
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    int best_index = -1;
    for (std::size_t b = 0; b < snap.bs_points.size(); ++b) {
      const double d = torus_distance(snap.user_points[u], snap.bs_points[b], snap.window_side);
      if (d < best) {
        second = best;
        best = d;
        best_index = static_cast<int>(b);
      } else if (d < second) {
        second = d;
      }
    }
    snap.association[u] = best_index;
    snap.link_distance[u] = best;
    snap.dominant_distance[u] = second;
    snap.user_class[u] =
        best / second < snap.ratio_threshold ? UserClass::kCenter : UserClass::kEdge;
  }
}

}  // namespace detail

/// Samples BS and user PPPs on a torus of side `window_side` (m).
/// Throws DomainError on invalid parameters and SamplingError (carrying the
/// seed) when fewer than two BSs are drawn. `warning`, when given, receives a
/// message if the expected BS count is below 50.
inline GeometrySnapshot sample_network(const NetworkParams& params, double window_side,
                                       std::uint64_t rng_seed, std::string* warning = nullptr) {
  params.validate();
  detail::require(window_side > 0.0 && std::isfinite(window_side), "window_side must be > 0");
  const double area = window_side * window_side;
  if (warning != nullptr) {
    warning->clear();
    if (params.bs_density * area < 50.0) {
      *warning = "expected BS count " + std::to_string(params.bs_density * area) +
                 " is below 50; dominant-interferer statistics will be biased";
    }
  }

  Rng rng = make_stream(rng_seed, 0);
  GeometrySnapshot snap;
  snap.window_side = window_side;
  snap.ratio_threshold = params.ratio_threshold;

  std::poisson_distribution<long> bs_count(params.bs_density * area);
  const long n_bs = bs_count(rng);
  if (n_bs < 2) {
    throw SamplingError("sampled " + std::to_string(n_bs) +
                            " base stations; at least two are required (seed " +
                            std::to_string(rng_seed) + ")",
                        rng_seed);
  }
  snap.bs_points.resize(static_cast<std::size_t>(n_bs));
  for (auto& p : snap.bs_points) {
    p.x = uniform01(rng) * window_side;
    p.y = uniform01(rng) * window_side;
  }

  std::poisson_distribution<long> user_count(params.user_density * area);
  snap.user_points.resize(static_cast<std::size_t>(user_count(rng)));
  for (auto& p : snap.user_points) {
    p.x = uniform01(rng) * window_side;
    p.y = uniform01(rng) * window_side;
  }

  detail::associate(snap);
  return snap;
}

/// Probability that the typical user is a cell-center user: R^2.
inline double ccu_probability(double ratio_threshold) {
  detail::require(ratio_threshold >= 0.0 && ratio_threshold <= 1.0,
                  "ccu_probability: ratio must lie in [0, 1]");
  return ratio_threshold * ratio_threshold;
}

/// Density of the serving distance conditioned on the user class.
inline double link_distance_pdf(double r, const NetworkParams& params, UserClass cls) {
  detail::require(r >= 0.0, "link_distance_pdf: r must be >= 0");
  const double lam = params.bs_density;
  const double r2 = params.ratio_threshold * params.ratio_threshold;
  const double pi = std::numbers::pi;
  if (cls == UserClass::kCenter) {
    return 2.0 * pi * lam * r / r2 * std::exp(-pi * lam * r * r / r2);
  }
  return 2.0 * pi * lam * r / (1.0 - r2) *
         (std::exp(-pi * lam * r * r) - std::exp(-pi * lam * r * r / r2));
}

/// CCDF of the serving distance conditioned on the user class. The CEU branch
/// is the antiderivative of the CEU density (it equals 1 at r = 0).
inline double link_distance_ccdf(double r, const NetworkParams& params, UserClass cls) {
  detail::require(r >= 0.0, "link_distance_ccdf: r must be >= 0");
  const double lam = params.bs_density;
  const double r2 = params.ratio_threshold * params.ratio_threshold;
  const double pi = std::numbers::pi;
  if (cls == UserClass::kCenter) {
    return std::exp(-pi * lam * r * r / r2);
  }
  const double value =
      (std::exp(-pi * lam * r * r) - r2 * std::exp(-pi * lam * r * r / r2)) / (1.0 - r2);
  return std::clamp(value, 0.0, 1.0);
}

/// PMF of the number of users in a typical cell for load ratio lambda_u / lambda
/// (gamma-approximated cell area, shape 3.5).
inline double cell_load_pmf(int nu, double load_ratio) {
  detail::require(nu >= 0, "cell_load_pmf: nu must be >= 0");
  detail::require(load_ratio > 0.0, "cell_load_pmf: load ratio must be > 0");
  constexpr double k = 3.5;
  const double log_pmf = k * std::log(k) + std::lgamma(nu + k) + nu * std::log(load_ratio) -
                         std::lgamma(nu + 1.0) - std::lgamma(k) -
                         (nu + k) * std::log(load_ratio + k);
  return std::exp(log_pmf);
}

// Snapshot CSV: "kind,x,y,association,class" with a leading "# side=...,ratio=..." line.

inline void write_snapshot_csv(const GeometrySnapshot& snap, std::ostream& out) {
  out.precision(17);
  out << "# side=" << snap.window_side << ",ratio=" << snap.ratio_threshold << "\n";
  out << "kind,x,y,association,class\n";
  for (std::size_t b = 0; b < snap.bs_points.size(); ++b) {
    out << "bs," << snap.bs_points[b].x << ',' << snap.bs_points[b].y << ',' << b << ",\n";
  }
  for (std::size_t u = 0; u < snap.user_points.size(); ++u) {
    out << "user," << snap.user_points[u].x << ',' << snap.user_points[u].y << ','
        << snap.association[u] << ',' << to_string(snap.user_class[u]) << "\n";
  }
}

/// Re-reads a snapshot, recomputes association and classes, and rejects files
/// whose stored association or class disagrees with the recomputation.
inline GeometrySnapshot read_snapshot_csv(std::istream& in) {
  GeometrySnapshot snap;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# side=", 0) != 0) {
    throw DomainError("snapshot CSV: missing '# side=' preamble");
  }
  {
    const auto comma = line.find(",ratio=");
    if (comma == std::string::npos) throw DomainError("snapshot CSV: missing ratio");
    snap.window_side = std::stod(line.substr(7, comma - 7));
    snap.ratio_threshold = std::stod(line.substr(comma + 7));
  }
  if (!std::getline(in, line) || line != "kind,x,y,association,class") {
    throw DomainError("snapshot CSV: unexpected header");
  }
  std::vector<int> stored_assoc;
  std::vector<std::string> stored_class;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() == 4) fields.emplace_back();
    if (fields.size() != 5) throw DomainError("snapshot CSV: malformed row '" + line + "'");
    const Point p{std::stod(fields[1]), std::stod(fields[2])};
    if (fields[0] == "bs") {
      snap.bs_points.push_back(p);
    } else if (fields[0] == "user") {
      snap.user_points.push_back(p);
      stored_assoc.push_back(std::stoi(fields[3]));
      stored_class.push_back(fields[4]);
    } else {
      throw DomainError("snapshot CSV: unknown kind '" + fields[0] + "'");
    }
  }
  if (snap.bs_points.size() < 2) throw DomainError("snapshot CSV: fewer than two BSs");
  detail::associate(snap);
  for (std::size_t u = 0; u < snap.user_points.size(); ++u) {
    if (stored_assoc[u] != snap.association[u] || stored_class[u] != to_string(snap.user_class[u])) {
      throw DomainError("snapshot CSV: stored association/class of user " + std::to_string(u) +
                        " disagrees with the geometry");
    }
  }
  return snap;
}

}  // namespace ccmeta
