#pragma once

// Monte Carlo engine on a frozen PPP snapshot.
//  - Fixed activity: every interfering BS is on with probability q per draw,
//    fading is redrawn per draw, the serving BS always transmits.
//  - Queue coupled: Bernoulli arrivals, per-user queues, random scheduling of
//    one non-empty queue per BS and retransmission of failed head-of-line packets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "ccmeta/error.hpp"
#include "ccmeta/geometry.hpp"
#include "ccmeta/metadist.hpp"
#include "ccmeta/params.hpp"
#include "ccmeta/quadrature.hpp"
#include "ccmeta/rng.hpp"

namespace ccmeta {

struct LinkRecord {
  int user = 0;
  int bs = 0;
  UserClass cls = UserClass::kEdge;
  double link_distance = 0.0;
  double dominant_distance = 0.0;
  long attempts = 0;
  long successes = 0;
  // Draws in which some BS of the ring [r, r / R) was active, and their successes.
  long ring_active_attempts = 0;
  long ring_active_successes = 0;
  // Fraction of measured slots in which the serving BS transmitted (queue mode).
  double activity_fraction = 1.0;

  double p_hat() const {
    return attempts > 0 ? static_cast<double>(successes) / static_cast<double>(attempts) : 0.0;
  }
};

struct SimStats {
  std::vector<LinkRecord> links;
  // Queue mode only.
  std::vector<double> bs_activity;
  std::vector<int> service_times;
  std::vector<int> service_users;
  std::vector<long> arrivals;
  std::vector<long> departures;
  std::vector<long> backlog;
  long measured_slots = 0;
  double backlog_growth = 0.0;  // packets per user per slot after warmup
};

struct SimOptions {
  // Add the mean interference q lambda K of the BSs outside the torus window.
  bool far_field = true;
  unsigned jobs = 1;
  // Simulate only users of this class (fixed-activity mode).
  std::optional<UserClass> only_class;
  // Keep at most this many users (0 = all), in snapshot order.
  std::size_t max_users = 0;
  // Queue mode: abort when the total backlog exceeds this.
  long max_backlog = 50'000'000;
};

/// Integral of |x|^(-alpha) over the plane outside a square of side `side`
/// centred at the origin: the far-field gain missing from a torus window.
inline double far_field_gain(double side, double alpha) {
  detail::require(side > 0.0 && alpha > 2.0, "far_field_gain: need side > 0 and alpha > 2");
  const double s = 0.5 * side;
  const double k = alpha - 2.0;
  const double outside_disc = 2.0 * std::numbers::pi * std::pow(s, -k) / k;
  // Part of the square outside the inscribed disc, by eight symmetric wedges.
  auto wedge = [&](double phi) { return (std::pow(s, -k) - std::pow(s / std::cos(phi), -k)) / k; };
  const double corners = 8.0 * quad::integrate(wedge, 0.0, std::numbers::pi / 4.0);
  return outside_disc - corners;
}

namespace detail {

inline std::vector<int> select_users(const GeometrySnapshot& snap, const SimOptions& opt) {
  std::vector<int> users;
  for (std::size_t u = 0; u < snap.num_users(); ++u) {
    if (opt.only_class && snap.user_class[u] != *opt.only_class) continue;
    users.push_back(static_cast<int>(u));
    if (opt.max_users != 0 && users.size() >= opt.max_users) break;
  }
  return users;
}

template <class Task>
void parallel_for(std::size_t n, unsigned jobs, Task&& task) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) task(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

/// Fixed-activity simulation for every (q, theta) pair at once. All pairs share
/// the same activity uniforms and fading draws (common random numbers): BS c is
/// active for q iff its uniform is below q. Result index: iq * thetas.size() + it.
/// Each user draws from its own substream, so results do not depend on `jobs`.
inline std::vector<SimStats> run_fixed_activity_grid(const GeometrySnapshot& snap,
                                                     const NetworkParams& params,
                                                     const std::vector<double>& qs,
                                                     const std::vector<double>& thetas, int draws,
                                                     std::uint64_t rng_seed,
                                                     const SimOptions& opt = {}) {
  params.validate();
  detail::require(draws >= 1, "draws must be >= 1");
  detail::require(!qs.empty() && !thetas.empty(), "q and theta lists must be nonempty");
  for (double q : qs) detail::require(q >= 0.0 && q <= 1.0, "q must lie in [0, 1]");
  for (double t : thetas) detail::require(t > 0.0, "theta must be > 0");
  detail::require(snap.num_bs() >= 2, "snapshot needs at least two BSs");

  const std::size_t nq = qs.size();
  const std::size_t nt = thetas.size();
  const double q_max = *std::max_element(qs.begin(), qs.end());
  const double alpha = params.pathloss_exponent;
  const double far = opt.far_field ? params.bs_density * far_field_gain(snap.window_side, alpha) : 0.0;
  const std::vector<int> users = detail::select_users(snap, opt);

  std::vector<SimStats> out(nq * nt);
  for (auto& s : out) s.links.resize(users.size());

  detail::parallel_for(users.size(), opt.jobs, [&](std::size_t k) {
    const int u = users[k];
    const auto uu = static_cast<std::size_t>(u);
    const double r = snap.link_distance[uu];
    const int serving = snap.association[uu];
    // Interferer gains relative to the serving link, nearest first; the ring
    // [r, r / R) is therefore a prefix of length n_ring.
    std::vector<double> dist;
    dist.reserve(snap.num_bs());
    for (std::size_t c = 0; c < snap.num_bs(); ++c) {
      if (static_cast<int>(c) == serving) continue;
      dist.push_back(torus_distance(snap.user_points[uu], snap.bs_points[c], snap.window_side));
    }
    std::sort(dist.begin(), dist.end());
    std::vector<double> rel(dist.size());
    std::size_t n_ring = 0;
    for (std::size_t c = 0; c < dist.size(); ++c) {
      rel[c] = std::pow(r / dist[c], alpha);
      if (dist[c] < r / snap.ratio_threshold) n_ring = c + 1;
    }
    const double far_rel = far * std::pow(r, alpha);
    const std::size_t q_min = static_cast<std::size_t>(std::min_element(qs.begin(), qs.end()) - qs.begin());
    const double theta_min = *std::min_element(thetas.begin(), thetas.end());

    Rng rng = make_stream(rng_seed, static_cast<std::uint64_t>(u) + 1);
    std::vector<double> interference(nq);
    std::vector<char> ring_active(nq);
    std::vector<long> succ(nq * nt, 0);
    std::vector<long> ring_att(nq * nt, 0);
    std::vector<long> ring_succ(nq * nt, 0);
    for (int draw = 0; draw < draws; ++draw) {
      const double h0 = unit_exponential(rng);
      std::fill(interference.begin(), interference.end(), 0.0);
      std::fill(ring_active.begin(), ring_active.end(), 0);
      for (std::size_t c = 0; c < rel.size(); ++c) {
        // Interference only grows: once the least loaded pair has failed, every
        // pair has, and the remaining draws cannot change the outcome.
        if (c >= n_ring && h0 <= theta_min * interference[q_min]) break;
        const double a = uniform01(rng);
        if (a >= q_max) continue;
        const double g = unit_exponential(rng) * rel[c];
        for (std::size_t i = 0; i < nq; ++i) {
          if (a < qs[i]) {
            interference[i] += g;
            ring_active[i] |= (c < n_ring);
          }
        }
      }
      for (std::size_t i = 0; i < nq; ++i) {
        const double total = interference[i] + qs[i] * far_rel;
        for (std::size_t j = 0; j < nt; ++j) {
          const bool ok = h0 > thetas[j] * total;
          succ[i * nt + j] += ok;
          if (ring_active[i]) {
            ++ring_att[i * nt + j];
            ring_succ[i * nt + j] += ok;
          }
        }
      }
    }
    for (std::size_t m = 0; m < nq * nt; ++m) {
      LinkRecord& rec = out[m].links[k];
      rec.user = u;
      rec.bs = serving;
      rec.cls = snap.user_class[uu];
      rec.link_distance = r;
      rec.dominant_distance = snap.dominant_distance[uu];
      rec.attempts = draws;
      rec.successes = succ[m];
      rec.ring_active_attempts = ring_att[m];
      rec.ring_active_successes = ring_succ[m];
    }
  });
  return out;
}

inline SimStats run_fixed_activity(const GeometrySnapshot& snap, const NetworkParams& params,
                                   double q, int draws, std::uint64_t rng_seed,
                                   const SimOptions& opt = {}) {
  return run_fixed_activity_grid(snap, params, {q}, {params.sir_threshold}, draws, rng_seed, opt)
      .front();
}

/// Slotted queue-coupled simulation. Per slot: Bernoulli(xi) arrivals to every
/// user queue; each BS with a non-empty queue serves one chosen uniformly at
/// random (others mute); SIR against the BSs active in the slot with fresh
/// fading; success removes the head-of-line packet, failure keeps it. Statistics
/// cover slots [warmup, slots). Throws QueueOverflowError past opt.max_backlog.
inline SimStats run_queue_coupled(const GeometrySnapshot& snap, const NetworkParams& params,
                                  double xi, long slots, long warmup, std::uint64_t rng_seed,
                                  const SimOptions& opt = {}) {
  params.validate();
  detail::require(xi >= 0.0 && xi <= 1.0, "arrival rate must lie in [0, 1]");
  detail::require(warmup >= 0 && slots > warmup, "need slots > warmup >= 0");
  const std::size_t n_users = snap.num_users();
  const std::size_t n_bs = snap.num_bs();
  const double alpha = params.pathloss_exponent;
  const double theta = params.sir_threshold;
  const double far_gain = opt.far_field ? params.bs_density * far_field_gain(snap.window_side, alpha) : 0.0;

  std::vector<std::vector<int>> cell(n_bs);
  for (std::size_t u = 0; u < n_users; ++u) cell[static_cast<std::size_t>(snap.association[u])].push_back(static_cast<int>(u));
  // gain[u * n_bs + c] = d(c, u)^(-alpha)
  std::vector<double> gain(n_users * n_bs);
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::size_t c = 0; c < n_bs; ++c) {
      gain[u * n_bs + c] =
          std::pow(torus_distance(snap.user_points[u], snap.bs_points[c], snap.window_side), -alpha);
    }
  }

  SimStats stats;
  stats.links.resize(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    auto& rec = stats.links[u];
    rec.user = static_cast<int>(u);
    rec.bs = snap.association[u];
    rec.cls = snap.user_class[u];
    rec.link_distance = snap.link_distance[u];
    rec.dominant_distance = snap.dominant_distance[u];
    rec.activity_fraction = 0.0;
  }
  stats.arrivals.assign(n_users, 0);
  stats.departures.assign(n_users, 0);
  stats.backlog.assign(n_users, 0);
  std::vector<long> active_slots(n_bs, 0);
  std::vector<int> hol_attempts(n_users, 0);
  std::vector<int> scheduled(n_bs, -1);
  std::vector<int> active;
  std::vector<int> waiting;
  long total_backlog = 0;
  long backlog_at_warmup = 0;

  Rng rng = make_stream(rng_seed, 0);
  for (long t = 0; t < slots; ++t) {
    const bool measured = t >= warmup;
    if (t == warmup) backlog_at_warmup = total_backlog;
    for (std::size_t u = 0; u < n_users; ++u) {
      if (uniform01(rng) < xi) {
        ++stats.backlog[u];
        ++stats.arrivals[u];
        ++total_backlog;
      }
    }
    if (total_backlog > opt.max_backlog) {
      throw QueueOverflowError("queue backlog " + std::to_string(total_backlog) +
                                   " exceeded the budget at slot " + std::to_string(t) +
                                   "; the arrival rate is beyond what the network can serve",
                               t, total_backlog);
    }
    active.clear();
    for (std::size_t b = 0; b < n_bs; ++b) {
      waiting.clear();
      for (int u : cell[b]) {
        if (stats.backlog[static_cast<std::size_t>(u)] > 0) waiting.push_back(u);
      }
      scheduled[b] = -1;
      if (waiting.empty()) continue;
      const auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(waiting.size()));
      scheduled[b] = waiting[std::min(pick, waiting.size() - 1)];
      active.push_back(static_cast<int>(b));
    }
    const double far = far_gain * static_cast<double>(active.size()) / static_cast<double>(n_bs);
    for (int b : active) {
      const auto u = static_cast<std::size_t>(scheduled[static_cast<std::size_t>(b)]);
      const double* g = &gain[u * n_bs];
      double interference = far;
      for (int c : active) {
        if (c != b) interference += unit_exponential(rng) * g[c];
      }
      const bool ok = unit_exponential(rng) * g[b] > theta * interference;
      ++hol_attempts[u];
      if (measured) {
        ++stats.links[u].attempts;
        stats.links[u].successes += ok;
        ++active_slots[static_cast<std::size_t>(b)];
      }
      if (ok) {
        if (measured) {
          stats.service_times.push_back(hol_attempts[u]);
          stats.service_users.push_back(static_cast<int>(u));
        }
        hol_attempts[u] = 0;
        --stats.backlog[u];
        ++stats.departures[u];
        --total_backlog;
      }
    }
  }

  stats.measured_slots = slots - warmup;
  const auto measured_slots = static_cast<double>(stats.measured_slots);
  stats.bs_activity.resize(n_bs);
  for (std::size_t b = 0; b < n_bs; ++b) stats.bs_activity[b] = active_slots[b] / measured_slots;
  for (auto& rec : stats.links) rec.activity_fraction = stats.bs_activity[static_cast<std::size_t>(rec.bs)];
  stats.backlog_growth = n_users == 0 ? 0.0
                                      : static_cast<double>(total_backlog - backlog_at_warmup) /
                                            (measured_slots * static_cast<double>(n_users));
  return stats;
}

/// Empirical CCDF of P-hat over links of the class with at least `min_attempts`
/// attempts (fraction of links with P-hat > x). Throws EvaluationError when no
/// link qualifies.
inline MetaCurve empirical_meta(const SimStats& stats, std::optional<UserClass> cls,
                                const std::vector<double>& xs = default_grid(),
                                long min_attempts = 200) {
  detail::check_grid(xs);
  std::vector<double> p;
  for (const auto& rec : stats.links) {
    if (cls && rec.cls != *cls) continue;
    if (rec.attempts < min_attempts) continue;
    p.push_back(rec.p_hat());
  }
  if (p.empty()) {
    throw EvaluationError("empirical_meta: no link with at least " + std::to_string(min_attempts) +
                              " attempts (" + std::to_string(stats.links.size()) + " links in total)",
                          0.0);
  }
  std::sort(p.begin(), p.end());
  std::vector<double> values(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto above = p.end() - std::upper_bound(p.begin(), p.end(), xs[i]);
    values[i] = static_cast<double>(above) / static_cast<double>(p.size());
  }
  return detail::finish_curve(xs, std::move(values));
}

/// Empirical b-th moment of P-hat over qualifying links, with its standard error.
struct EmpiricalMoment {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t links = 0;
};

/// Unbiased for E[P^b] at b = 1, 2: successes (successes - 1) / (n (n - 1))
/// estimates P^2 without the binomial variance term.
inline EmpiricalMoment empirical_moment(const SimStats& stats, std::optional<UserClass> cls, int b,
                                        long min_attempts = 1) {
  detail::require(b == 1 || b == 2, "empirical_moment: b must be 1 or 2");
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& rec : stats.links) {
    if (cls && rec.cls != *cls) continue;
    if (rec.attempts < std::max<long>(min_attempts, b)) continue;
    const double s = static_cast<double>(rec.successes);
    const double a = static_cast<double>(rec.attempts);
    const double v = b == 1 ? s / a : s * (s - 1.0) / (a * (a - 1.0));
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  EmpiricalMoment out;
  out.links = n;
  if (n == 0) return out;
  out.value = sum / static_cast<double>(n);
  if (n > 1) {
    const double var = (sum_sq - sum * sum / static_cast<double>(n)) / static_cast<double>(n - 1);
    out.standard_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
  return out;
}

struct LocalDelayEstimate {
  // Mean of 1 / P-hat over qualifying links; +inf if some link never succeeded.
  double inverse_mean = 0.0;
  // Mean number of attempts per delivered packet (queue mode; NaN if none).
  double service_mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t links = 0;
  std::size_t zero_links = 0;
  bool infinite = false;
};

inline LocalDelayEstimate empirical_mean_local_delay(const SimStats& stats,
                                                     std::optional<UserClass> cls,
                                                     long min_attempts = 200) {
  LocalDelayEstimate out;
  double sum = 0.0;
  for (const auto& rec : stats.links) {
    if (cls && rec.cls != *cls) continue;
    if (rec.attempts < min_attempts) continue;
    ++out.links;
    if (rec.successes == 0) {
      ++out.zero_links;
      continue;
    }
    sum += 1.0 / rec.p_hat();
  }
  if (out.links == 0) {
    throw EvaluationError("empirical_mean_local_delay: no link with at least " +
                              std::to_string(min_attempts) + " attempts",
                          0.0);
  }
  out.infinite = out.zero_links > 0;
  out.inverse_mean = out.infinite ? std::numeric_limits<double>::infinity()
                                  : sum / static_cast<double>(out.links);
  double service_sum = 0.0;
  std::size_t service_n = 0;
  for (std::size_t i = 0; i < stats.service_times.size(); ++i) {
    const auto u = static_cast<std::size_t>(stats.service_users[i]);
    if (cls && u < stats.links.size() && stats.links[u].cls != *cls) continue;
    service_sum += stats.service_times[i];
    ++service_n;
  }
  if (service_n > 0) out.service_mean = service_sum / static_cast<double>(service_n);
  return out;
}

/// Per-link CSV: link id, class, R_m, R_d, attempts, successes, activity fraction.
inline void write_links_csv(const SimStats& stats, std::ostream& out) {
  out << std::setprecision(17);
  out << "link,class,r_m,r_d,attempts,successes,activity_fraction\n";
  for (const auto& rec : stats.links) {
    out << rec.user << ',' << to_string(rec.cls) << ',' << rec.link_distance << ','
        << rec.dominant_distance << ',' << rec.attempts << ',' << rec.successes << ','
        << rec.activity_fraction << '\n';
  }
}

}  // namespace ccmeta
