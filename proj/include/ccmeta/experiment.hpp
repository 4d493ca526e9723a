#pragma once

// Experiment orchestration: configuration, sweeps over the analytic and Monte
// Carlo engines, CSV output and the run manifest.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ccmeta/config.hpp"
#include "ccmeta/error.hpp"
#include "ccmeta/metadist.hpp"
#include "ccmeta/moments.hpp"
#include "ccmeta/params.hpp"
#include "ccmeta/rng.hpp"
#include "ccmeta/simulator.hpp"
#include "ccmeta/version.hpp"

namespace ccmeta {

enum class ExperimentKind { kMoments, kMetadist, kDelay, kFixedPoint, kSimulate, kCompare };

inline std::string_view to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kMoments:
      return "moments";
    case ExperimentKind::kMetadist:
      return "metadist";
    case ExperimentKind::kDelay:
      return "delay";
    case ExperimentKind::kFixedPoint:
      return "fixed_point";
    case ExperimentKind::kSimulate:
      return "simulate";
    case ExperimentKind::kCompare:
      break;
  }
  return "compare";
}

inline std::optional<ExperimentKind> parse_experiment_kind(std::string_view s) {
  for (auto k : {ExperimentKind::kMoments, ExperimentKind::kMetadist, ExperimentKind::kDelay,
                 ExperimentKind::kFixedPoint, ExperimentKind::kSimulate, ExperimentKind::kCompare}) {
    if (s == to_string(k)) return k;
  }
  if (s == "fixed-point") return ExperimentKind::kFixedPoint;
  return std::nullopt;
}

enum class SimMode { kFixedActivity, kQueueCoupled };

/// Sign of the delay denominator. kPrinted reproduces the CCU expression with
/// (1 + term)^(-1), kept to show where it departs from the moment oracle.
enum class DelaySign { kCorrected, kPrinted };

struct SimulationConfig {
  SimMode mode = SimMode::kFixedActivity;
  double window = 2000.0;       // torus side, m
  long min_users = 10000;       // pool geometries until this many users
  long geometries = 0;          // fixed geometry count (0 = use min_users)
  long draws = 1000;            // fixed-activity draws per link
  long slots = 20000;           // queue mode, including warmup
  long warmup = 2000;
  long min_attempts = 200;      // links below this are left out of meta estimates
  bool far_field = true;
};

/// Entry in the manifest that marks a formula or oracle disagreement.
struct DiscrepancyFlag {
  std::string what;
  std::string point;
  double value = 0.0;
  double reference = 0.0;
};

struct ExperimentReport {
  std::vector<std::string> files;
  std::vector<DiscrepancyFlag> flags;
  std::vector<std::string> failures;
  std::vector<std::pair<std::string, std::string>> notes;

  int exit_status() const { return failures.empty() ? 0 : 1; }
};

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string join_numbers(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + format_number(xs[i]);
  return out;
}

// 1/n, 2/n, ..., 1; each point is a correctly rounded quotient, so it prints
// in its shortest decimal form.
inline std::vector<double> fraction_grid(int n) {
  std::vector<double> out;
  for (int i = 1; i <= n; ++i) out.push_back(static_cast<double>(i) / n);
  return out;
}

/// Seed for task `index` of kind `purpose` under the root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t purpose, std::uint64_t index) {
  return mix64(mix64(root) ^ mix64((purpose << 40) + index));
}

inline bool strictly_increasing(const std::vector<double>& xs) {
  return std::adjacent_find(xs.begin(), xs.end(), std::greater_equal<>()) == xs.end();
}

}  // namespace detail

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kMetadist;
  NetworkParams network;  // sir_threshold follows network_theta_db
  double network_theta_db = 0.0;
  TrafficParams traffic;
  int x_steps = 100;  // 0 when x_grid was given explicitly
  std::vector<double> x_grid = default_grid();
  std::vector<double> q_grid;
  std::vector<double> xi_grid;
  std::vector<double> theta_db_grid;
  std::vector<double> ratio_grid;
  std::vector<double> orders{1.0, 2.0};
  std::vector<UserClass> classes{UserClass::kCenter, UserClass::kEdge};
  std::vector<MetaMethod> methods{MetaMethod::kGilPelaez, MetaMethod::kBeta};
  DelaySign delay_sign = DelaySign::kCorrected;
  FixedPointOptions fixed_point;
  SimulationConfig sim;
  double budget_seconds = 60.0;
  std::uint64_t seed = 1;
  long jobs = 1;
  std::string output_dir = "out";

  /// Kind-specific sweep defaults (the network defaults are NetworkParams{}).
  static ExperimentConfig defaults(ExperimentKind kind) {
    ExperimentConfig c;
    c.kind = kind;
    c.apply_grid_defaults();
    return c;
  }

  /// Builds a config from key-value entries; `kind_override` replaces
  /// experiment.kind (the CLI subcommand). Throws ConfigError listing every
  /// unparsable entry, unknown key and violated invariant.
  static ExperimentConfig from_kv(const KeyValueConfig& kv,
                                  std::optional<ExperimentKind> kind_override = std::nullopt) {
    std::vector<std::string> issues;
    ExperimentConfig c;
    const std::string kind_text = kv.get_string("experiment.kind", "metadist");
    if (const auto k = parse_experiment_kind(kind_text)) {
      c.kind = *k;
    } else {
      issues.push_back("experiment.kind: unknown kind '" + kind_text +
                       "' (moments, metadist, delay, fixed_point, simulate, compare)");
    }
    if (kind_override) {
      if (kv.has("experiment.kind") && parse_experiment_kind(kind_text) &&
          *parse_experiment_kind(kind_text) != *kind_override) {
        issues.push_back("experiment.kind: config says '" + kind_text + "' but the command runs '" +
                         std::string(to_string(*kind_override)) + "'");
      }
      c.kind = *kind_override;
    }

    NetworkParams& n = c.network;
    n.bs_density = kv.get_double("network.bs_density", n.bs_density, issues);
    n.user_density = kv.get_double("network.user_density", n.user_density, issues);
    n.pathloss_exponent = kv.get_double("network.pathloss_exponent", n.pathloss_exponent, issues);
    n.ratio_threshold = kv.get_double("network.ratio_threshold", n.ratio_threshold, issues);
    n.tx_power_dbm = kv.get_double("network.tx_power_dbm", n.tx_power_dbm, issues);
    c.network_theta_db = kv.get_double("network.theta_db", c.network_theta_db, issues);
    n.sir_threshold = db_to_linear(c.network_theta_db);
    c.traffic.arrival_rate = kv.get_double("traffic.arrival_rate", c.traffic.arrival_rate, issues);
    c.apply_grid_defaults();

    if (kv.has("grid.x")) {
      c.x_grid = kv.get_doubles("grid.x", c.x_grid, issues);
      c.x_steps = 0;
      if (kv.has("grid.x_steps")) {
        (void)kv.get_long("grid.x_steps", 0, issues);
        issues.push_back("grid.x and grid.x_steps are mutually exclusive");
      }
    } else {
      c.x_steps = static_cast<int>(kv.get_long("grid.x_steps", c.x_steps, issues));
      if (c.x_steps >= 2) c.x_grid = default_grid(c.x_steps);
    }
    c.q_grid = kv.get_doubles("grid.q", c.q_grid, issues);
    c.xi_grid = kv.get_doubles("grid.xi", c.xi_grid, issues);
    c.theta_db_grid = kv.get_doubles("grid.theta_db", c.theta_db_grid, issues);
    c.ratio_grid = kv.get_doubles("grid.ratio", c.ratio_grid, issues);
    c.orders = kv.get_doubles("moments.orders", c.orders, issues);

    if (kv.has("grid.classes")) {
      c.classes.clear();
      for (const auto& s : kv.get_strings("grid.classes", {})) {
        try {
          c.classes.push_back(parse_user_class(s));
        } catch (const DomainError& e) {
          issues.push_back(std::string("grid.classes: ") + e.what());
        }
      }
    }
    if (kv.has("metadist.methods")) {
      c.methods.clear();
      for (const auto& s : kv.get_strings("metadist.methods", {})) {
        try {
          c.methods.push_back(parse_meta_method(s));
        } catch (const DomainError& e) {
          issues.push_back(std::string("metadist.methods: ") + e.what());
        }
      }
    }
    const std::string sign = kv.get_string("delay.sign", "corrected");
    if (sign == "corrected") {
      c.delay_sign = DelaySign::kCorrected;
    } else if (sign == "printed") {
      c.delay_sign = DelaySign::kPrinted;
    } else {
      issues.push_back("delay.sign: expected corrected or printed, got '" + sign + "'");
    }

    FixedPointOptions& fp = c.fixed_point;
    try {
      fp.method = parse_meta_method(kv.get_string("fixed_point.method", "gil_pelaez"));
    } catch (const DomainError& e) {
      issues.push_back(std::string("fixed_point.method: ") + e.what());
    }
    const std::string mode = kv.get_string("fixed_point.mode", "simultaneous");
    if (mode == "simultaneous") {
      fp.mode = FixedPointMode::kSimultaneous;
    } else if (mode == "recursive_temporal") {
      fp.mode = FixedPointMode::kRecursiveTemporal;
    } else {
      issues.push_back("fixed_point.mode: expected simultaneous or recursive_temporal, got '" + mode + "'");
    }
    const std::string coupling = kv.get_string("fixed_point.coupling", "mean");
    if (coupling == "mean") {
      fp.coupling = ActivityCoupling::kMean;
    } else if (coupling == "moment_functional") {
      fp.coupling = ActivityCoupling::kMomentFunctional;
    } else {
      issues.push_back("fixed_point.coupling: expected mean or moment_functional, got '" + coupling + "'");
    }
    fp.damping = kv.get_double("fixed_point.damping", fp.damping, issues);
    fp.tolerance = kv.get_double("fixed_point.tolerance", fp.tolerance, issues);
    fp.max_iterations = static_cast<int>(kv.get_long("fixed_point.max_iterations", fp.max_iterations, issues));

    SimulationConfig& s = c.sim;
    const std::string sim_mode = kv.get_string("sim.mode", "fixed_activity");
    if (sim_mode == "fixed_activity") {
      s.mode = SimMode::kFixedActivity;
    } else if (sim_mode == "queue") {
      s.mode = SimMode::kQueueCoupled;
    } else {
      issues.push_back("sim.mode: expected fixed_activity or queue, got '" + sim_mode + "'");
    }
    s.window = kv.get_double("sim.window", s.window, issues);
    s.min_users = kv.get_long("sim.min_users", s.min_users, issues);
    s.geometries = kv.get_long("sim.geometries", s.geometries, issues);
    s.draws = kv.get_long("sim.draws", s.draws, issues);
    s.slots = kv.get_long("sim.slots", s.slots, issues);
    s.warmup = kv.get_long("sim.warmup", s.warmup, issues);
    s.min_attempts = kv.get_long("sim.min_attempts", s.min_attempts, issues);
    s.far_field = kv.get_bool("sim.far_field", s.far_field, issues);
    c.budget_seconds = kv.get_double("compare.budget_seconds", c.budget_seconds, issues);

    const long seed = kv.get_long("seed.root", static_cast<long>(c.seed), issues);
    if (seed < 0) {
      issues.push_back("seed.root must be >= 0");
    } else {
      c.seed = static_cast<std::uint64_t>(seed);
    }
    c.jobs = kv.get_long("run.jobs", c.jobs, issues);
    c.output_dir = kv.get_string("output.dir", c.output_dir);

    for (const auto& key : kv.unused_keys()) issues.push_back("unknown key '" + key + "'");
    for (auto& v : c.violations()) issues.push_back(std::move(v));
    if (!issues.empty()) throw ConfigError(std::move(issues));
    return c;
  }

  /// Every violated invariant, one message each; empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    auto check = [&](bool ok, const std::string& msg) {
      if (!ok) out.push_back(msg);
    };
    check(network.bs_density > 0.0, "network.bs_density must be > 0");
    check(network.user_density > 0.0, "network.user_density must be > 0");
    check(network.pathloss_exponent > 2.0, "network.pathloss_exponent must be > 2");
    check(network.ratio_threshold > 0.0 && network.ratio_threshold < 1.0,
          "network.ratio_threshold must lie in (0, 1)");
    check(std::isfinite(network_theta_db), "network.theta_db must be finite");
    check(traffic.arrival_rate >= 0.0 && traffic.arrival_rate <= 1.0,
          "traffic.arrival_rate must lie in [0, 1]");

    auto grid = [&](const std::vector<double>& xs, const std::string& key, double lo, double hi,
                    bool open_lo, bool open_hi) {
      if (xs.empty()) {
        out.push_back(key + " must be nonempty");
        return;
      }
      if (!detail::strictly_increasing(xs)) out.push_back(key + " must be sorted in increasing order without repeats");
      for (double x : xs) {
        const bool ok = std::isfinite(x) && (open_lo ? x > lo : x >= lo) && (open_hi ? x < hi : x <= hi);
        if (!ok) {
          out.push_back(key + ": value " + detail::format_number(x) + " out of range");
          break;
        }
      }
    };
    const double inf = std::numeric_limits<double>::infinity();
    check(x_steps == 0 || x_steps >= 2, "grid.x_steps must be >= 2");
    grid(x_grid, "grid.x", 0.0, 1.0, true, true);
    grid(q_grid, "grid.q", 0.0, 1.0, false, false);
    grid(xi_grid, "grid.xi", 0.0, 1.0, false, false);
    grid(theta_db_grid, "grid.theta_db", -inf, inf, true, true);
    grid(ratio_grid, "grid.ratio", 0.0, 1.0, true, true);
    check(!orders.empty(), "moments.orders must be nonempty");
    for (double b : orders) {
      if (!std::isfinite(b) || b == 0.0) {
        out.push_back("moments.orders: orders must be finite and nonzero");
        break;
      }
    }
    check(!classes.empty(), "grid.classes must be nonempty");
    check(!methods.empty(), "metadist.methods must be nonempty");
    check(fixed_point.damping > 0.0 && fixed_point.damping <= 1.0, "fixed_point.damping must lie in (0, 1]");
    check(fixed_point.tolerance > 0.0, "fixed_point.tolerance must be > 0");
    check(fixed_point.max_iterations >= 1, "fixed_point.max_iterations must be >= 1");
    check(fixed_point.coupling == ActivityCoupling::kMean || fixed_point.method == MetaMethod::kBeta,
          "fixed_point.coupling = moment_functional needs fixed_point.method = beta");
    check(sim.window > 0.0, "sim.window must be > 0");
    check(sim.min_users >= 1, "sim.min_users must be >= 1");
    check(sim.geometries >= 0, "sim.geometries must be >= 0");
    check(sim.draws >= 1, "sim.draws must be >= 1");
    check(sim.warmup >= 0 && sim.slots > sim.warmup, "sim.slots must exceed sim.warmup >= 0");
    check(sim.min_attempts >= 1, "sim.min_attempts must be >= 1");
    check(budget_seconds > 0.0, "compare.budget_seconds must be > 0");
    check(jobs >= 1, "run.jobs must be >= 1");
    check(!output_dir.empty(), "output.dir must be nonempty");
    return out;
  }

  void validate() const {
    auto v = violations();
    if (!v.empty()) throw ConfigError(std::move(v));
  }

  /// Canonical form with every key set; from_kv(to_kv()) reproduces the config.
  KeyValueConfig to_kv() const {
    using detail::format_number;
    using detail::join_numbers;
    KeyValueConfig kv;
    kv.set("experiment.kind", std::string(to_string(kind)));
    kv.set("network.bs_density", format_number(network.bs_density));
    kv.set("network.user_density", format_number(network.user_density));
    kv.set("network.pathloss_exponent", format_number(network.pathloss_exponent));
    kv.set("network.ratio_threshold", format_number(network.ratio_threshold));
    kv.set("network.tx_power_dbm", format_number(network.tx_power_dbm));
    kv.set("network.theta_db", format_number(network_theta_db));
    kv.set("traffic.arrival_rate", format_number(traffic.arrival_rate));
    if (x_steps == 0) {
      kv.set("grid.x", join_numbers(x_grid));
    } else {
      kv.set("grid.x_steps", std::to_string(x_steps));
    }
    kv.set("grid.q", join_numbers(q_grid));
    kv.set("grid.xi", join_numbers(xi_grid));
    kv.set("grid.theta_db", join_numbers(theta_db_grid));
    kv.set("grid.ratio", join_numbers(ratio_grid));
    std::string cls;
    for (std::size_t i = 0; i < classes.size(); ++i) cls += (i ? "," : "") + std::string(to_string(classes[i]));
    kv.set("grid.classes", cls);
    kv.set("moments.orders", join_numbers(orders));
    std::string meth;
    for (std::size_t i = 0; i < methods.size(); ++i) meth += (i ? "," : "") + std::string(to_string(methods[i]));
    kv.set("metadist.methods", meth);
    kv.set("delay.sign", delay_sign == DelaySign::kCorrected ? "corrected" : "printed");
    kv.set("fixed_point.method", std::string(to_string(fixed_point.method)));
    kv.set("fixed_point.mode",
           fixed_point.mode == FixedPointMode::kSimultaneous ? "simultaneous" : "recursive_temporal");
    kv.set("fixed_point.coupling",
           fixed_point.coupling == ActivityCoupling::kMean ? "mean" : "moment_functional");
    kv.set("fixed_point.damping", format_number(fixed_point.damping));
    kv.set("fixed_point.tolerance", format_number(fixed_point.tolerance));
    kv.set("fixed_point.max_iterations", std::to_string(fixed_point.max_iterations));
    kv.set("sim.mode", sim.mode == SimMode::kFixedActivity ? "fixed_activity" : "queue");
    kv.set("sim.window", format_number(sim.window));
    kv.set("sim.min_users", std::to_string(sim.min_users));
    kv.set("sim.geometries", std::to_string(sim.geometries));
    kv.set("sim.draws", std::to_string(sim.draws));
    kv.set("sim.slots", std::to_string(sim.slots));
    kv.set("sim.warmup", std::to_string(sim.warmup));
    kv.set("sim.min_attempts", std::to_string(sim.min_attempts));
    kv.set("sim.far_field", sim.far_field ? "true" : "false");
    kv.set("compare.budget_seconds", format_number(budget_seconds));
    kv.set("seed.root", std::to_string(seed));
    kv.set("run.jobs", std::to_string(jobs));
    kv.set("output.dir", output_dir);
    return kv;
  }

  NetworkParams network_at(double ratio, double theta_db) const {
    return network.with_ratio(ratio).with_theta(db_to_linear(theta_db));
  }

 private:
  void apply_grid_defaults() {
    const double r = network.ratio_threshold;
    xi_grid = {0.01, 0.05, 0.1, 0.15, 0.2, 0.25};
    ratio_grid = {r};
    theta_db_grid = {network_theta_db};
    switch (kind) {
      case ExperimentKind::kMoments:
      case ExperimentKind::kSimulate:
      case ExperimentKind::kCompare:
        q_grid = {0.3, 0.7};
        theta_db_grid = {0.0, 5.0};
        break;
      case ExperimentKind::kMetadist:
        q_grid = {1.0};
        ratio_grid = {0.4, 0.5, 0.6};
        break;
      case ExperimentKind::kDelay:
        q_grid = detail::fraction_grid(100);
        theta_db_grid = {1.0, 5.0};
        break;
      case ExperimentKind::kFixedPoint:
        q_grid = {1.0};
        break;
    }
  }
};

/// Reads a config file. A run manifest is accepted too: its `config.*`
/// entries are the full configuration of that run.
inline ExperimentConfig load_experiment_config(const std::string& path,
                                               std::optional<ExperimentKind> kind_override = std::nullopt) {
  KeyValueConfig kv = KeyValueConfig::load(path);
  if (kv.has("manifest.version")) {
    KeyValueConfig inner;
    for (const auto& [k, v] : kv.entries()) {
      if (k.rfind("config.", 0) == 0) inner.set(k.substr(7), v);
    }
    kv = inner;
  }
  return ExperimentConfig::from_kv(kv, kind_override);
}

namespace detail {

/// Writes through a temporary file renamed into place, so a file either holds
/// a complete curve or does not exist.
template <class Fn>
void write_atomically(const std::filesystem::path& path, Fn&& fill) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    fill(out);
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string point_tag(double ratio, double theta_db, double q) {
  return "R" + format_number(ratio) + "_th" + format_number(theta_db) + "dB_q" + format_number(q);
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, ExperimentReport& report)
      : cfg_(cfg), report_(report), dir_(cfg.output_dir) {}

  template <class Fn>
  void emit(const std::string& name, Fn&& fill) {
    write_atomically(dir_ / name, std::forward<Fn>(fill));
    report_.files.push_back(name);
  }

  // Runs one unit of work; numerical failures are recorded and the sweep continues.
  template <class Fn>
  void guarded(const std::string& label, Fn&& fn) {
    try {
      fn();
    } catch (const EvaluationError& e) {
      report_.failures.push_back(label + ": " + e.what());
    } catch (const DomainError& e) {
      report_.failures.push_back(label + ": " + e.what());
    }
  }

  void flag(std::string what, std::string point, double value, double reference) {
    report_.flags.push_back({std::move(what), std::move(point), value, reference});
  }

  void note(std::string key, std::string value) { report_.notes.emplace_back(std::move(key), std::move(value)); }

  const ExperimentConfig& cfg() const { return cfg_; }

 private:
  const ExperimentConfig& cfg_;
  ExperimentReport& report_;
  std::filesystem::path dir_;
};

inline double relative_gap(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(b), 1e-300);
}

inline void run_moments(Runner& run) {
  const auto& cfg = run.cfg();
  std::ostringstream csv;
  csv << std::setprecision(17) << "ratio,theta_db,q,class,b,value,quadrature,rel_diff,ceu_mixture\n";
  for (double ratio : cfg.ratio_grid) {
    for (double th : cfg.theta_db_grid) {
      const NetworkParams p = cfg.network_at(ratio, th);
      for (double q : cfg.q_grid) {
        for (UserClass cls : cfg.classes) {
          for (double b : cfg.orders) {
            const std::string point = point_tag(ratio, th, q) + "_" + std::string(to_string(cls)) + "_b" +
                                      format_number(b);
            run.guarded("moments " + point, [&] {
              const double value = moment(MomentOrder::real(b), p, {q}, cls).real();
              const double oracle = cls == UserClass::kCenter ? moment_ccu_quadrature(b, p, {q})
                                                              : moment_ceu_quadrature(b, p, {q});
              const double gap = relative_gap(value, oracle);
              double mixture = value;
              if (cls == UserClass::kEdge) {
                mixture = moment_ceu_mixture(MomentOrder::real(b), p, {q}).real();
                if (relative_gap(mixture, value) > 1e-3) run.flag("ceu_mixture_vs_exact", point, mixture, value);
              }
              if (gap > 1e-6) run.flag("moment_vs_quadrature", point, value, oracle);
              csv << ratio << ',' << th << ',' << q << ',' << to_string(cls) << ',' << b << ',' << value << ','
                  << oracle << ',' << gap << ',' << mixture << '\n';
            });
          }
        }
      }
    }
  }
  run.emit("moments.csv", [&](std::ostream& out) { out << csv.str(); });
}

inline void run_metadist(Runner& run) {
  const auto& cfg = run.cfg();
  std::ostringstream index;
  index << std::setprecision(17) << "file,class,method,ratio,theta_db,q,mean,tail_bound\n";
  for (double ratio : cfg.ratio_grid) {
    for (double th : cfg.theta_db_grid) {
      const NetworkParams p = cfg.network_at(ratio, th);
      for (double q : cfg.q_grid) {
        for (UserClass cls : cfg.classes) {
          for (MetaMethod m : cfg.methods) {
            const std::string name = "meta_" + lower(to_string(cls)) + "_" + std::string(to_string(m)) + "_" +
                                     point_tag(ratio, th, q) + ".csv";
            run.guarded("metadist " + name, [&] {
              const MetaCurve curve = meta_distribution(p, {q}, cls, m, cfg.x_grid);
              run.emit(name, [&](std::ostream& out) { write_curve_csv(curve, out); });
              index << name << ',' << to_string(cls) << ',' << to_string(m) << ',' << ratio << ',' << th << ','
                    << q << ',' << curve.mean() << ',' << curve.tail_bound << '\n';
            });
          }
        }
      }
    }
  }
  run.emit("curves.csv", [&](std::ostream& out) { out << index.str(); });
}

inline double closed_form_delay(const NetworkParams& p, double q, UserClass cls, DelaySign sign) {
  if (sign == DelaySign::kCorrected || cls == UserClass::kEdge) return mean_local_delay(p, {q}, cls);
  return 1.0 / (1.0 + delay_divergence_term(p, q, UserClass::kCenter));
}

inline void run_delay(Runner& run) {
  const auto& cfg = run.cfg();
  std::ostringstream csv;
  std::ostringstream crit;
  csv << std::setprecision(17) << "ratio,theta_db,q,class,delay,oracle,rel_diff\n";
  crit << std::setprecision(17) << "ratio,theta_db,class,critical_activity\n";
  for (double ratio : cfg.ratio_grid) {
    for (double th : cfg.theta_db_grid) {
      const NetworkParams p = cfg.network_at(ratio, th);
      for (UserClass cls : cfg.classes) {
        run.guarded("critical " + point_tag(ratio, th, 0.0), [&] {
          const auto qc = critical_activity(p, cls);
          crit << ratio << ',' << th << ',' << to_string(cls) << ',' << (qc ? format_number(*qc) : "") << '\n';
        });
        for (double q : cfg.q_grid) {
          const std::string point = point_tag(ratio, th, q) + "_" + std::string(to_string(cls));
          run.guarded("delay " + point, [&] {
            const double d = closed_form_delay(p, q, cls, cfg.delay_sign);
            // E[P^-1] through the V series at b = -1, independent of the 2F1 closed form.
            const double oracle = moment(MomentOrder::real(-1.0), p, {q}, cls).real();
            const bool both_finite = std::isfinite(d) && std::isfinite(oracle);
            const double gap = both_finite ? relative_gap(d, oracle) : (std::isfinite(d) == std::isfinite(oracle) ? 0.0 : 1.0);
            if (gap > 1e-6) run.flag("delay_vs_moment_oracle", point, d, oracle);
            csv << ratio << ',' << th << ',' << q << ',' << to_string(cls) << ',' << d << ',' << oracle << ','
                << gap << '\n';
          });
        }
      }
    }
  }
  run.emit("delay.csv", [&](std::ostream& out) { out << csv.str(); });
  run.emit("critical_activity.csv", [&](std::ostream& out) { out << crit.str(); });
}

inline void run_fixed_point(Runner& run) {
  const auto& cfg = run.cfg();
  std::ostringstream csv;
  csv << std::setprecision(17) << "ratio,theta_db,class,xi,q_star,iterations,residual,converged,saturated,verdict\n";
  FixedPointOptions opt = cfg.fixed_point;
  opt.grid = cfg.x_grid;
  for (double ratio : cfg.ratio_grid) {
    for (double th : cfg.theta_db_grid) {
      const NetworkParams p = cfg.network_at(ratio, th);
      for (UserClass cls : cfg.classes) {
        for (double xi : cfg.xi_grid) {
          const std::string tag = "R" + format_number(ratio) + "_th" + format_number(th) + "dB_xi" + format_number(xi);
          run.guarded("fixed_point " + tag, [&] {
            const FixedPointResult r = fixed_point_solve(p, xi, cls, opt);
            csv << ratio << ',' << th << ',' << to_string(cls) << ',' << xi << ',' << r.q_star << ','
                << r.iterations << ',' << r.residual << ',' << (r.converged ? "true" : "false") << ','
                << (r.saturated ? "true" : "false") << ',' << to_string(stability_verdict(r)) << '\n';
            if (!r.converged) run.note("fixed_point.unconverged." + lower(to_string(cls)) + "." + tag, format_number(r.residual));
            run.emit("fixed_point_" + lower(to_string(cls)) + "_" + tag + ".csv",
                     [&](std::ostream& out) { write_curve_csv(r.curve, out); });
          });
        }
      }
    }
  }
  run.emit("fixed_point.csv", [&](std::ostream& out) { out << csv.str(); });
}

/// Fixed-activity runs pooled over geometries; stats[iq * nt + it].
struct PooledRun {
  std::vector<SimStats> stats;
  long geometries = 0;
  long users = 0;
};

inline PooledRun pooled_fixed_activity(const ExperimentConfig& cfg, const NetworkParams& p,
                                       const std::vector<double>& thetas, std::optional<double> budget) {
  const auto start = std::chrono::steady_clock::now();
  SimOptions opt;
  opt.far_field = cfg.sim.far_field;
  opt.jobs = static_cast<unsigned>(cfg.jobs);
  PooledRun pool;
  pool.stats.resize(cfg.q_grid.size() * thetas.size());
  for (long g = 0;; ++g) {
    if (cfg.sim.geometries > 0) {
      if (g >= cfg.sim.geometries) break;
    } else if (pool.users >= cfg.sim.min_users) {
      break;
    }
    if (budget && g > 0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > *budget) {
      break;
    }
    const auto snap = sample_network(p, cfg.sim.window, derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(g)));
    auto part = run_fixed_activity_grid(snap, p, cfg.q_grid, thetas, static_cast<int>(cfg.sim.draws),
                                        derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(g)), opt);
    for (std::size_t m = 0; m < part.size(); ++m) {
      for (auto& rec : part[m].links) {
        rec.user += static_cast<int>(pool.users);
        pool.stats[m].links.push_back(rec);
      }
    }
    pool.users += static_cast<long>(snap.num_users());
    pool.geometries = g + 1;
  }
  return pool;
}

inline std::vector<double> linear_thetas(const std::vector<double>& dbs) {
  std::vector<double> out;
  for (double db : dbs) out.push_back(db_to_linear(db));
  return out;
}

inline void run_simulate_fixed(Runner& run) {
  const auto& cfg = run.cfg();
  const auto thetas = linear_thetas(cfg.theta_db_grid);
  std::ostringstream summary;
  summary << std::setprecision(17) << "ratio,theta_db,q,class,links,m1,m1_se,m2,m2_se,inverse_p_mean\n";
  for (double ratio : cfg.ratio_grid) {
    const NetworkParams p = cfg.network.with_ratio(ratio);
    const PooledRun pool = pooled_fixed_activity(cfg, p, thetas, std::nullopt);
    run.note("sim.R" + format_number(ratio) + ".geometries", std::to_string(pool.geometries));
    run.note("sim.R" + format_number(ratio) + ".users", std::to_string(pool.users));
    for (std::size_t iq = 0; iq < cfg.q_grid.size(); ++iq) {
      for (std::size_t it = 0; it < thetas.size(); ++it) {
        const SimStats& s = pool.stats[iq * thetas.size() + it];
        const std::string tag = point_tag(ratio, cfg.theta_db_grid[it], cfg.q_grid[iq]);
        run.emit("links_" + tag + ".csv", [&](std::ostream& out) { write_links_csv(s, out); });
        for (UserClass cls : cfg.classes) {
          run.guarded("simulate " + tag + " " + std::string(to_string(cls)), [&] {
            const auto m1 = empirical_moment(s, cls, 1, cfg.sim.min_attempts);
            const auto m2 = empirical_moment(s, cls, 2, cfg.sim.min_attempts);
            const auto delay = empirical_mean_local_delay(s, cls, cfg.sim.min_attempts);
            summary << ratio << ',' << cfg.theta_db_grid[it] << ',' << cfg.q_grid[iq] << ',' << to_string(cls) << ','
                    << m1.links << ',' << m1.value << ',' << m1.standard_error << ',' << m2.value << ','
                    << m2.standard_error << ',' << delay.inverse_mean << '\n';
            const MetaCurve curve = empirical_meta(s, cls, cfg.x_grid, cfg.sim.min_attempts);
            run.emit("sim_meta_" + lower(to_string(cls)) + "_" + tag + ".csv",
                     [&](std::ostream& out) { write_curve_csv(curve, out); });
          });
        }
      }
    }
  }
  run.emit("sim_summary.csv", [&](std::ostream& out) { out << summary.str(); });
}

inline void run_simulate_queue(Runner& run) {
  const auto& cfg = run.cfg();
  std::ostringstream summary;
  summary << std::setprecision(17)
          << "ratio,theta_db,xi,class,links,mean_activity,backlog_growth,mean_service_attempts,status\n";
  SimOptions opt;
  opt.far_field = cfg.sim.far_field;
  for (double ratio : cfg.ratio_grid) {
    for (double th : cfg.theta_db_grid) {
      const NetworkParams p = cfg.network_at(ratio, th);
      for (std::size_t i = 0; i < cfg.xi_grid.size(); ++i) {
        const double xi = cfg.xi_grid[i];
        const std::string tag = "R" + format_number(ratio) + "_th" + format_number(th) + "dB_xi" + format_number(xi);
        const auto snap = sample_network(p, cfg.sim.window, derive_seed(cfg.seed, 3, i));
        std::string status = "ok";
        SimStats s;
        try {
          s = run_queue_coupled(snap, p, xi, cfg.sim.slots, cfg.sim.warmup, derive_seed(cfg.seed, 4, i), opt);
        } catch (const QueueOverflowError& e) {
          status = "overflow_at_slot_" + std::to_string(e.slot());
        }
        if (status == "ok") run.emit("queue_links_" + tag + ".csv", [&](std::ostream& out) { write_links_csv(s, out); });
        for (UserClass cls : cfg.classes) {
          double activity = 0.0;
          double service = std::numeric_limits<double>::quiet_NaN();
          std::size_t links = 0;
          for (const auto& rec : s.links) {
            if (rec.cls != cls) continue;
            activity += rec.activity_fraction;
            ++links;
          }
          if (links > 0) activity /= static_cast<double>(links);
          if (status == "ok") {
            try {
              service = empirical_mean_local_delay(s, cls, 1).service_mean;
            } catch (const EvaluationError&) {
            }
          }
          summary << ratio << ',' << th << ',' << xi << ',' << to_string(cls) << ',' << links << ',' << activity << ','
                  << s.backlog_growth << ',' << service << ',' << status << '\n';
        }
      }
    }
  }
  run.emit("queue_summary.csv", [&](std::ostream& out) { out << summary.str(); });
}

inline double sup_gap(const MetaCurve& a, const MetaCurve& b, double lo, double hi) {
  double gap = 0.0;
  for (double x : a.grid) {
    if (x < lo || x > hi) continue;
    gap = std::max(gap, std::abs(a.at(x) - b.at(x)));
  }
  return gap;
}

inline void run_compare(Runner& run) {
  const auto& cfg = run.cfg();
  const auto thetas = linear_thetas(cfg.theta_db_grid);
  std::ostringstream csv;
  std::ostringstream meta;
  csv << std::setprecision(17) << "ratio,theta_db,q,class,b,analytic,simulated,standard_error,z,rel_diff,within\n";
  meta << std::setprecision(17) << "ratio,theta_db,q,class,sup_gap\n";
  for (double ratio : cfg.ratio_grid) {
    const NetworkParams base = cfg.network.with_ratio(ratio);
    const PooledRun pool = pooled_fixed_activity(cfg, base, thetas, cfg.budget_seconds);
    run.note("compare.R" + format_number(ratio) + ".geometries", std::to_string(pool.geometries));
    run.note("compare.R" + format_number(ratio) + ".users", std::to_string(pool.users));
    for (std::size_t iq = 0; iq < cfg.q_grid.size(); ++iq) {
      for (std::size_t it = 0; it < thetas.size(); ++it) {
        const double q = cfg.q_grid[iq];
        const double th = cfg.theta_db_grid[it];
        const NetworkParams p = base.with_theta(thetas[it]);
        const SimStats& s = pool.stats[iq * thetas.size() + it];
        for (UserClass cls : cfg.classes) {
          const std::string point = point_tag(ratio, th, q) + "_" + std::string(to_string(cls));
          run.guarded("compare " + point, [&] {
            for (int b : {1, 2}) {
              const double ana = moment(MomentOrder::real(b), p, {q}, cls).real();
              const auto em = empirical_moment(s, cls, b);
              const double diff = em.value - ana;
              const double z = em.standard_error > 0.0 ? diff / em.standard_error : 0.0;
              const bool within = std::abs(diff) <= std::max(3.0 * em.standard_error, 0.02 * std::abs(ana));
              if (!within) run.flag("simulation_vs_analytic_b" + std::to_string(b), point, em.value, ana);
              csv << ratio << ',' << th << ',' << q << ',' << to_string(cls) << ',' << b << ',' << ana << ','
                  << em.value << ',' << em.standard_error << ',' << z << ',' << relative_gap(em.value, ana) << ','
                  << (within ? "true" : "false") << '\n';
            }
            const MetaCurve exact = meta_distribution(p, {q}, cls, MetaMethod::kGilPelaez, cfg.x_grid);
            const MetaCurve empirical = empirical_meta(s, cls, cfg.x_grid, cfg.sim.min_attempts);
            meta << ratio << ',' << th << ',' << q << ',' << to_string(cls) << ','
                 << sup_gap(exact, empirical, 0.05, 0.95) << '\n';
          });
        }
      }
    }
  }
  run.emit("compare.csv", [&](std::ostream& out) { out << csv.str(); });
  run.emit("compare_meta.csv", [&](std::ostream& out) { out << meta.str(); });
}

}  // namespace detail

/// Writes the manifest: full configuration, seeds, library version, output
/// files, discrepancy flags and failures. Contains no timestamps, so identical
/// runs give identical manifests.
inline void write_manifest(const ExperimentConfig& cfg, const ExperimentReport& report, std::ostream& out) {
  out << std::setprecision(17);
  out << "manifest.version=1\n";
  out << "library.name=ccmeta\n";
  out << "library.version=" << kVersion << '\n';
  const KeyValueConfig canonical = cfg.to_kv();
  for (const auto& [k, v] : canonical.entries()) out << "config." << k << '=' << v << '\n';
  for (const auto& [k, v] : report.notes) out << "run." << k << '=' << v << '\n';
  out << "output.count=" << report.files.size() << '\n';
  for (std::size_t i = 0; i < report.files.size(); ++i) out << "output." << i << '=' << report.files[i] << '\n';
  out << "flag.count=" << report.flags.size() << '\n';
  for (std::size_t i = 0; i < report.flags.size(); ++i) {
    const auto& f = report.flags[i];
    out << "flag." << i << '=' << f.what << " at " << f.point << " value=" << detail::format_number(f.value)
        << " reference=" << detail::format_number(f.reference) << '\n';
  }
  out << "failure.count=" << report.failures.size() << '\n';
  for (std::size_t i = 0; i < report.failures.size(); ++i) out << "failure." << i << '=' << report.failures[i] << '\n';
  out << "status=" << (report.exit_status() == 0 ? "ok" : "failed") << '\n';
}

inline void export_manifest(const ExperimentConfig& cfg, const ExperimentReport& report) {
  std::filesystem::create_directories(cfg.output_dir);
  detail::write_atomically(std::filesystem::path(cfg.output_dir) / "run_manifest.txt",
                           [&](std::ostream& out) { write_manifest(cfg, report, out); });
}

/// Runs the configured experiment, writing one CSV per curve or table plus
/// run_manifest.txt into cfg.output_dir. Numerical failures are recorded in the
/// report (exit_status() != 0) rather than thrown; I/O failures throw IoError.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
  ExperimentReport report;
  detail::Runner run(cfg, report);
  switch (cfg.kind) {
    case ExperimentKind::kMoments:
      detail::run_moments(run);
      break;
    case ExperimentKind::kMetadist:
      detail::run_metadist(run);
      break;
    case ExperimentKind::kDelay:
      detail::run_delay(run);
      break;
    case ExperimentKind::kFixedPoint:
      detail::run_fixed_point(run);
      break;
    case ExperimentKind::kSimulate:
      if (cfg.sim.mode == SimMode::kFixedActivity) {
        detail::run_simulate_fixed(run);
      } else {
        detail::run_simulate_queue(run);
      }
      break;
    case ExperimentKind::kCompare:
      detail::run_compare(run);
      break;
  }
  export_manifest(cfg, report);
  return report;
}

}  // namespace ccmeta
