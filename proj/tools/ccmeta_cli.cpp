// ccmeta: batch front end. One subcommand per experiment kind, each reading an
// optional key-value config (or a previous run_manifest.txt).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ccmeta/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<long> jobs;
};

int run(ccmeta::ExperimentKind kind, const CommonOptions& opt) {
  try {
    ccmeta::ExperimentConfig cfg =
        opt.config.empty() ? ccmeta::ExperimentConfig::from_kv(ccmeta::KeyValueConfig{}, kind)
                           : ccmeta::load_experiment_config(opt.config, kind);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.out) cfg.output_dir = *opt.out;
    if (opt.jobs) cfg.jobs = *opt.jobs;
    cfg.validate();

    const ccmeta::ExperimentReport report = ccmeta::run_experiment(cfg);
    std::cout << "wrote " << report.files.size() << " files and run_manifest.txt to " << cfg.output_dir << '\n';
    for (const auto& f : report.flags) {
      std::cout << "flag: " << f.what << " at " << f.point << " (" << f.value << " vs " << f.reference << ")\n";
    }
    for (const auto& f : report.failures) std::cerr << "failure: " << f << '\n';
    return report.exit_status();
  } catch (const ccmeta::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const ccmeta::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta distribution of the SIR for cell-center and cell-edge users"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ccmeta::kVersion));

  struct Entry {
    const char* name;
    ccmeta::ExperimentKind kind;
    const char* help;
  };
  const Entry entries[] = {
      {"moments", ccmeta::ExperimentKind::kMoments, "b-th moments with quadrature cross-checks"},
      {"metadist", ccmeta::ExperimentKind::kMetadist, "meta-distribution curves (Gil-Pelaez and beta)"},
      {"delay", ccmeta::ExperimentKind::kDelay, "mean local delay and critical activity"},
      {"fixed-point", ccmeta::ExperimentKind::kFixedPoint, "traffic-coupled activity fixed point"},
      {"simulate", ccmeta::ExperimentKind::kSimulate, "Monte Carlo (fixed activity or queue coupled)"},
      {"compare", ccmeta::ExperimentKind::kCompare, "analytics against the simulator with z-scores"},
  };

  CommonOptions opt;
  std::optional<ccmeta::ExperimentKind> chosen;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", opt.config, "key-value config file or run_manifest.txt")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "root seed (overrides seed.root)");
    sub->add_option("--out", opt.out, "output directory (overrides output.dir)");
    sub->add_option("--jobs", opt.jobs, "worker threads (overrides run.jobs)")->check(CLI::PositiveNumber);
    const ccmeta::ExperimentKind kind = e.kind;
    sub->callback([&chosen, kind] { chosen = kind; });
  }

  CLI11_PARSE(app, argc, argv);
  return run(*chosen, opt);
}
