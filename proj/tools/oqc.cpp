// Command-line entry point: train, sweep, analyze, verify.

#include "oqc/experiment.hpp"
#include "oqc/verify.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

oqc::RunOptions options_from(int threads, const std::string& output_root) {
  oqc::RunOptions o;
  o.threads = threads;
  if (!output_root.empty()) o.output_root = output_root;
  o.log = &std::cerr;
  return o;
}

int cmd_train(const std::string& path, const oqc::RunOptions& options) {
  const auto config = oqc::load_config(path);
  if (config.kind == oqc::ExperimentKind::Decomposition) {
    const auto table = oqc::run_decomposition(config, options);
    const auto cells = oqc::decomposition_cells(config);
    std::cout << std::left << std::setw(18) << "Host" << std::setw(13) << "Cell" << "Acc (%)\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& r = table.rows[i];
      std::cout << std::left << std::setw(18)
                << (cells[i].second.backbone.ffn.host == oqc::HostKind::Mlp ? "mlp" : "bilinear-standin")
                << std::setw(13) << cells[i].first << std::fixed << std::setprecision(2) << 100 * r.accuracy_mean()
                << " +- " << 100 * r.accuracy_std() << "\n";
    }
    std::cout << "wrote " << table.csv.string() << "\n";
    return kExitOk;
  }
  const auto result = oqc::run_experiment(config, options);
  oqc::print_summary(std::cout, {result});
  std::cout << "wrote " << result.directory.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const std::string& path, const std::vector<oqc::Index>& ranks, const oqc::RunOptions& options) {
  const auto config = oqc::load_config(path);
  const auto table = oqc::run_rank_sweep(config, ranks, options);
  std::cout << std::left << std::setw(8) << "Rank" << std::setw(18) << "Acc (%)" << "Params\n";
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const auto& r = table.rows[i];
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(2) << 100 * r.accuracy_mean() << " +- " << 100 * r.accuracy_std();
    std::cout << std::left << std::setw(8) << ranks[i] << std::setw(18) << acc.str()
              << r.seeds.front().record.parameter_count << "\n";
  }
  std::cout << "wrote " << table.csv.string() << "\n";
  return kExitOk;
}

int cmd_analyze(const std::string& run_dir) {
  const auto reports = oqc::analyze_run_dir(run_dir);
  for (const auto& r : reports) std::cout << oqc::to_json(r).dump(2) << "\n";
  return kExitOk;
}

int cmd_verify() {
  bool ok = true;
  for (const auto& s : oqc::verify::run_all()) {
    ok = ok && s.passed;
    std::cout << (s.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(24) << s.name << " worst "
              << std::scientific << std::setprecision(3) << s.worst << "  " << std::fixed << std::setprecision(1)
              << s.seconds << "s\n       " << s.detail << "\n";
  }
  std::cout << (ok ? "all suites passed\n" : "some suites failed\n");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal quadratic complement experiments"};
  app.require_subcommand(1);

  std::string config_path, run_dir, output_root;
  int threads = 1;
  std::vector<oqc::Index> ranks{16, 48, 56, 64};

  auto* train = app.add_subcommand("train", "Train every seed of a config and write run records");
  train->add_option("config", config_path, "YAML config file")->required();
  train->add_option("--threads", threads, "Concurrent seed runs (1 is the determinism reference)")
      ->check(CLI::PositiveNumber);
  train->add_option("--output-root", output_root, "Override the output root");

  auto* sweep = app.add_subcommand("sweep", "Rank sweep of the configured complement");
  sweep->add_option("config", config_path, "YAML config file")->required();
  sweep->add_option("--ranks", ranks, "Comma-separated ranks")->delimiter(',');
  sweep->add_option("--threads", threads, "Concurrent seed runs")->check(CLI::PositiveNumber);
  sweep->add_option("--output-root", output_root, "Override the output root");

  auto* analyze = app.add_subcommand("analyze", "Recompute mechanism reports from checkpoints");
  analyze->add_option("run_dir", run_dir, "runs/<hash> or runs/<hash>/<seed>")->required();

  app.add_subcommand("verify", "Run the invariant suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto options = options_from(threads, output_root);
    if (*train) return cmd_train(config_path, options);
    if (*sweep) return cmd_sweep(config_path, ranks, options);
    if (*analyze) return cmd_analyze(run_dir);
    return cmd_verify();
  } catch (const oqc::MissingFileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const oqc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
