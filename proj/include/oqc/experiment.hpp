#pragma once

// Experiment configuration, multi-seed runner, and the on-disk result layout:
//
//   <root>/<config-hash>/config.json        canonical configuration
//   <root>/<config-hash>/records.jsonl      one RunRecord per seed
//   <root>/<config-hash>/summary.csv        accuracy mean/std and parameters
//   <root>/<config-hash>/timing.csv         measured throughput (not reproducible)
//   <root>/<config-hash>/<seed>/record.json
//   <root>/<config-hash>/<seed>/mechanism.json
//   <root>/<config-hash>/<seed>/checkpoint.json

#include "oqc/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace oqc {

/// Invalid configuration; the message starts with the offending field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A required input file or directory does not exist.
class MissingFileError : public std::runtime_error {
 public:
  explicit MissingFileError(const std::filesystem::path& p)
      : std::runtime_error("no such file: " + p.string()), path(p) {}
  std::filesystem::path path;
};

enum class Precision { F32, F64 };
enum class ExperimentKind { Single, Decomposition };

struct DatasetConfig {
  bool synthetic = true;
  SyntheticDatasetSpec spec;         // synthetic only; image_size follows the backbone
  std::filesystem::path folder;      // image folder root otherwise
};

struct ExperimentConfig {
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::Single;
  BackboneConfig backbone;           // carries the FfnVariant and inner-product scope
  OptimizerConfig optimizer;
  DatasetConfig dataset;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  Precision precision = Precision::F32;
  std::size_t analysis_samples = 2048;
  std::filesystem::path output_dir = "runs";
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Throws ConfigError naming the field.
void validate(const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over the canonical JSON (output_dir excluded).
std::string config_hash(const ExperimentConfig& config);

/// Short human label, e.g. "mlp+lr+pr".
std::string variant_label(const BackboneConfig& backbone);

nlohmann::json to_json(const RunRecord& record);
nlohmann::json to_json(const metrics::MechanismReport& report);

struct RunOptions {
  int threads = 1;                           // concurrent seed runs
  std::optional<std::filesystem::path> output_root;  // overrides config.output_dir
  std::ostream* log = nullptr;
};

/// Honors OQC_OUTPUT_ROOT, then the config's output_dir.
std::filesystem::path resolve_output_root(const ExperimentConfig& config, const RunOptions& options);

struct SeedResult {
  RunRecord record;
  metrics::MechanismReport report;
};

struct ExperimentResult {
  std::string label;
  std::string config_hash;
  std::filesystem::path directory;
  std::vector<SeedResult> seeds;

  double accuracy_mean() const;
  double accuracy_std() const;  // sample std over seeds, 0 for one seed
  double images_per_second_mean() const;
};

Dataset load_dataset(const ExperimentConfig& config);

/// Trains and analyzes one model per seed, writing the layout above.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// The four readout/complement cells for both hosts, in table order.
std::vector<std::pair<std::string, ExperimentConfig>> decomposition_cells(const ExperimentConfig& base);

struct TableResult {
  std::filesystem::path csv;
  std::vector<ExperimentResult> rows;
};

/// Runs every decomposition cell and writes decomposition.csv under the
/// base config's hash directory.
TableResult run_decomposition(const ExperimentConfig& config, const RunOptions& options = {});

/// Rank sweep for the configured complement; writes rank_sweep.csv.
TableResult run_rank_sweep(const ExperimentConfig& config, const std::vector<Index>& ranks,
                           const RunOptions& options = {});

/// Re-evaluates checkpoints under `run_dir` (one seed directory or a whole
/// config-hash directory), writing mechanism.json and mechanism.csv beside
/// each checkpoint. Throws MissingFileError when a checkpoint is absent.
std::vector<metrics::MechanismReport> analyze_run_dir(const std::filesystem::path& run_dir);

/// Console summary: variant, accuracy mean +- std, params, img/s.
void print_summary(std::ostream& os, const std::vector<ExperimentResult>& results);

}  // namespace oqc
