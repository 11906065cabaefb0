#include "doctest.h"

#include "oqc/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

using namespace oqc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTiny = R"(
name: tiny
seeds: [0, 1]
backbone: {depth: 2, width: 8, heads: 2, patch: 4, image_size: 8, pr_readout: false}
variant: {host: mlp, complement: lr, rank: 4}
optimizer: {epochs: 1, batch_size: 8}
dataset: {kind: synthetic, n_classes: 3, train_per_class: 8, test_per_class: 4}
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("oqc_test_" + tag + "_" + std::to_string(std::rand()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string first_field(const std::string& line) { return line.substr(0, line.find(',')); }

struct Cli {
  int code;
  std::string output;
};

Cli run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "cli_output.txt";
  const std::string cmd = std::string(OQC_CLI) + " " + args + " > " + out.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

RunOptions quiet(const fs::path& root) {
  RunOptions o;
  o.output_root = root;
  return o;
}

}  // namespace

TEST_CASE("config parsing and defaults") {
  auto c = parse_config(kTiny);
  CHECK(c.name == "tiny");
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(c.backbone.width == 8);
  CHECK(c.backbone.ffn.complement == VariantKind::LowRank);
  CHECK(c.backbone.n_classes == 3);
  CHECK(c.dataset.spec.image_size == 8);
  CHECK(c.optimizer.peak_lr == 2e-3);
  CHECK(c.optimizer.weight_decay == 0.05);
  CHECK(c.precision == Precision::F32);
  CHECK(c.backbone.ffn.scope == InnerProductScope::PerToken);
}

TEST_CASE("config errors name the field") {
  auto bad = [](const std::string& patch) { return std::string(kTiny) + patch; };
  CHECK_THROWS_WITH_AS(parse_config(bad("precision: f16\n")), doctest::Contains("precision"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(bad("bogus: 1\n")), doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("backbone: {width: 8, widht: 3}\n"), doctest::Contains("backbone.widht"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("variant: {complement: lr, rank: 64}\nbackbone: {width: 64}\n"),
                       doctest::Contains("variant.rank"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("optimizer: {epochs: many}\n"), doctest::Contains("optimizer.epochs"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("backbone: {depth: 1, pr_readout: true}\n"),
                       doctest::Contains("backbone.pr_readout"), ConfigError);
  CHECK_THROWS_AS(parse_config("seeds: [0, 1\n"), ConfigError);
}

TEST_CASE("missing config file") {
  CHECK_THROWS_WITH_AS(load_config("/nonexistent/x.yaml"), doctest::Contains("/nonexistent/x.yaml"),
                       MissingFileError);
}

TEST_CASE("config hash is stable and content addressed") {
  const auto a = parse_config(kTiny);
  auto b = parse_config(kTiny);
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.output_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.optimizer.epochs = 2;
  CHECK(config_hash(a) != config_hash(b));
  // JSON round trip preserves the hash.
  CHECK(config_hash(config_from_json(to_json(a))) == config_hash(a));
}

TEST_CASE("variant labels") {
  auto c = parse_config(kTiny);
  CHECK(variant_label(c.backbone) == "mlp+lr");
  c.backbone.use_pr_readout = true;
  c.backbone.ffn.complement.reset();
  c.backbone.ffn.host = HostKind::Bilinear;
  CHECK(variant_label(c.backbone).find("pr") != std::string::npos);
}

TEST_CASE("output root resolution") {
  auto c = parse_config(kTiny);
  c.output_dir = "from_config";
  ::unsetenv("OQC_OUTPUT_ROOT");
  CHECK(resolve_output_root(c, {}) == "from_config");
  ::setenv("OQC_OUTPUT_ROOT", "from_env", 1);
  CHECK(resolve_output_root(c, {}) == "from_env");
  RunOptions o;
  o.output_root = "from_flag";
  CHECK(resolve_output_root(c, o) == "from_flag");
  ::unsetenv("OQC_OUTPUT_ROOT");
}

TEST_CASE("run_experiment writes the documented layout") {
  TempDir tmp("layout");
  const auto c = parse_config(kTiny);
  auto r = run_experiment(c, quiet(tmp.path));
  const fs::path dir = tmp.path / config_hash(c);
  CHECK(r.directory == dir);
  CHECK(r.seeds.size() == 2);
  for (const char* f : {"config.json", "records.jsonl", "summary.csv", "timing.csv"}) CHECK(fs::exists(dir / f));
  for (const char* s : {"0", "1"})
    for (const char* f : {"record.json", "mechanism.json", "mechanism.csv", "checkpoint.json"})
      CHECK(fs::exists(dir / s / f));
  CHECK(lines(dir / "records.jsonl").size() == 2);

  // Distinct seeds draw distinct parameters.
  CHECK(slurp(dir / "0" / "checkpoint.json") != slurp(dir / "1" / "checkpoint.json"));
  const auto record = json::parse(slurp(dir / "0" / "record.json"));
  CHECK(record["config_hash"] == config_hash(c));
  CHECK_FALSE(record.contains("images_per_second"));
  const auto mech = json::parse(slurp(dir / "0" / "mechanism.json"));
  CHECK_FALSE(mech.contains("gate_mean"));
  CHECK(mech["overlap_post"].get<double>() < mech["overlap_pre"].get<double>());
}

TEST_CASE("runs are reproducible byte for byte") {
  TempDir a("det_a"), b("det_b");
  const auto c = parse_config(kTiny);
  run_experiment(c, quiet(a.path));
  run_experiment(c, quiet(b.path));
  const fs::path da = a.path / config_hash(c), db = b.path / config_hash(c);
  for (const char* f : {"config.json", "records.jsonl", "summary.csv"}) CHECK(slurp(da / f) == slurp(db / f));
  for (const char* f : {"record.json", "mechanism.json", "mechanism.csv", "checkpoint.json"})
    CHECK(slurp(da / "1" / f) == slurp(db / "1" / f));
}

TEST_CASE("seed threads do not change results") {
  TempDir a("thr_a"), b("thr_b");
  const auto c = parse_config(kTiny);
  run_experiment(c, quiet(a.path));
  auto two = quiet(b.path);
  two.threads = 2;
  run_experiment(c, two);
  CHECK(slurp(a.path / config_hash(c) / "records.jsonl") == slurp(b.path / config_hash(c) / "records.jsonl"));
}

TEST_CASE("gated runs report gate statistics") {
  TempDir tmp("gated");
  auto c = parse_config(kTiny);
  c.backbone.ffn.complement = VariantKind::DynamicGate;
  c.seeds = {0};
  run_experiment(c, quiet(tmp.path));
  const auto mech = json::parse(slurp(tmp.path / config_hash(c) / "0" / "mechanism.json"));
  CHECK(mech.contains("gate_mean"));
  CHECK(mech.contains("gate_std"));
  CHECK(lines(tmp.path / config_hash(c) / "0" / "mechanism.csv").front().find("gate_std") != std::string::npos);
}

TEST_CASE("analyze re-evaluates checkpoints") {
  TempDir tmp("analyze");
  auto c = parse_config(kTiny);
  c.backbone.ffn.complement = VariantKind::AblationNoOrtho;
  c.seeds = {0};
  run_experiment(c, quiet(tmp.path));
  const fs::path seed_dir = tmp.path / config_hash(c) / "0";
  const std::string before = slurp(seed_dir / "mechanism.json");
  fs::remove(seed_dir / "mechanism.json");
  auto reports = analyze_run_dir(seed_dir);
  REQUIRE(reports.size() == 1);
  CHECK(slurp(seed_dir / "mechanism.json") == before);
  CHECK(*reports[0].overlap_post == *reports[0].overlap_pre);
  CHECK(analyze_run_dir(tmp.path / config_hash(c)).size() == 1);

  fs::remove(seed_dir / "checkpoint.json");
  CHECK_THROWS_AS(analyze_run_dir(seed_dir), MissingFileError);
  CHECK_THROWS_AS(analyze_run_dir(tmp.path / "nope"), MissingFileError);
}

TEST_CASE("decomposition emits the eight cells") {
  TempDir tmp("decomp");
  auto c = parse_config(kTiny);
  c.seeds = {0};
  c.kind = ExperimentKind::Decomposition;
  const auto cells = decomposition_cells(c);
  REQUIRE(cells.size() == 8);
  auto table = run_decomposition(c, quiet(tmp.path));
  const auto rows = lines(table.csv);
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == "host,cell,acc_mean,acc_std,params,n_seeds,config_hash");
  const std::vector<std::string> expected{"mlp,Base", "mlp,+PR", "mlp,+OQC-LR", "mlp,+OQC-LR+PR",
                                          "bilinear-standin,Base", "bilinear-standin,+PR",
                                          "bilinear-standin,+OQC-LR", "bilinear-standin,+OQC-LR+PR"};
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(rows[i + 1].rfind(expected[i] + ",", 0) == 0);
}

TEST_CASE("rank sweep emits one row per rank") {
  TempDir tmp("sweep");
  auto c = parse_config(kTiny);
  c.seeds = {0};
  c.backbone.width = 72;
  auto table = run_rank_sweep(c, {16, 48, 56, 64}, quiet(tmp.path));
  const auto rows = lines(table.csv);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "rank,acc_mean,acc_std,params,n_seeds,config_hash");
  std::set<std::string> ranks;
  for (std::size_t i = 1; i < rows.size(); ++i) ranks.insert(first_field(rows[i]));
  CHECK(ranks == std::set<std::string>{"16", "48", "56", "64"});

  c.backbone.ffn.complement.reset();
  CHECK_THROWS_AS(run_rank_sweep(c, {16}, quiet(tmp.path)), ConfigError);
}

TEST_CASE("summary table") {
  TempDir tmp("summary");
  auto c = parse_config(kTiny);
  auto r = run_experiment(c, quiet(tmp.path));
  std::ostringstream os;
  print_summary(os, {r});
  CHECK(os.str().find("mlp+lr") != std::string::npos);
  CHECK(os.str().find("+-") != std::string::npos);
}

// ---------------------------------------------------------------------------
// Command line

TEST_CASE("cli train on a minimal config") {
  TempDir tmp("cli_train");
  {
    std::ofstream(tmp.path / "tiny.yaml") << kTiny;
  }
  auto r = run_cli("train " + (tmp.path / "tiny.yaml").string() + " --output-root " + (tmp.path / "runs").string(),
                   tmp.path);
  INFO(r.output);
  CHECK(r.code == 0);
  CHECK(fs::exists(tmp.path / "runs" / config_hash(parse_config(kTiny)) / "records.jsonl"));
  CHECK(r.output.find("mlp+lr") != std::string::npos);
}

TEST_CASE("cli honors the output root environment variable") {
  TempDir tmp("cli_env");
  {
    std::ofstream(tmp.path / "tiny.yaml") << kTiny;
  }
  const fs::path root = tmp.path / "env_runs";
  ::setenv("OQC_OUTPUT_ROOT", root.c_str(), 1);
  auto r = run_cli("train " + (tmp.path / "tiny.yaml").string(), tmp.path);
  ::unsetenv("OQC_OUTPUT_ROOT");
  CHECK(r.code == 0);
  CHECK(fs::exists(root / config_hash(parse_config(kTiny))));
}

TEST_CASE("cli exit codes") {
  TempDir tmp("cli_codes");
  auto missing = run_cli("train /nonexistent/config.yaml", tmp.path);
  CHECK(missing.code == 2);
  CHECK(missing.output.find("/nonexistent/config.yaml") != std::string::npos);

  {
    std::ofstream(tmp.path / "bad.yaml") << "backbone: {widht: 8}\n";
  }
  auto bad = run_cli("train " + (tmp.path / "bad.yaml").string(), tmp.path);
  CHECK(bad.code == 2);
  CHECK(bad.output.find("backbone.widht") != std::string::npos);

  CHECK(run_cli("", tmp.path).code == 2);
  CHECK(run_cli("frobnicate", tmp.path).code == 2);
  CHECK(run_cli("analyze " + (tmp.path / "nothing").string(), tmp.path).code == 2);
}

TEST_CASE("cli verify") {
  TempDir tmp("cli_verify");
  auto r = run_cli("verify", tmp.path);
  INFO(r.output);
  CHECK(r.code == 0);
  CHECK(r.output.find("FAIL") == std::string::npos);
}

TEST_CASE("shipped example configs parse") {
  int n = 0;
  for (const auto& e : fs::directory_iterator(OQC_CONFIG_DIR)) {
    if (e.path().extension() != ".yaml") continue;
    INFO(e.path());
    CHECK_NOTHROW(load_config(e.path()));
    ++n;
  }
  CHECK(n >= 3);
}
