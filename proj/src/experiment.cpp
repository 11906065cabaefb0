#include "oqc/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace oqc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// YAML -> JSON, then one strict reader for both config sources.

json scalar_to_json(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s.empty() || s == "~" || s == "null") return nullptr;
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  std::int64_t i = 0;
  auto [pi, ei] = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ei == std::errc() && pi == s.data() + s.size()) return i;
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (end == s.c_str() + s.size()) return d;
  return s;
}

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Scalar:
      return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& e : n) arr.push_back(yaml_to_json(e));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : n) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    default:
      return nullptr;
  }
}

[[noreturn]] void fail(const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); }

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_.empty() ? "config" : path_, "expected a mapping");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::int64_t integer(const std::string& key, std::int64_t def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number_integer()) fail(field(key), "expected an integer");
    return v->get<std::int64_t>();
  }
  double number(const std::string& key, double def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_number()) fail(field(key), "expected a number");
    return v->get<double>();
  }
  bool boolean(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) fail(field(key), "expected true or false");
    return v->get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_string()) fail(field(key), "expected a string");
    return v->get<std::string>();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) fail(field(key), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

const json kEmptyObject = json::object();

const json& section(Fields& parent, const std::string& key) {
  const json* v = parent.find(key);
  return v ? *v : kEmptyObject;
}

std::string host_name(HostKind h) { return h == HostKind::Mlp ? "mlp" : "bilinear"; }

// Output label for the bilinear host makes its stand-in status explicit.
std::string host_label(HostKind h) { return h == HostKind::Mlp ? "mlp" : "bilinear-standin"; }

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config <-> JSON

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Fields top(j, "");
  c.name = top.string("name", c.name);
  const std::string kind = top.string("experiment", "single");
  if (kind == "single") {
    c.kind = ExperimentKind::Single;
  } else if (kind == "decomposition") {
    c.kind = ExperimentKind::Decomposition;
  } else {
    fail("experiment", "expected single or decomposition, got '" + kind + "'");
  }
  const std::string precision = top.string("precision", "f32");
  if (precision == "f32") {
    c.precision = Precision::F32;
  } else if (precision == "f64") {
    c.precision = Precision::F64;
  } else {
    fail("precision", "expected f32 or f64, got '" + precision + "'");
  }
  const std::string scope = top.string("inner_product_scope", "per_token");
  if (auto s = parse_scope(scope)) {
    c.backbone.ffn.scope = *s;
  } else {
    fail("inner_product_scope", "expected per_token or global, got '" + scope + "'");
  }
  c.output_dir = top.string("output_dir", c.output_dir.string());

  if (const json* seeds = top.find("seeds")) {
    if (!seeds->is_array() || seeds->empty()) fail("seeds", "expected a non-empty list of integers");
    c.seeds.clear();
    for (const auto& s : *seeds) {
      if (!s.is_number_integer() || s.get<std::int64_t>() < 0) fail("seeds", "entries must be non-negative integers");
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }

  {
    Fields b(section(top, "backbone"), "backbone");
    c.backbone.depth = b.integer("depth", c.backbone.depth);
    c.backbone.width = b.integer("width", c.backbone.width);
    c.backbone.heads = b.integer("heads", c.backbone.heads);
    c.backbone.patch = b.integer("patch", c.backbone.patch);
    c.backbone.image_size = b.integer("image_size", c.backbone.image_size);
    c.backbone.use_pr_readout = b.boolean("pr_readout", c.backbone.use_pr_readout);
    b.finish();
  }
  {
    Fields v(section(top, "variant"), "variant");
    const std::string host = v.string("host", "mlp");
    if (host == "mlp") {
      c.backbone.ffn.host = HostKind::Mlp;
    } else if (host == "bilinear") {
      c.backbone.ffn.host = HostKind::Bilinear;
    } else {
      fail("variant.host", "expected mlp or bilinear, got '" + host + "'");
    }
    const std::string comp = v.string("complement", "none");
    if (comp == "none") {
      c.backbone.ffn.complement.reset();
    } else if (auto k = parse_variant_kind(comp)) {
      c.backbone.ffn.complement = *k;
    } else {
      fail("variant.complement",
           "expected none, full, lr, static, dynamic, shared_projection, no_ortho or no_gate, got '" + comp + "'");
    }
    c.backbone.ffn.rank = v.integer("rank", c.backbone.ffn.rank);
    c.backbone.ffn.groups = v.integer("bilinear_groups", c.backbone.ffn.groups);
    c.backbone.ffn.per_channel_gate = v.boolean("per_channel_gate", c.backbone.ffn.per_channel_gate);
    v.finish();
  }
  {
    Fields o(section(top, "optimizer"), "optimizer");
    auto& opt = c.optimizer;
    opt.peak_lr = o.number("peak_lr", opt.peak_lr);
    opt.weight_decay = o.number("weight_decay", opt.weight_decay);
    opt.beta1 = o.number("beta1", opt.beta1);
    opt.beta2 = o.number("beta2", opt.beta2);
    opt.eps = o.number("eps", opt.eps);
    opt.warmup_fraction = o.number("warmup_fraction", opt.warmup_fraction);
    opt.epochs = static_cast<int>(o.integer("epochs", opt.epochs));
    opt.batch_size = static_cast<int>(o.integer("batch_size", opt.batch_size));
    o.finish();
  }
  {
    Fields d(section(top, "dataset"), "dataset");
    const std::string kind = d.string("kind", "synthetic");
    auto& s = c.dataset.spec;
    if (kind == "synthetic") {
      c.dataset.synthetic = true;
      s.n_classes = static_cast<int>(d.integer("n_classes", s.n_classes));
      s.train_per_class = static_cast<int>(d.integer("train_per_class", s.train_per_class));
      s.test_per_class = static_cast<int>(d.integer("test_per_class", s.test_per_class));
      s.cell = static_cast<int>(d.integer("cell", s.cell));
      s.pairs = static_cast<int>(d.integer("pairs", s.pairs));
      s.correlation = d.number("correlation", s.correlation);
      s.noise = d.number("noise", s.noise);
      const std::int64_t seed = d.integer("seed", static_cast<std::int64_t>(s.seed));
      if (seed < 0) fail("dataset.seed", "must be non-negative");
      s.seed = static_cast<std::uint64_t>(seed);
    } else if (kind == "folder") {
      c.dataset.synthetic = false;
      c.dataset.folder = d.string("path", "");
      if (c.dataset.folder.empty()) fail("dataset.path", "required when dataset.kind is folder");
      s.n_classes = static_cast<int>(d.integer("n_classes", s.n_classes));
    } else {
      fail("dataset.kind", "expected synthetic or folder, got '" + kind + "'");
    }
    d.finish();
  }
  {
    Fields a(section(top, "analysis"), "analysis");
    const std::int64_t n = a.integer("max_samples", static_cast<std::int64_t>(c.analysis_samples));
    if (n < 2) fail("analysis.max_samples", "must be >= 2");
    c.analysis_samples = static_cast<std::size_t>(n);
    a.finish();
  }
  top.finish();
  c.dataset.spec.image_size = static_cast<int>(c.backbone.image_size);
  c.backbone.n_classes = c.dataset.spec.n_classes;
  validate(c);
  return c;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML syntax error: ") + e.what());
  }
  if (root.IsNull()) return config_from_json(json::object());
  return config_from_json(yaml_to_json(root));
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError(path);
  std::ifstream in(path);
  if (!in) throw MissingFileError(path);
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") return config_from_json(json::parse(ss.str()));
  return parse_config(ss.str());
}

json to_json(const ExperimentConfig& c) {
  const auto& b = c.backbone;
  json j;
  j["name"] = c.name;
  j["experiment"] = c.kind == ExperimentKind::Single ? "single" : "decomposition";
  j["precision"] = c.precision == Precision::F32 ? "f32" : "f64";
  j["inner_product_scope"] = std::string(to_string(b.ffn.scope));
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir.string();
  j["backbone"] = {{"depth", b.depth},   {"width", b.width},           {"heads", b.heads},
                   {"patch", b.patch},   {"image_size", b.image_size}, {"pr_readout", b.use_pr_readout}};
  j["variant"] = {{"host", host_name(b.ffn.host)},
                  {"complement", b.ffn.complement ? std::string(to_string(*b.ffn.complement)) : "none"},
                  {"rank", b.ffn.rank},
                  {"bilinear_groups", b.ffn.groups},
                  {"per_channel_gate", b.ffn.per_channel_gate}};
  const auto& o = c.optimizer;
  j["optimizer"] = {{"peak_lr", o.peak_lr}, {"weight_decay", o.weight_decay}, {"beta1", o.beta1},
                    {"beta2", o.beta2},     {"eps", o.eps},                   {"warmup_fraction", o.warmup_fraction},
                    {"epochs", o.epochs},   {"batch_size", o.batch_size}};
  const auto& s = c.dataset.spec;
  if (c.dataset.synthetic) {
    j["dataset"] = {{"kind", "synthetic"},
                    {"n_classes", s.n_classes},
                    {"train_per_class", s.train_per_class},
                    {"test_per_class", s.test_per_class},
                    {"cell", s.cell},
                    {"pairs", s.pairs},
                    {"correlation", s.correlation},
                    {"noise", s.noise},
                    {"seed", s.seed}};
  } else {
    j["dataset"] = {{"kind", "folder"}, {"path", c.dataset.folder.string()}, {"n_classes", s.n_classes}};
  }
  j["analysis"] = {{"max_samples", c.analysis_samples}};
  return j;
}

void validate(const ExperimentConfig& c) {
  try {
    validate(c.backbone);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto& o = c.optimizer;
  if (!(o.peak_lr > 0)) fail("optimizer.peak_lr", "must be > 0");
  if (o.weight_decay < 0) fail("optimizer.weight_decay", "must be >= 0");
  if (o.beta1 < 0 || o.beta1 >= 1) fail("optimizer.beta1", "must lie in [0, 1)");
  if (o.beta2 < 0 || o.beta2 >= 1) fail("optimizer.beta2", "must lie in [0, 1)");
  if (!(o.eps > 0)) fail("optimizer.eps", "must be > 0");
  if (o.warmup_fraction < 0 || o.warmup_fraction >= 1) fail("optimizer.warmup_fraction", "must lie in [0, 1)");
  if (o.epochs < 1) fail("optimizer.epochs", "must be >= 1");
  if (o.batch_size < 1) fail("optimizer.batch_size", "must be >= 1");
  if (c.seeds.empty()) fail("seeds", "must not be empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    fail("seeds", "must be distinct");
  }
  if (c.dataset.synthetic) {
    const auto& s = c.dataset.spec;
    if (s.cell < 1 || s.image_size % s.cell != 0) fail("dataset.cell", "must divide backbone.image_size");
    if (s.pairs < 1 || 2 * s.pairs > 3 * s.cell * s.cell) fail("dataset.pairs", "must lie in [1, 3*cell*cell/2]");
    if (std::abs(s.correlation) > 1) fail("dataset.correlation", "must lie in [-1, 1]");
    if (s.noise < 0) fail("dataset.noise", "must be >= 0");
    if (s.train_per_class < 1) fail("dataset.train_per_class", "must be >= 1");
    if (s.test_per_class < 2) fail("dataset.test_per_class", "must be >= 2");
  }
}

std::string config_hash(const ExperimentConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string variant_label(const BackboneConfig& b) {
  std::string s = host_label(b.ffn.host);
  if (b.ffn.complement) s += "+" + std::string(to_string(*b.ffn.complement));
  if (b.use_pr_readout) s += "+pr";
  return s;
}

json to_json(const RunRecord& r) {
  return {{"label", r.label},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"parameter_count", r.parameter_count},
          {"analytic_parameter_count", r.analytic_parameter_count},
          {"train_loss", r.train_loss},
          {"test_accuracy", r.test_accuracy},
          {"best_test_accuracy", r.best_test_accuracy}};
}

json to_json(const metrics::MechanismReport& r) {
  json j;
  j["variant"] = r.variant;
  j["host"] = r.host;
  j["n_samples"] = r.n_samples;
  j["accuracy"] = r.accuracy;
  j["eff_rank"] = r.eff_rank;
  j["part_ratio"] = r.part_ratio;
  j["separation"] = r.separation;
  j["geometry_note"] = "eff_rank, part_ratio and separation are for ordinal comparison between variants only";
  if (r.overlap_pre) j["overlap_pre"] = *r.overlap_pre;
  if (r.overlap_post) j["overlap_post"] = *r.overlap_post;
  if (r.overlap_post_max) j["overlap_post_max"] = *r.overlap_post_max;
  if (r.overlap_post_f64) j["overlap_post_f64"] = *r.overlap_post_f64;
  json layers = json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"layer", l.layer}, {"overlap_pre", l.pre}, {"overlap_post", l.post}, {"overlap_post_max", l.post_max}});
  }
  j["layers"] = layers;
  if (r.gate_mean) j["gate_mean"] = *r.gate_mean;
  if (r.gate_std) j["gate_std"] = *r.gate_std;
  return j;
}

fs::path resolve_output_root(const ExperimentConfig& config, const RunOptions& options) {
  if (options.output_root) return *options.output_root;
  if (const char* env = std::getenv("OQC_OUTPUT_ROOT"); env && *env) return env;
  return config.output_dir;
}

double ExperimentResult::accuracy_mean() const {
  if (seeds.empty()) return 0;
  double s = 0;
  for (const auto& r : seeds) s += r.record.best_test_accuracy;
  return s / static_cast<double>(seeds.size());
}

double ExperimentResult::accuracy_std() const {
  if (seeds.size() < 2) return 0;
  const double m = accuracy_mean();
  double ss = 0;
  for (const auto& r : seeds) ss += (r.record.best_test_accuracy - m) * (r.record.best_test_accuracy - m);
  return std::sqrt(ss / static_cast<double>(seeds.size() - 1));
}

double ExperimentResult::images_per_second_mean() const {
  if (seeds.empty()) return 0;
  double s = 0;
  for (const auto& r : seeds) s += r.record.images_per_second;
  return s / static_cast<double>(seeds.size());
}

Dataset load_dataset(const ExperimentConfig& config) {
  if (config.dataset.synthetic) return generate_synthetic(config.dataset.spec);
  if (!fs::exists(config.dataset.folder)) throw MissingFileError(config.dataset.folder);
  Dataset d = load_image_folder(config.dataset.folder);
  if (d.train.size != config.backbone.image_size) {
    fail("dataset.path", "images are " + std::to_string(d.train.size) + " pixels wide but backbone.image_size is " +
                             std::to_string(config.backbone.image_size));
  }
  if (d.train.n_classes != config.backbone.n_classes) {
    fail("dataset.n_classes", "folder holds " + std::to_string(d.train.n_classes) + " classes");
  }
  return d;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError(path);
  std::ifstream in(path);
  return json::parse(in);
}

template <typename Scalar>
json checkpoint_json(const VisionTransformer<Scalar>& model, const std::string& hash, std::uint64_t seed) {
  json params = json::array();
  for (const auto& p : model.parameters()) {
    const auto& v = p.tensor.value();
    std::vector<double> values(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<double>(v.data()[i]);
    params.push_back({{"name", p.name}, {"rows", v.rows()}, {"cols", v.cols()}, {"values", values}});
  }
  return {{"config_hash", hash}, {"seed", seed}, {"parameters", params}};
}

template <typename Scalar>
void load_checkpoint(VisionTransformer<Scalar>& model, const json& ck, const fs::path& path) {
  auto params = model.parameters();
  const auto& stored = ck.at("parameters");
  if (stored.size() != params.size()) throw std::runtime_error(path.string() + ": parameter layout differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& s = stored[i];
    auto& t = params[i].tensor;
    if (s.at("name").get<std::string>() != params[i].name || s.at("rows").get<Index>() != t.rows() ||
        s.at("cols").get<Index>() != t.cols()) {
      throw std::runtime_error(path.string() + ": mismatch at parameter " + params[i].name);
    }
    const auto values = s.at("values").get<std::vector<double>>();
    auto& v = t.mutable_value();
    for (Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<Scalar>(values[static_cast<std::size_t>(k)]);
  }
}

std::string mechanism_csv(const metrics::MechanismReport& r) {
  const bool gated = r.gate_mean.has_value();
  std::ostringstream os;
  os << "variant,host,n_samples,Acc,EffRank,PartRatio,Sep,overlap_pre,overlap_post,overlap_post_f64";
  if (gated) os << ",gate_mean,gate_std";
  os << "\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v, 8) : std::string(); };
  os << r.variant << "," << r.host << "," << r.n_samples << "," << fmt(r.accuracy, 8) << "," << fmt(r.eff_rank, 8)
     << "," << fmt(r.part_ratio, 8) << "," << fmt(r.separation, 8) << "," << opt(r.overlap_pre) << ","
     << opt(r.overlap_post) << "," << opt(r.overlap_post_f64);
  if (gated) os << "," << fmt(*r.gate_mean, 8) << "," << fmt(*r.gate_std, 8);
  os << "\n";
  return os.str();
}

template <typename Scalar>
SeedResult run_seed(const ExperimentConfig& config, const Dataset& data, const std::string& hash,
                    std::uint64_t seed, const fs::path& dir) {
  VisionTransformer<Scalar> model(config.backbone, seed);
  SeedResult out;
  out.record = train_model(model, data, config.optimizer, seed);
  out.record.label = variant_label(config.backbone);
  out.record.config_hash = hash;
  out.report = analyze_model(model, data.test, config.analysis_samples);
  out.report.host = host_label(config.backbone.ffn.host);
  write_text(dir / "record.json", to_json(out.record).dump(2) + "\n");
  write_text(dir / "mechanism.json", to_json(out.report).dump(2) + "\n");
  write_text(dir / "mechanism.csv", mechanism_csv(out.report));
  write_text(dir / "checkpoint.json", checkpoint_json(model, hash, seed).dump() + "\n");
  return out;
}

template <typename Job>
void parallel_for(std::size_t n, int threads, Job job) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (k <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::mutex log_mutex;

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  const Dataset data = load_dataset(config);
  ExperimentResult result;
  result.label = variant_label(config.backbone);
  result.config_hash = config_hash(config);
  result.directory = resolve_output_root(config, options) / result.config_hash;
  fs::create_directories(result.directory);
  write_text(result.directory / "config.json", to_json(config).dump(2) + "\n");

  result.seeds.resize(config.seeds.size());
  parallel_for(config.seeds.size(), options.threads, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    const fs::path dir = result.directory / std::to_string(seed);
    result.seeds[i] = config.precision == Precision::F32
                          ? run_seed<float>(config, data, result.config_hash, seed, dir)
                          : run_seed<double>(config, data, result.config_hash, seed, dir);
    if (options.log) {
      std::lock_guard lock(log_mutex);
      *options.log << "  " << result.label << " seed " << seed << ": best acc "
                   << fmt(result.seeds[i].record.best_test_accuracy, 4) << "\n"
                   << std::flush;
    }
  });

  std::string jsonl;
  std::ostringstream timing;
  timing << "label,seed,images_per_second\n";
  for (const auto& s : result.seeds) {
    jsonl += to_json(s.record).dump() + "\n";
    timing << s.record.label << "," << s.record.seed << "," << fmt(s.record.images_per_second) << "\n";
  }
  write_text(result.directory / "records.jsonl", jsonl);
  write_text(result.directory / "timing.csv", timing.str());
  std::ostringstream summary;
  summary << "label,n_seeds,acc_mean,acc_std,params\n"
          << result.label << "," << result.seeds.size() << "," << fmt(result.accuracy_mean(), 8) << ","
          << fmt(result.accuracy_std(), 8) << "," << result.seeds.front().record.parameter_count << "\n";
  write_text(result.directory / "summary.csv", summary.str());
  return result;
}

std::vector<std::pair<std::string, ExperimentConfig>> decomposition_cells(const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> cells;
  for (HostKind host : {HostKind::Mlp, HostKind::Bilinear}) {
    for (int cell = 0; cell < 4; ++cell) {
      ExperimentConfig c = base;
      c.kind = ExperimentKind::Single;
      c.backbone.ffn.host = host;
      const bool oqc = cell >= 2;
      c.backbone.use_pr_readout = cell % 2 == 1;
      if (oqc) {
        c.backbone.ffn.complement = VariantKind::LowRank;
      } else {
        c.backbone.ffn.complement.reset();
      }
      static const char* names[] = {"Base", "+PR", "+OQC-LR", "+OQC-LR+PR"};
      cells.emplace_back(names[cell], std::move(c));
    }
  }
  return cells;
}

TableResult run_decomposition(const ExperimentConfig& config, const RunOptions& options) {
  auto cells = decomposition_cells(config);
  for (const auto& [name, c] : cells) validate(c);
  TableResult table;
  for (const auto& [name, c] : cells) {
    if (options.log) *options.log << host_label(c.backbone.ffn.host) << " " << name << "\n";
    table.rows.push_back(run_experiment(c, options));
  }
  std::ostringstream csv;
  csv << "host,cell,acc_mean,acc_std,params,n_seeds,config_hash\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& r = table.rows[i];
    csv << host_label(cells[i].second.backbone.ffn.host) << "," << cells[i].first << "," << fmt(r.accuracy_mean(), 8)
        << "," << fmt(r.accuracy_std(), 8) << "," << r.seeds.front().record.parameter_count << "," << r.seeds.size()
        << "," << r.config_hash << "\n";
  }
  const fs::path dir = resolve_output_root(config, options) / config_hash(config);
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");
  table.csv = dir / "decomposition.csv";
  write_text(table.csv, csv.str());
  return table;
}

TableResult run_rank_sweep(const ExperimentConfig& config, const std::vector<Index>& ranks,
                           const RunOptions& options) {
  if (!config.backbone.ffn.complement) fail("variant.complement", "rank sweep needs a complement variant");
  if (ranks.empty()) fail("ranks", "must not be empty");
  std::vector<ExperimentConfig> configs;
  for (Index r : ranks) {
    ExperimentConfig c = config;
    c.kind = ExperimentKind::Single;
    c.backbone.ffn.rank = r;
    validate(c);
    configs.push_back(std::move(c));
  }
  TableResult table;
  for (const auto& c : configs) {
    if (options.log) *options.log << "rank " << c.backbone.ffn.rank << "\n";
    table.rows.push_back(run_experiment(c, options));
  }
  std::ostringstream csv;
  csv << "rank,acc_mean,acc_std,params,n_seeds,config_hash\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& r = table.rows[i];
    csv << configs[i].backbone.ffn.rank << "," << fmt(r.accuracy_mean(), 8) << "," << fmt(r.accuracy_std(), 8) << ","
        << r.seeds.front().record.parameter_count << "," << r.seeds.size() << "," << r.config_hash << "\n";
  }
  const fs::path dir = resolve_output_root(config, options) / config_hash(config);
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");
  table.csv = dir / "rank_sweep.csv";
  write_text(table.csv, csv.str());
  return table;
}

namespace {

template <typename Scalar>
metrics::MechanismReport analyze_checkpoint(const ExperimentConfig& config, const Dataset& data,
                                            const fs::path& seed_dir) {
  const fs::path ck_path = seed_dir / "checkpoint.json";
  const json ck = read_json(ck_path);
  VisionTransformer<Scalar> model(config.backbone, 0);
  load_checkpoint(model, ck, ck_path);
  auto report = analyze_model(model, data.test, config.analysis_samples);
  report.host = host_label(config.backbone.ffn.host);
  write_text(seed_dir / "mechanism.json", to_json(report).dump(2) + "\n");
  write_text(seed_dir / "mechanism.csv", mechanism_csv(report));
  return report;
}

bool is_seed_dir(const fs::path& p) {
  const std::string name = p.filename().string();
  return fs::is_directory(p) && !name.empty() && std::all_of(name.begin(), name.end(), ::isdigit);
}

}  // namespace

std::vector<metrics::MechanismReport> analyze_run_dir(const fs::path& given) {
  fs::path run_dir = given.lexically_normal();
  if (run_dir.filename().empty()) run_dir = run_dir.parent_path();
  if (!fs::exists(run_dir)) throw MissingFileError(run_dir);
  std::vector<fs::path> seed_dirs;
  fs::path config_dir;
  if (fs::exists(run_dir / "checkpoint.json") || !fs::exists(run_dir / "config.json")) {
    seed_dirs.push_back(run_dir);
    config_dir = run_dir.parent_path();
  } else {
    config_dir = run_dir;
    for (const auto& e : fs::directory_iterator(run_dir))
      if (is_seed_dir(e.path())) seed_dirs.push_back(e.path());
    std::sort(seed_dirs.begin(), seed_dirs.end(), [](const fs::path& a, const fs::path& b) {
      return std::stoull(a.filename().string()) < std::stoull(b.filename().string());
    });
    if (seed_dirs.empty()) throw MissingFileError(run_dir / "<seed>" / "checkpoint.json");
  }
  for (const auto& d : seed_dirs)
    if (!fs::exists(d / "checkpoint.json")) throw MissingFileError(d / "checkpoint.json");

  const ExperimentConfig config = config_from_json(read_json(config_dir / "config.json"));
  const Dataset data = load_dataset(config);
  std::vector<metrics::MechanismReport> reports;
  for (const auto& d : seed_dirs) {
    reports.push_back(config.precision == Precision::F32 ? analyze_checkpoint<float>(config, data, d)
                                                         : analyze_checkpoint<double>(config, data, d));
  }
  return reports;
}

void print_summary(std::ostream& os, const std::vector<ExperimentResult>& results) {
  std::size_t width = 7;
  for (const auto& r : results) width = std::max(width, r.label.size());
  os << std::left << std::setw(static_cast<int>(width) + 2) << "Variant" << std::setw(18) << "Acc (%)"
     << std::setw(12) << "Params" << "Img/s\n";
  for (const auto& r : results) {
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(2) << 100 * r.accuracy_mean() << " +- " << 100 * r.accuracy_std();
    std::ostringstream ips;
    ips << std::fixed << std::setprecision(0) << r.images_per_second_mean();
    os << std::left << std::setw(static_cast<int>(width) + 2) << r.label << std::setw(18) << acc.str()
       << std::setw(12) << r.seeds.front().record.parameter_count << ips.str() << "\n";
  }
}

}  // namespace oqc
