#include "pcens/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pcens/ensemble.hpp"
#include "pcens/evaluate.hpp"
#include "pcens/kernels.hpp"
#include "pcens/models.hpp"
#include "pcens/pipeline.hpp"
#include "pcens/pointcloud.hpp"

namespace pcens::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// commands and config text

namespace {

constexpr Command kCommands[] = {Command::gen_data,       Command::simple_ensemble, Command::bagging,
                                 Command::weight_search,  Command::random_factors,  Command::head_ensemble,
                                 Command::frustum,        Command::timing};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    out.push_back(trim(s.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

std::string_view command_name(Command c) {
  switch (c) {
    case Command::gen_data: return "gen-data";
    case Command::simple_ensemble: return "simple-ensemble";
    case Command::bagging: return "bagging";
    case Command::weight_search: return "weight-search";
    case Command::random_factors: return "random-factors";
    case Command::head_ensemble: return "head-ensemble";
    case Command::frustum: return "frustum";
    case Command::timing: return "timing";
  }
  return "?";
}

Command parse_command(std::string_view name) {
  for (Command c : kCommands)
    if (command_name(c) == name) return c;
  throw ConfigError("unknown command '" + std::string(name) + "'");
}

std::span<const Command> all_commands() { return kCommands; }

Config Config::parse(std::istream& in) {
  Config c;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    if (!c.values.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(n) + ": duplicate key '" + key + "'");
  }
  return c;
}

Config Config::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse(in);
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse(in);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// schema

namespace {

constexpr std::string_view kDefaultPair = "pointnet_lite,hier_lite";

enum class Kind { u64, count, real, flag, choice, families, methods, reals, input_path, text };

struct KeySpec {
  std::string name;
  Kind kind;
  std::string fallback;  // default, in config syntax
  double lo = 0.0;       // count / real bounds (inclusive unless strict)
  double hi = 1e300;
  bool lo_strict = false;
  std::vector<std::string> choices;
};

using Schema = std::vector<KeySpec>;

KeySpec count_key(std::string name, std::size_t fallback, std::size_t lo = 1, double hi = 1e300) {
  return {std::move(name), Kind::count, std::to_string(fallback), static_cast<double>(lo), hi, false, {}};
}

KeySpec real_key(std::string name, std::string fallback, double lo, double hi, bool lo_strict = false) {
  return {std::move(name), Kind::real, std::move(fallback), lo, hi, lo_strict, {}};
}

std::string family_list_text() {
  std::vector<std::string> v;
  for (Family f : {Family::deepsets_lite, Family::pointnet_lite, Family::hier_lite}) v.emplace_back(family_name(f));
  return join(v);
}

void add_dataset_keys(Schema& s) {
  s.push_back({"dataset", Kind::input_path, "", 0, 0, false, {}});
  s.push_back(count_key("n_classes", 8, 2, kShapeKindCount));
  s.push_back(count_key("train_per_class", 100));
  s.push_back(count_key("test_per_class", 40));
  s.push_back(count_key("n_points", 256, 32));
  s.push_back(real_key("noise", "0.02", 0.0, 1.0));
}

void add_train_keys(Schema& s, std::size_t batch) {
  s.push_back(count_key("epochs", 40));
  s.push_back(count_key("batch_size", batch));
  s.push_back(real_key("lr", "0.01", 0.0, 10.0, true));
  s.push_back(real_key("momentum", "0.9", 0.0, 0.999999));
  s.push_back(real_key("lr_decay", "0.97", 0.0, 1.0, true));
}

void add_classifier_keys(Schema& s) {
  add_dataset_keys(s);
  add_train_keys(s, 16);
  s.push_back({"augment", Kind::flag, "true", 0, 0, false, {}});
  s.push_back(real_key("dropout", "0.3", 0.0, 0.95));
}

void add_family_key(Schema& s, std::string fallback) {
  s.push_back({"arch", Kind::choice, std::move(fallback), 0, 0, false, split_list(family_list_text())});
}

void add_scene_keys(Schema& s) {
  s.push_back({"scenes", Kind::input_path, "", 0, 0, false, {}});
  s.push_back(count_key("scene_classes", 3, 1, kShapeKindCount));
  s.push_back(count_key("train_scenes", 200));
  s.push_back(count_key("test_scenes", 60));
  s.push_back(count_key("object_points", 96));
  s.push_back(count_key("clutter_points", 64, 0));
  s.push_back(real_key("scene_noise", "0.02", 0.0, 1.0));
}

Schema schema_for(Command c) {
  Schema s{{"seed", Kind::u64, "0", 0, 0, false, {}}};
  if (c != Command::timing) s.push_back({"data_seed", Kind::u64, "0", 0, 0, false, {}});
  switch (c) {
    case Command::gen_data:
      s.push_back({"kind", Kind::choice, "classification", 0, 0, false, {"classification", "scenes"}});
      s.push_back({"file", Kind::text, "", 0, 0, false, {}});
      add_dataset_keys(s);
      s.erase(std::find_if(s.begin(), s.end(), [](const KeySpec& k) { return k.name == "dataset"; }));
      add_scene_keys(s);
      s.erase(std::find_if(s.begin(), s.end(), [](const KeySpec& k) { return k.name == "scenes"; }));
      break;
    case Command::simple_ensemble:
      add_classifier_keys(s);
      add_family_key(s, "pointnet_lite");
      s.push_back(count_key("n_instances", 10));
      s.push_back(count_key("k_min", 1));
      s.push_back({"k_max", Kind::count, "", 1, 1e300, false, {}});
      s.push_back({"methods", Kind::methods, "raw_mean,soft_vote,hard_vote", 0, 0, false, {}});
      s.push_back(count_key("subset_cap", 5000));
      s.push_back(count_key("subset_samples", 10));
      break;
    case Command::bagging:
      add_classifier_keys(s);
      add_family_key(s, "pointnet_lite");
      s.push_back(count_key("n_instances", 10));
      s.push_back({"fractions", Kind::reals, "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", 0.0, 1.0, true, {}});
      s.push_back({"with_replacement", Kind::flag, "true", 0, 0, false, {}});
      s.push_back({"simple", Kind::flag, "true", 0, 0, false, {}});
      break;
    case Command::weight_search:
      add_classifier_keys(s);
      s.push_back({"archs", Kind::families, std::string(kDefaultPair), 0, 0, false, {}});
      s.push_back(count_key("n_instances", 10));
      s.push_back(real_key("grid_step", "0.125", 0.0, 1.0, true));
      break;
    case Command::random_factors:
      add_classifier_keys(s);
      add_family_key(s, "pointnet_lite");
      s.push_back(count_key("n_instances", 5, 2));
      break;
    case Command::head_ensemble:
      add_classifier_keys(s);
      add_family_key(s, "hier_lite");
      s.push_back(count_key("n_encoders", 10));
      s.push_back(count_key("n_heads", 5));
      s.push_back(count_key("head_epochs", kDefaultHeadEpochs));
      break;
    case Command::frustum:
      add_scene_keys(s);
      add_train_keys(s, 8);
      s.push_back(count_key("n_instances", 3));
      s.push_back(real_key("iou_threshold", "0.5", 0.0, 1.0, true));
      s.push_back(real_key("clip_norm", "3", 0.0, 1e300));
      break;
    case Command::timing:
      s.push_back({"archs", Kind::families, family_list_text(), 0, 0, false, {}});
      s.push_back(count_key("n_classes", 8, 2, kShapeKindCount));
      s.push_back(count_key("n_points", 256, 32));
      s.push_back(count_key("batch_size", 4));
      s.push_back(count_key("repetitions", 10, 3));
      break;
  }
  return s;
}

[[noreturn]] void bad(const std::string& key, const std::string& what) { throw ConfigError(key + ": " + what); }

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) bad(key, "expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    bad(key, "integer out of range");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(key, "expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(x)) bad(key, "expected a number, got '" + v + "'");
  return x;
}

void check_range(const KeySpec& k, double x) {
  const bool lo_ok = k.lo_strict ? x > k.lo : x >= k.lo;
  if (!lo_ok || x > k.hi) {
    std::ostringstream os;
    os << "value " << format_real(x) << " outside " << (k.lo_strict ? "(" : "[") << format_real(k.lo) << ", "
       << (k.hi >= 1e300 ? std::string("inf") : format_real(k.hi)) << "]";
    bad(k.name, os.str());
  }
}

std::string canonical_value(const KeySpec& k, const std::string& raw) {
  switch (k.kind) {
    case Kind::u64: return std::to_string(parse_u64(k.name, raw));
    case Kind::count: {
      const auto v = parse_u64(k.name, raw);
      check_range(k, static_cast<double>(v));
      return std::to_string(v);
    }
    case Kind::real: {
      const double x = parse_real(k.name, raw);
      check_range(k, x);
      return format_real(x);
    }
    case Kind::flag:
      if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return "true";
      if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return "false";
      bad(k.name, "expected true or false, got '" + raw + "'");
    case Kind::choice:
      if (std::find(k.choices.begin(), k.choices.end(), raw) == k.choices.end())
        bad(k.name, "unknown value '" + raw + "' (expected one of " + join(k.choices) + ")");
      return raw;
    case Kind::families: {
      auto v = split_list(raw);
      for (const auto& f : v) try {
          parse_family(f);
        } catch (const std::exception&) {
          bad(k.name, "unknown architecture '" + f + "'");
        }
      auto sorted = v;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) bad(k.name, "repeated architecture");
      return join(v);
    }
    case Kind::methods: {
      auto v = split_list(raw);
      for (const auto& m : v) try {
          parse_method(m);
        } catch (const std::exception&) {
          bad(k.name, "unknown method '" + m + "'");
        }
      auto sorted = v;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) bad(k.name, "repeated method");
      return join(v);
    }
    case Kind::reals: {
      std::vector<std::string> out;
      for (const auto& item : split_list(raw)) {
        const double x = parse_real(k.name, item);
        check_range(k, x);
        out.push_back(format_real(x));
      }
      return join(out);
    }
    case Kind::input_path:
      if (!raw.empty() && !fs::is_regular_file(raw)) bad(k.name, "no such file '" + raw + "'");
      return raw;
    case Kind::text: return raw;
  }
  return raw;
}

}  // namespace

std::string ResolvedConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::logic_error("config key '" + key + "' not in schema");
  return it->second;
}
std::uint64_t ResolvedConfig::u64(const std::string& key) const { return std::stoull(str(key)); }
std::size_t ResolvedConfig::size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
double ResolvedConfig::real(const std::string& key) const { return std::stod(str(key)); }
bool ResolvedConfig::flag(const std::string& key) const { return str(key) == "true"; }
std::vector<std::string> ResolvedConfig::list(const std::string& key) const { return split_list(str(key)); }
std::vector<double> ResolvedConfig::reals(const std::string& key) const {
  std::vector<double> v;
  for (const auto& s : list(key)) v.push_back(std::stod(s));
  return v;
}

std::string ResolvedConfig::canonical_text() const {
  std::string s = "command=" + std::string(command_name(command_)) + "\n";
  for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
  return s;
}

namespace {

constexpr std::string_view kConstraintPrefix = "constraint.";

void check_cross_keys(const ResolvedConfig& c) {
  switch (c.command()) {
    case Command::simple_ensemble: {
      const auto n = c.size("n_instances");
      if (c.size("k_max") > n) bad("k_max", "exceeds n_instances (" + std::to_string(n) + ")");
      if (c.size("k_min") > c.size("k_max")) bad("k_min", "exceeds k_max");
      break;
    }
    case Command::weight_search: {
      const auto archs = c.list("archs");
      if (archs.size() < 2) bad("archs", "need at least two architectures");
      std::vector<WeightRange> ranges;
      for (const auto& a : archs) {
        const std::string key = std::string(kConstraintPrefix) + a;
        ranges.push_back(c.has(key) ? WeightRange::parse(c.str(key)) : WeightRange{});
      }
      std::vector<std::vector<double>> lattice;
      try {
        lattice = simplex_lattice(archs.size(), c.real("grid_step"), ranges);
      } catch (const std::invalid_argument& e) {
        bad("grid_step", e.what());
      }
      if (lattice.empty()) bad("constraint", "no weight vector on the grid satisfies the constraints");
      break;
    }
    case Command::frustum:
      if (!c.str("scenes").empty() && c.size("test_scenes") == 0) bad("test_scenes", "must be positive");
      break;
    default: break;
  }
}

}  // namespace

ResolvedConfig resolve(Command command, const Config& config, const RunOptions& options) {
  if (options.jobs < 1) throw ConfigError("--jobs must be at least 1");
  const Schema schema = schema_for(command);
  ResolvedConfig r;
  r.command_ = command;
  for (const auto& [key, raw] : config.values) {
    if (command == Command::weight_search && key.rfind(kConstraintPrefix, 0) == 0) {
      const std::string arch = key.substr(kConstraintPrefix.size());
      const auto archs = split_list(config.values.count("archs") ? config.values.at("archs") : std::string(kDefaultPair));
      if (std::find(archs.begin(), archs.end(), arch) == archs.end())
        bad(key, "constraint on an architecture not listed in archs");
      try {
        WeightRange::parse(raw);
        r.values_[key] = raw;
      } catch (const std::exception& e) {
        bad(key, e.what());
      }
      continue;
    }
    const auto it = std::find_if(schema.begin(), schema.end(), [&](const KeySpec& k) { return k.name == key; });
    if (it == schema.end()) bad(key, "unknown key for " + std::string(command_name(command)));
    r.values_[key] = canonical_value(*it, raw);
  }
  if (options.seed) r.values_["seed"] = std::to_string(*options.seed);
  for (const auto& k : schema)
    if (!r.values_.count(k.name) && !k.fallback.empty()) r.values_[k.name] = canonical_value(k, k.fallback);
  // k_max follows n_instances unless given
  if (command == Command::simple_ensemble && !r.values_.count("k_max")) r.values_["k_max"] = r.values_["n_instances"];
  for (const auto& k : schema)
    if (!r.values_.count(k.name)) r.values_[k.name] = "";
  check_cross_keys(r);
  return r;
}

// ---------------------------------------------------------------------------
// execution helpers

namespace {

class Writer {
 public:
  Writer(const ResolvedConfig& c, const RunOptions& o) : config_(c), options_(o) {}

  std::ofstream open(const std::string& name) {
    const fs::path p = options_.out_dir / name;
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    written_.push_back(p);
    return os;
  }

  void header(std::ostream& os, const std::string& seeds, const std::vector<std::string>& notes) const {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_.hash()));
    os << "# pcens " << kVersion << "\n"
       << "# command: " << command_name(config_.command()) << "\n"
       << "# config_hash: fnv1a64:" << hash << "\n"
       << "# seeds: " << seeds << "\n";
    for (const auto& n : notes) os << "# note: " << n << "\n";
  }

  void close(std::ofstream& os) const {
    os.close();
    if (!os) throw std::runtime_error("write failed under " + options_.out_dir.string());
  }

  std::vector<fs::path> written() const { return written_; }

 private:
  const ResolvedConfig& config_;
  const RunOptions& options_;
  std::vector<fs::path> written_;
};

std::string instance_seeds(std::uint64_t root, std::size_t n) {
  return "root " + std::to_string(root) + "; instance i uses root + i for data order, initialization and dropout (i = 0.." +
         std::to_string(n - 1) + ")";
}

struct Data {
  LabeledDataset dataset;
  DatasetSplit split;
};

Data load_data(const ResolvedConfig& c) {
  Data d;
  if (!c.str("dataset").empty()) {
    d.dataset = read_dataset(fs::path(c.str("dataset")));
  } else {
    DatasetSpec spec;
    spec.n_classes = c.size("n_classes");
    spec.train_per_class = c.size("train_per_class");
    spec.test_per_class = c.size("test_per_class");
    spec.n_points = c.size("n_points");
    spec.noise_sigma = c.real("noise");
    spec.seed = c.u64("data_seed");
    d.dataset = generate_dataset(spec);
  }
  d.split = holdout_split(d.dataset, c.size("test_per_class"));
  if (d.split.train.empty()) throw std::runtime_error("dataset leaves no training samples");
  return d;
}

TrainConfig train_config(const ResolvedConfig& c) {
  TrainConfig t;
  t.epochs = c.size("epochs");
  t.batch_size = c.size("batch_size");
  t.learning_rate = c.real("lr");
  t.momentum = c.real("momentum");
  t.lr_decay = c.real("lr_decay");
  t.augment = c.flag("augment");
  return t;
}

ModelArch model_arch(const ResolvedConfig& c, Family f, std::size_t n_classes) {
  ModelArch a = ModelArch::defaults(f, n_classes);
  a.dropout_rate = c.real("dropout");
  return a;
}

std::vector<TrainedModel> train_group(const ModelArch& arch, const Data& d, const std::vector<SeedBundle>& seeds,
                                      const TrainConfig& cfg) {
  std::vector<kernels::TrainJob> jobs;
  for (const auto& s : seeds) jobs.push_back({d.split.train, s});
  return kernels::omp::train_many(arch, d.dataset, jobs, cfg);
}

std::vector<SeedBundle> simple_seeds(std::uint64_t root, std::size_t n) {
  std::vector<SeedBundle> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(SeedBundle::all(root + i));
  return v;
}

std::vector<ScoreMatrix> test_scores(const std::vector<TrainedModel>& models, const Data& d, const std::string& tag) {
  std::vector<ScoreMatrix> out;
  for (std::size_t i = 0; i < models.size(); ++i)
    out.push_back(predict_scores(models[i], d.dataset, d.split.test, tag + "#" + std::to_string(i)));
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.std += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(m.std / static_cast<double>(v.size()));
  return m;
}

std::string r(double v) { return format_real(v); }

const char* kAverageNote = "accuracies are averages over instances or subsets, never maxima";

// ---------------------------------------------------------------------------
// commands

void cmd_gen_data(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  if (c.str("kind") == "classification") {
    DatasetSpec spec;
    spec.n_classes = c.size("n_classes");
    spec.train_per_class = c.size("train_per_class");
    spec.test_per_class = c.size("test_per_class");
    spec.n_points = c.size("n_points");
    spec.noise_sigma = c.real("noise");
    spec.seed = c.u64("data_seed");
    const auto ds = generate_dataset(spec);
    auto os = w.open(c.str("file").empty() ? "dataset.txt" : c.str("file"));
    write_dataset(ds, os);
    w.close(os);
    std::vector<std::size_t> counts(ds.n_classes(), 0);
    for (const auto& s : ds.samples) ++counts[static_cast<std::size_t>(s.label)];
    log << "class,count\n";
    for (std::size_t k = 0; k < counts.size(); ++k) log << ds.class_names[k] << ',' << counts[k] << '\n';
    return;
  }
  SceneSpec spec;
  spec.n_classes = c.size("scene_classes");
  spec.n_scenes = c.size("train_scenes") + c.size("test_scenes");
  spec.n_object_points = c.size("object_points");
  spec.n_clutter_points = c.size("clutter_points");
  spec.noise_sigma = c.real("scene_noise");
  spec.seed = c.u64("data_seed");
  const auto set = generate_scenes(spec);
  auto os = w.open(c.str("file").empty() ? "scenes.txt" : c.str("file"));
  write_scenes(set, os);
  w.close(os);
  std::vector<std::size_t> counts(set.n_classes(), 0);
  for (const auto& s : set.scenes) ++counts[static_cast<std::size_t>(s.label)];
  log << "class,count\n";
  for (std::size_t k = 0; k < counts.size(); ++k) log << set.class_names[k] << ',' << counts[k] << '\n';
}

void cmd_simple_ensemble(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  const Data d = load_data(c);
  const auto family = parse_family(c.str("arch"));
  const auto n = c.size("n_instances");
  const auto seed = c.u64("seed");
  const auto models = train_group(model_arch(c, family, d.dataset.n_classes()), d, simple_seeds(seed, n), train_config(c));
  const auto scores = test_scores(models, d, c.str("arch"));

  SubsetPolicy policy;
  policy.cap = c.size("subset_cap");
  policy.n_random = c.size("subset_samples");
  policy.seed = seed;

  auto os = w.open("simple_ensemble.csv");
  w.header(os, instance_seeds(seed, n),
           {kAverageNote, "subsets are enumerated exhaustively when C(n,K) <= subset_cap, else sampled with the root seed",
            "expected trend: the mean rises and the standard deviation falls as K grows"});
  os << "K,method,n_subsets,exhaustive,instance_mean,instance_std,class_mean,class_std\n";
  for (std::size_t K = c.size("k_min"); K <= c.size("k_max"); ++K)
    for (const auto& m : c.list("methods")) {
      const auto s = evaluate_k_subsets(scores, K, parse_method(m), policy);
      os << K << ',' << m << ',' << s.n_subsets << ',' << (s.exhaustive ? 1 : 0) << ',' << r(s.mean_instance_accuracy)
         << ',' << r(s.std_instance_accuracy) << ',' << r(s.mean_class_accuracy) << ',' << r(s.std_class_accuracy)
         << '\n';
      if (K == c.size("k_max"))
        log << "K=" << K << ' ' << m << " instance " << r(s.mean_instance_accuracy) << '\n';
    }
  w.close(os);

  const auto single = score_metrics(scores.front());
  const auto ensemble = score_metrics(aggregate(scores, EnsembleMethod::raw_mean));
  auto pc = w.open("per_class.csv");
  w.header(pc, instance_seeds(seed, n), {"single is instance 0; ensemble is raw_mean over all instances"});
  write_per_class_csv(pc, d.dataset.class_names, single, ensemble);
  w.close(pc);
}

void cmd_bagging(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  const Data d = load_data(c);
  BaggingConfig b;
  b.fractions = c.reals("fractions");
  b.n_instances = c.size("n_instances");
  b.seed_root = c.u64("seed");
  b.with_replacement = c.flag("with_replacement");
  b.simple = c.flag("simple");
  const auto rows = run_bagging_experiment(d.dataset, d.split, model_arch(c, parse_family(c.str("arch")), d.dataset.n_classes()),
                                           train_config(c), b);
  auto os = w.open("bagging.csv");
  w.header(os, instance_seeds(b.seed_root, b.n_instances) + "; split seeds derive from root + i",
           {kAverageNote, "ensembles use raw_mean on the test split",
            "with_replacement and simple rows do not depend on the fraction and repeat for every fraction",
            "expected trend: the largest gain at the smallest fraction"});
  write_bagging_csv(os, rows);
  w.close(os);
  log << rows.size() << " bagging rows\n";
}

void cmd_weight_search(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  const Data d = load_data(c);
  const auto archs = c.list("archs");
  const auto n = c.size("n_instances");
  const auto seed = c.u64("seed");
  std::vector<std::vector<ScoreMatrix>> standardized, raw;
  std::vector<WeightRange> ranges;
  for (const auto& a : archs) {
    const auto models = train_group(model_arch(c, parse_family(a), d.dataset.n_classes()), d, simple_seeds(seed, n),
                                    train_config(c));
    std::vector<ScoreMatrix> st, te;
    for (std::size_t i = 0; i < n; ++i) {
      const auto train_scores = predict_scores(models[i], d.dataset, d.split.train, a);
      te.push_back(predict_scores(models[i], d.dataset, d.split.test, a + "#" + std::to_string(i)));
      st.push_back(standardize(te.back(), train_scores));
    }
    standardized.push_back(std::move(st));
    raw.push_back(std::move(te));
    const std::string key = "constraint." + a;
    ranges.push_back(c.has(key) ? WeightRange::parse(c.str(key)) : WeightRange{});
  }

  auto os = w.open("weight_search.csv");
  std::vector<std::string> notes{kAverageNote,
                                 "scores are divided by the pooled std of each instance's training-split scores",
                                 "weights are searched and scored on the test split",
                                 "sub_ensemble mixes per-architecture raw_mean ensembles; instance_mean mixes the i-th "
                                 "instances and averages over i",
                                 "the raw_mean row averages all standardized instances with equal weight"};
  w.header(os, instance_seeds(seed, n) + "; the same seeds for every architecture", notes);
  for (std::size_t a = 0; a < archs.size(); ++a)
    if (c.has("constraint." + archs[a])) os << "# constraint: " << archs[a] << " in " << ranges[a].to_string() << "\n";
  os << "unit,kind";
  for (const auto& a : archs) os << ",w_" << a;
  os << ",instance_accuracy,mean_class_accuracy\n";
  for (MixUnit unit : {MixUnit::sub_ensemble, MixUnit::instance_mean}) {
    const auto cands = weight_grid_search(standardized, c.real("grid_step"), ranges, unit);
    for (const auto& cand : cands) {
      os << mix_unit_name(unit) << ",grid";
      for (double x : cand.weights) os << ',' << r(x);
      os << ',' << r(cand.instance_accuracy) << ',' << r(cand.mean_class_accuracy) << '\n';
    }
    log << mix_unit_name(unit) << " best instance accuracy " << r(cands.front().instance_accuracy) << '\n';
  }
  std::vector<ScoreMatrix> all;
  for (const auto& v : standardized) all.insert(all.end(), v.begin(), v.end());
  const auto uniform = score_metrics(aggregate(all, EnsembleMethod::raw_mean));
  os << "all,raw_mean";
  for (std::size_t a = 0; a < archs.size(); ++a) os << ',' << r(1.0 / static_cast<double>(archs.size()));
  os << ',' << r(uniform.instance_accuracy) << ',' << r(uniform.mean_class_accuracy) << '\n';
  w.close(os);

  std::vector<MetricsReport> reports;
  for (const auto& v : raw) reports.push_back(score_metrics(aggregate(v, EnsembleMethod::raw_mean)));
  auto rk = w.open("rank.csv");
  w.header(rk, instance_seeds(seed, n), {"each architecture is scored by its raw_mean ensemble; ties share the point"});
  write_rank_csv(rk, archs, best_per_class_rank(reports));
  w.close(rk);
}

void cmd_random_factors(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  const Data d = load_data(c);
  const auto arch = model_arch(c, parse_family(c.str("arch")), d.dataset.n_classes());
  const auto n = c.size("n_instances");
  const auto seed = c.u64("seed");
  auto os = w.open("random_factors.csv");
  w.header(os, "root " + std::to_string(seed) + "; a random factor uses root + i for instance i, a const factor the fixed "
                   "constant seed",
           {kAverageNote, "max_score_diff is the largest absolute score difference between any instance and instance 0",
            "with every factor const the instances are bit-identical and the gain is zero"});
  os << "data_order,init,dropout,instance_mean,instance_std,instance_ensemble,instance_increase,class_mean,"
        "class_ensemble,class_increase,max_score_diff,identical_models\n";
  for (int mask = 0; mask < 8; ++mask) {
    const bool vd = mask & 4, vi = mask & 2, vo = mask & 1;
    std::vector<SeedBundle> seeds;
    for (std::size_t i = 0; i < n; ++i) {
      SeedBundle b;
      if (vd) b.data_order = seed + i;
      if (vi) b.init = seed + i;
      if (vo) b.dropout = seed + i;
      seeds.push_back(b);
    }
    const auto models = train_group(arch, d, seeds, train_config(c));
    const auto scores = test_scores(models, d, c.str("arch"));
    std::vector<double> inst, cls;
    for (const auto& s : scores) {
      const auto m = score_metrics(s);
      inst.push_back(m.instance_accuracy);
      cls.push_back(m.mean_class_accuracy);
    }
    const auto ens = score_metrics(aggregate(scores, EnsembleMethod::raw_mean));
    double diff = 0.0;
    bool identical = true;
    for (std::size_t i = 1; i < n; ++i) {
      identical = identical && models[i].params == models[0].params;
      for (std::size_t k = 0; k < scores[i].scores.data().size(); ++k)
        diff = std::max(diff, std::abs(scores[i].scores.data()[k] - scores[0].scores.data()[k]));
    }
    const auto mi = mean_std(inst), mc = mean_std(cls);
    auto name = [](bool v) { return v ? "random" : "const"; };
    os << name(vd) << ',' << name(vi) << ',' << name(vo) << ',' << r(mi.mean) << ',' << r(mi.std) << ','
       << r(ens.instance_accuracy) << ',' << r(ens.instance_accuracy - mi.mean) << ',' << r(mc.mean) << ','
       << r(ens.mean_class_accuracy) << ',' << r(ens.mean_class_accuracy - mc.mean) << ',' << r(diff) << ','
       << (identical ? 1 : 0) << '\n';
    log << name(vd) << '/' << name(vi) << '/' << name(vo) << " gain " << r(ens.instance_accuracy - mi.mean) << '\n';
  }
  w.close(os);
}

void cmd_head_ensemble(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  const Data d = load_data(c);
  const auto arch = model_arch(c, parse_family(c.str("arch")), d.dataset.n_classes());
  const auto n_enc = c.size("n_encoders"), n_heads = c.size("n_heads");
  const auto seed = c.u64("seed");
  const auto cfg = train_config(c);
  const auto encoders = train_group(arch, d, simple_seeds(seed, n_enc), cfg);

  std::vector<std::vector<double>> cols(6);
  auto os = w.open("head_ensemble.csv");
  w.header(os, instance_seeds(seed, n_enc) + "; head j of encoder i uses derive_seed(root + i, j + 1)",
           {kAverageNote, "heads are retrained on cached encoder features; encoder parameters are left untouched",
            "increase is the head ensemble (raw_mean) minus the mean single head"});
  os << "encoder,instance_mean,instance_ensemble,class_mean,class_ensemble,instance_increase,class_increase\n";
  for (std::size_t i = 0; i < n_enc; ++i) {
    std::vector<TrainedModel> heads(n_heads);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t j = 0; j < n_heads; ++j)
      heads[j] = retrain_classifier(encoders[i], d.dataset, d.split.train, derive_seed(seed + i, j + 1),
                                    c.size("head_epochs"), cfg);
    for (const auto& h : heads) {
      const auto a = h.encoder_params(), b = encoders[i].encoder_params();
      if (!std::equal(a.begin(), a.end(), b.begin(), b.end()))
        throw std::runtime_error("head retraining modified the encoder");
    }
    const auto scores = test_scores(heads, d, c.str("arch") + "/e" + std::to_string(i));
    std::vector<double> inst, cls;
    for (const auto& s : scores) {
      const auto m = score_metrics(s);
      inst.push_back(m.instance_accuracy);
      cls.push_back(m.mean_class_accuracy);
    }
    const auto ens = score_metrics(aggregate(scores, EnsembleMethod::raw_mean));
    const double im = mean_std(inst).mean, cm = mean_std(cls).mean;
    const double row[6] = {im, ens.instance_accuracy, cm, ens.mean_class_accuracy, ens.instance_accuracy - im,
                           ens.mean_class_accuracy - cm};
    os << i;
    for (int k = 0; k < 6; ++k) {
      os << ',' << r(row[k]);
      cols[k].push_back(row[k]);
    }
    os << '\n';
  }
  w.close(os);

  auto sm = w.open("head_ensemble_summary.csv");
  w.header(sm, instance_seeds(seed, n_enc), {"mean and population standard deviation over encoders"});
  sm << "parameter,mean,std\n";
  const char* names[6] = {"instance_accuracy_mean", "instance_accuracy_ensemble", "class_accuracy_mean",
                          "class_accuracy_ensemble", "instance_accuracy_increase", "class_accuracy_increase"};
  for (int k = 0; k < 6; ++k) {
    const auto m = mean_std(cols[k]);
    sm << names[k] << ',' << r(m.mean) << ',' << r(m.std) << '\n';
  }
  w.close(sm);
  log << "instance increase " << r(mean_std(cols[4]).mean) << '\n';
}

void cmd_frustum(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  SceneSet set;
  std::vector<std::size_t> train, test;
  const std::size_t n_test = c.size("test_scenes");
  if (!c.str("scenes").empty()) {
    set = read_scenes(fs::path(c.str("scenes")));
    if (set.size() <= n_test) throw std::runtime_error("scene file has no scenes left for training");
  } else {
    SceneSpec spec;
    spec.n_classes = c.size("scene_classes");
    spec.n_scenes = c.size("train_scenes") + n_test;
    spec.n_object_points = c.size("object_points");
    spec.n_clutter_points = c.size("clutter_points");
    spec.noise_sigma = c.real("scene_noise");
    spec.seed = c.u64("data_seed");
    set = generate_scenes(spec);
  }
  for (std::size_t i = 0; i < set.size(); ++i) (i + n_test < set.size() ? train : test).push_back(i);

  PipelineTrainConfig cfg;
  cfg.epochs = c.size("epochs");
  cfg.batch_size = c.size("batch_size");
  cfg.learning_rate = c.real("lr");
  cfg.momentum = c.real("momentum");
  cfg.lr_decay = c.real("lr_decay");
  cfg.clip_norm = c.real("clip_norm");
  const auto n = c.size("n_instances");
  const auto seed = c.u64("seed");
  const auto arch = PipelineArch::defaults(set.n_classes());
  std::vector<PipelineInstance> instances(n);
  std::vector<std::string> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      instances[i] = train_pipeline(arch, set, train, seed + i, cfg);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw TrainingError(e);

  const double threshold = c.real("iou_threshold");
  const PipelineMode modes[] = {PipelineMode::none, PipelineMode::last, PipelineMode::all};
  std::vector<DetectionRow> rows[2];
  auto os = w.open("frustum.csv");
  w.header(os, "root " + std::to_string(seed) + "; pipeline instance i uses root + i",
           {"none is instance 0 alone; ensemble_last takes segmentation and centering from instance 0",
            "ensemble_all averages point probabilities before masking, translations before centering, and box heads",
            "ap is the fraction of test scenes whose single box reaches iou_threshold",
            "expected trend: ensemble_all above ensemble_last above none"});
  os << "mode,iou_mode,mean_iou,ap,n_scenes\n";
  for (PipelineMode m : modes) {
    std::vector<Box3D> pred, gt;
    for (std::size_t i : test) {
      pred.push_back(predict_box(instances, set.scenes[i], m));
      gt.push_back(set.scenes[i].gt_box);
    }
    for (int k = 0; k < 2; ++k) {
      const IouMode im = k == 0 ? IouMode::ground : IouMode::full3d;
      double mean = 0.0;
      for (std::size_t s = 0; s < pred.size(); ++s) {
        const double v = iou(pred[s], gt[s], im);
        mean += v / static_cast<double>(pred.size());
        rows[k].push_back({test[s], std::string(pipeline_mode_name(m)), v, v >= threshold});
      }
      const double ap = average_precision(pred, gt, threshold, im);
      os << pipeline_mode_name(m) << ',' << iou_mode_name(im) << ',' << r(mean) << ',' << r(ap) << ',' << pred.size()
         << '\n';
      log << pipeline_mode_name(m) << ' ' << iou_mode_name(im) << " mean IoU " << r(mean) << " AP " << r(ap) << '\n';
    }
  }
  w.close(os);
  for (int k = 0; k < 2; ++k) {
    auto det = w.open(k == 0 ? "detections_ground.csv" : "detections_full3d.csv");
    w.header(det, "root " + std::to_string(seed), {"correct means iou >= iou_threshold"});
    write_detections_csv(det, rows[k]);
    w.close(det);
  }
}

void cmd_timing(const ResolvedConfig& c, const RunOptions&, Writer& w, std::ostream& log) {
  const auto seed = c.u64("seed");
  const auto batch_size = c.size("batch_size"), reps = c.size("repetitions");
  Rng rng(derive_seed(seed, 1));
  std::vector<PointCloud> batch;
  for (std::size_t i = 0; i < batch_size; ++i)
    batch.push_back(generate_shape(shape_kind_from_index(i % kShapeKindCount), c.size("n_points"), 0.02, rng));
  auto os = w.open("timing.csv");
  w.header(os, "root " + std::to_string(seed) + " for initialization and the input batch",
           {"times are wall clock per mini-batch on this machine and differ between runs",
            "one warm-up run is discarded before the timed repetitions",
            "untrained weights; inference cost does not depend on their values"});
  os << "architecture,param_count,encoder_param_count,head_param_count,batch_size,repetitions,mean_ms,min_ms,max_ms\n";
  for (const auto& a : c.list("archs")) {
    const auto arch = ModelArch::defaults(parse_family(a), c.size("n_classes"));
    const auto model = init_model(arch, SeedBundle::all(seed));
    const auto t = time_inference(model, batch, reps);
    os << a << ',' << arch.param_count() << ',' << arch.encoder_param_count() << ',' << arch.rho_param_count() << ','
       << t.batch_size << ',' << t.repetitions << ',' << r(t.mean_ms) << ',' << r(t.min_ms) << ',' << r(t.max_ms)
       << '\n';
    log << a << " params " << arch.param_count() << " mean " << r(t.mean_ms) << " ms\n";
  }
  w.close(os);
}

}  // namespace

std::vector<fs::path> execute(const ResolvedConfig& config, const RunOptions& options, std::ostream& log) {
  fs::create_directories(options.out_dir);
  omp_set_num_threads(static_cast<int>(options.jobs));
  Writer w(config, options);
  using Fn = void (*)(const ResolvedConfig&, const RunOptions&, Writer&, std::ostream&);
  Fn fn = nullptr;
  switch (config.command()) {
    case Command::gen_data: fn = cmd_gen_data; break;
    case Command::simple_ensemble: fn = cmd_simple_ensemble; break;
    case Command::bagging: fn = cmd_bagging; break;
    case Command::weight_search: fn = cmd_weight_search; break;
    case Command::random_factors: fn = cmd_random_factors; break;
    case Command::head_ensemble: fn = cmd_head_ensemble; break;
    case Command::frustum: fn = cmd_frustum; break;
    case Command::timing: fn = cmd_timing; break;
  }
  fn(config, options, w, log);
  for (const auto& p : w.written()) log << "wrote " << p.string() << '\n';
  return w.written();
}

int run_main(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ensembles of point-cloud classifiers and a toy frustum detector", "pcens"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  struct Opts {
    std::string config, out = ".";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
  };
  std::vector<Opts> opts(all_commands().size());
  std::vector<CLI::App*> subs;
  std::vector<CLI::Option*> seed_opts;
  for (std::size_t i = 0; i < all_commands().size(); ++i) {
    auto* sub = app.add_subcommand(std::string(command_name(all_commands()[i])));
    sub->add_option("--config", opts[i].config, "key = value file")->check(CLI::ExistingFile);
    sub->add_option("--out", opts[i].out, "output directory");
    seed_opts.push_back(sub->add_option("--seed", opts[i].seed, "root seed, overrides the config"));
    sub->add_option("--jobs", opts[i].jobs, "worker threads")->check(CLI::PositiveNumber);
    subs.push_back(sub);
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ExitCode::config_error);
  }

  std::size_t which = 0;
  while (!subs[which]->parsed()) ++which;
  const Command cmd = all_commands()[which];
  RunOptions ro;
  ro.out_dir = opts[which].out;
  ro.jobs = opts[which].jobs;
  if (seed_opts[which]->count() > 0) ro.seed = opts[which].seed;

  ResolvedConfig resolved;
  try {
    const Config cfg = opts[which].config.empty() ? Config{} : Config::load(opts[which].config);
    resolved = resolve(cmd, cfg, ro);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config_error);
  }
  try {
    execute(resolved, ro, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::runtime_error);
  }
  return static_cast<int>(ExitCode::ok);
}

}  // namespace pcens::cli
