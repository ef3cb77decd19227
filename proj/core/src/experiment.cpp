#include "advenc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "advenc/attack.hpp"
#include "advenc/data.hpp"
#include "advenc/digest.hpp"
#include "advenc/error.hpp"

#ifndef ADVENC_VERSION
#define ADVENC_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace advenc {
namespace {

constexpr const char* kManifestFormat = "advenc-run-v1";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kMetricsFile = "metrics.csv";

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "schema_version", "attack",       "setting",        "encoder_id",      "surrogate",
      "downstream",     "mode",         "seed",           "epsilon",         "patch_fraction",
      "tau",            "defense_kind", "defense_param",  "asr_denominator", "clean_accuracy",
      "malicious_accuracy", "asr",      "flip_rate",      "random_noise_asr", "probe_epochs",
      "probe_lr",       "k_truncated",  "top1",           "top5",            "top10",
      "top20",          "top50",        "top100"};
  return cols;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kParseError, "bad number '" + s + "' in metrics csv");
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, std::string_view text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorCode::kIo, "cannot write " + p.string());
}

std::string utc_timestamp(std::chrono::system_clock::time_point t, const char* fmt) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void add_or_replace(std::vector<ManifestOutput>& outputs, ManifestOutput o) {
  for (auto& e : outputs) {
    if (e.path == o.path) {
      e = std::move(o);
      return;
    }
  }
  outputs.push_back(std::move(o));
}

void register_outputs(std::vector<ManifestOutput>& outputs, const fs::path& root, const std::string& relative) {
  const fs::path target = root / relative;
  std::vector<fs::path> files;
  if (fs::is_directory(target)) {
    for (const auto& e : fs::recursive_directory_iterator(target)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(target);
  }
  for (const auto& f : files) add_or_replace(outputs, {fs::relative(f, root).generic_string(), sha256_file(f)});
}

}  // namespace

std::string_view tool_version() { return ADVENC_VERSION; }

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const MetricRow& row : rows) {
    const EvalReport& r = row.report;
    std::vector<std::string> f = {std::to_string(kMetricsSchemaVersion),
                                  row.attack,
                                  r.setting,
                                  r.encoder_id,
                                  r.surrogate_name,
                                  r.downstream_name,
                                  std::string(to_string(r.mode)),
                                  std::to_string(r.seed),
                                  num(r.epsilon),
                                  num(r.patch_fraction),
                                  num(r.tau),
                                  r.defense_kind,
                                  num(r.defense_param),
                                  r.asr_over_all_samples ? "all_samples" : "clean_correct",
                                  num(r.clean_accuracy),
                                  num(r.malicious_accuracy),
                                  num(r.attack_success_rate),
                                  num(r.flip_rate),
                                  num(r.random_noise_asr),
                                  std::to_string(r.probe_epochs),
                                  num(r.probe_lr),
                                  r.k_truncated ? "1" : "0"};
    for (std::size_t k : kRetrievalKs) {
      const auto it = r.map_table.find(k);
      f.push_back(it == r.map_table.end() ? "" : num(it->second));
    }
    for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << csv_field(f[i]);
    out << '\n';
  }
  return out.str();
}

std::vector<MetricRow> parse_metrics_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != csv_columns()) {
    fail(ErrorCode::kParseError, "metrics csv header does not match schema version " +
                                     std::to_string(kMetricsSchemaVersion));
  }
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != csv_columns().size()) fail(ErrorCode::kParseError, "metrics csv row has wrong column count");
    if (f[0] != std::to_string(kMetricsSchemaVersion)) fail(ErrorCode::kParseError, "unsupported schema " + f[0]);
    MetricRow row;
    row.attack = f[1];
    EvalReport& r = row.report;
    r.setting = f[2];
    r.encoder_id = f[3];
    r.surrogate_name = f[4];
    r.downstream_name = f[5];
    r.mode = parse_attack_mode(f[6]);
    r.seed = static_cast<std::int64_t>(to_double(f[7]));
    r.epsilon = to_double(f[8]);
    r.patch_fraction = to_double(f[9]);
    r.tau = to_double(f[10]);
    r.defense_kind = f[11];
    r.defense_param = to_double(f[12]);
    r.asr_over_all_samples = f[13] == "all_samples";
    r.clean_accuracy = to_double(f[14]);
    r.malicious_accuracy = to_double(f[15]);
    r.attack_success_rate = to_double(f[16]);
    r.flip_rate = to_double(f[17]);
    r.random_noise_asr = to_double(f[18]);
    r.probe_epochs = static_cast<std::size_t>(to_double(f[19]));
    r.probe_lr = to_double(f[20]);
    r.k_truncated = f[21] == "1";
    for (std::size_t i = 0; i < std::size(kRetrievalKs); ++i) {
      if (!f[22 + i].empty()) r.map_table[kRetrievalKs[i]] = to_double(f[22 + i]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const RunManifest& m) {
  json j;
  j["format"] = kManifestFormat;
  j["run_id"] = m.run_id;
  j["tool_version"] = m.tool_version;
  j["config"] = m.config;
  j["started_at"] = m.started_at;
  j["duration_seconds"] = m.duration_seconds;
  j["inputs"] = json::array();
  for (const auto& i : m.inputs) {
    j["inputs"].push_back({{"name", i.name}, {"kind", i.kind}, {"reference", i.reference}, {"sha256", i.sha256}});
  }
  j["outputs"] = json::array();
  for (const auto& o : m.outputs) j["outputs"].push_back({{"path", o.path}, {"sha256", o.sha256}});
  return j;
}

RunManifest manifest_from_json(const json& j) {
  try {
    if (j.at("format") != kManifestFormat) fail(ErrorCode::kCorruptManifest, "unknown manifest format");
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config");
    m.started_at = j.at("started_at").get<std::string>();
    m.duration_seconds = j.at("duration_seconds").get<double>();
    for (const auto& i : j.at("inputs")) {
      m.inputs.push_back({i.at("name"), i.at("kind"), i.at("reference"), i.at("sha256")});
    }
    for (const auto& o : j.at("outputs")) m.outputs.push_back({o.at("path"), o.at("sha256")});
    return m;
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptManifest, std::string("manifest: ") + e.what());
  }
}

RunManifest read_manifest(const fs::path& run_dir) {
  const fs::path file = run_dir / kManifestFile;
  if (!fs::exists(file)) fail(ErrorCode::kCorruptManifest, "no manifest in " + run_dir.string());
  json j;
  try {
    j = json::parse(read_text(file));
  } catch (const json::exception& e) {
    fail(ErrorCode::kCorruptManifest, std::string("manifest: ") + e.what());
  }
  RunManifest m = manifest_from_json(j);
  for (const auto& o : m.outputs) {
    const fs::path p = run_dir / o.path;
    if (!fs::exists(p)) fail(ErrorCode::kCorruptManifest, "manifest lists missing file " + o.path);
    if (sha256_file(p) != o.sha256) fail(ErrorCode::kCorruptManifest, "digest mismatch for " + o.path);
  }
  return m;
}

void write_manifest(const RunManifest& manifest, const fs::path& run_dir) {
  write_file(run_dir / kManifestFile, to_json(manifest).dump(2) + "\n");
}

RunWriter::RunWriter(fs::path dir) : dir_(std::move(dir)), start_seconds_(now_seconds()) {
  if (fs::exists(dir_) && (!fs::is_directory(dir_) || !fs::is_empty(dir_))) {
    fail(ErrorCode::kOutputNotEmpty, "output directory " + dir_.string() + " is not empty");
  }
  fs::create_directories(dir_);
  started_at_ = utc_timestamp(std::chrono::system_clock::now(), "%Y-%m-%dT%H:%M:%SZ");
}

void RunWriter::write_text(const std::string& relative, std::string_view text) {
  write_file(dir_ / relative, text);
  record(relative);
}

void RunWriter::record(const std::string& relative) { register_outputs(outputs_, dir_, relative); }

void RunWriter::add_input(ManifestInput input) {
  for (const auto& i : inputs_) {
    if (i.kind == input.kind && i.name == input.name) return;
  }
  inputs_.push_back(std::move(input));
}

RunManifest RunWriter::finish(json config, std::string run_id) {
  RunManifest m;
  m.run_id = std::move(run_id);
  m.config = std::move(config);
  m.inputs = inputs_;
  m.outputs = outputs_;
  m.tool_version = std::string(tool_version());
  m.started_at = started_at_;
  m.duration_seconds = now_seconds() - start_seconds_;
  write_manifest(m, dir_);
  return m;
}

std::string dataset_digest(const Dataset& data) {
  std::string blob;
  blob.reserve(data.images.size() * sizeof(double) + data.labels.size() * sizeof(int) + 64);
  blob += to_string(data.image_shape()) + "|" + std::to_string(data.class_count) + "|";
  blob.append(reinterpret_cast<const char*>(data.images.data()), data.images.size() * sizeof(double));
  blob.append(reinterpret_cast<const char*>(data.labels.data()), data.labels.size() * sizeof(int));
  return sha256_hex(blob);
}

namespace {

std::string make_run_id() {
  std::random_device rd;
  char suffix[9];
  std::snprintf(suffix, sizeof suffix, "%08x", rd());
  return "run-" + utc_timestamp(std::chrono::system_clock::now(), "%Y%m%dT%H%M%SZ") + "-" + suffix;
}

const json& section(const json& doc, const char* key) {
  static const json empty_object = json::object();
  const auto it = doc.find(key);
  return it == doc.end() ? empty_object : *it;
}

template <typename T>
T value_or(const json& obj, const char* key, T fallback) {
  const auto it = obj.find(key);
  return it == obj.end() ? fallback : it->template get<T>();
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::kUnresolvedReference, what);
}

std::string config_value_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) return num(v.get<double>());
  fail(ErrorCode::kParseError, "config values must be scalars");
}

struct PlanView {
  const Plan& plan;
  ImageShape shape;
  std::int64_t seed;
  ProbeOptions probe;

  explicit PlanView(const Plan& p) : plan(p) {
    const json& d = p.document;
    shape = parse_image_shape(value_or<std::string>(d, "image_shape", to_string(ImageShape{})));
    seed = value_or<std::int64_t>(d, "seed", 100);
    const json& pr = section(d, "probe");
    probe.epochs = value_or<std::size_t>(pr, "epochs", probe.epochs);
    probe.learning_rate = value_or<double>(pr, "lr", probe.learning_rate);
    probe.batch_size = value_or<std::size_t>(pr, "batch_size", probe.batch_size);
    probe.seed = seed;
  }

  std::string dataset_reference(const std::string& name) const {
    const json& ds = section(plan.document, "datasets");
    const auto it = ds.find(name);
    require(it != ds.end(), "unknown dataset '" + name + "'");
    const std::string ref = it->get<std::string>();
    if (ref.rfind("synthetic:", 0) == 0) return ref;
    const fs::path local = plan.base_dir / ref;
    if (fs::path(ref).is_relative() && fs::exists(local)) return local.string();
    return ref;
  }

  fs::path encoder_path(const json& entry) const {
    const fs::path p = entry.at("path").get<std::string>();
    return p.is_relative() ? plan.base_dir / p : p;
  }

  AttackConfig attack_config(const json& entry) const {
    std::string text = "image_shape = " + to_string(shape) + "\nseed = " + std::to_string(seed) + "\n";
    if (entry.contains("config_file")) {
      fs::path f = entry.at("config_file").get<std::string>();
      if (f.is_relative()) f = plan.base_dir / f;
      require(fs::exists(f), "config file " + f.string() + " does not exist");
      text += read_text(f) + "\n";
    }
    for (const auto& [k, v] : section(entry, "config").items()) text += k + " = " + config_value_text(v) + "\n";
    return validate_config(parse_config_text(text));
  }
};

void check_dataset(const PlanView& v, const json& entry, const char* key, const std::string& where) {
  require(entry.contains(key), where + " needs '" + key + "'");
  const std::string name = entry.at(key).get<std::string>();
  const std::string ref = v.dataset_reference(name);
  require(dataset_reference_exists(ref), "dataset '" + name + "' (" + ref + ") cannot be resolved");
}

void check_named(const json& doc, const char* sect, const std::string& name, const std::string& where) {
  require(section(doc, sect).contains(name), where + " references unknown " + std::string(sect) + " entry '" + name + "'");
}

}  // namespace

Plan parse_plan(std::string_view text, fs::path base_dir) {
  Plan p;
  try {
    p.document = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, std::string("plan: ") + e.what());
  }
  if (!p.document.is_object()) fail(ErrorCode::kParseError, "plan must be a JSON object");
  p.base_dir = std::move(base_dir);
  return p;
}

Plan load_plan(const fs::path& file) {
  if (!fs::exists(file)) fail(ErrorCode::kUnresolvedReference, "plan " + file.string() + " does not exist");
  return parse_plan(read_text(file), file.parent_path().empty() ? fs::path(".") : file.parent_path());
}

void validate_plan(const Plan& plan) {
  try {
    static const std::set<std::string> known = {"name",     "seed",        "image_shape", "probe",   "datasets",
                                                "encoders", "attacks",     "evaluations", "defenses", "transfer"};
    for (const auto& [k, _] : plan.document.items()) {
      if (!known.count(k)) fail(ErrorCode::kUnknownKey, "unknown plan key '" + k + "'");
    }
    const PlanView v(plan);
    const json& doc = plan.document;
    for (const auto& [name, ref] : section(doc, "datasets").items()) {
      const std::string resolved = v.dataset_reference(name);
      require(dataset_reference_exists(resolved), "dataset '" + name + "' (" + resolved + ") cannot be resolved");
    }
    for (const auto& [name, e] : section(doc, "encoders").items()) {
      const std::string where = "encoder '" + name + "'";
      if (e.contains("path")) {
        const fs::path p = v.encoder_path(e);
        require(fs::exists(p / "manifest.json"), where + ": no encoder checkpoint at " + p.string());
      } else if (e.contains("train")) {
        check_dataset(v, e.at("train"), "data", where);
      } else {
        require(e.contains("random_seed"), where + " needs 'path', 'train' or 'random_seed'");
      }
    }
    for (const auto& [name, e] : section(doc, "attacks").items()) {
      const std::string where = "attack '" + name + "'";
      require(e.contains("encoder"), where + " needs 'encoder'");
      check_named(doc, "encoders", e.at("encoder").get<std::string>(), where);
      check_dataset(v, e, "surrogate", where);
      v.attack_config(e);
    }
    for (const auto& e : section(doc, "evaluations")) {
      require(e.contains("attack"), "evaluation needs 'attack'");
      check_named(doc, "attacks", e.at("attack").get<std::string>(), "evaluation");
      if (e.contains("encoder")) check_named(doc, "encoders", e.at("encoder").get<std::string>(), "evaluation");
      check_dataset(v, e, "train", "evaluation");
      check_dataset(v, e, "test", "evaluation");
    }
    for (const auto& e : section(doc, "defenses")) {
      require(e.contains("attack"), "defense needs 'attack'");
      check_named(doc, "attacks", e.at("attack").get<std::string>(), "defense");
      if (e.contains("encoder")) check_named(doc, "encoders", e.at("encoder").get<std::string>(), "defense");
      check_dataset(v, e, "train", "defense");
      check_dataset(v, e, "test", "defense");
      const DefenseKind kind = parse_defense_kind(e.at("kind").get<std::string>());
      if (kind == DefenseKind::kAdversarialTraining) check_dataset(v, e, "pretraining", "defense");
      require(e.contains("values") && e.at("values").is_array(), "defense needs a 'values' array");
    }
    for (const auto& e : section(doc, "transfer")) {
      for (const auto& a : e.at("attacks")) check_named(doc, "attacks", a.get<std::string>(), "transfer");
      for (const auto& n : e.at("encoders")) check_named(doc, "encoders", n.get<std::string>(), "transfer");
      check_dataset(v, e, "train", "transfer");
      check_dataset(v, e, "test", "transfer");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, std::string("plan: ") + e.what());
  }
}

namespace {

class Runner {
 public:
  Runner(const Plan& plan, RunWriter& writer) : view_(plan), writer_(writer) {}

  void run() {
    const json& doc = view_.plan.document;
    for (const auto& [name, e] : section(doc, "encoders").items()) build_encoder(name, e);
    for (const auto& [name, e] : section(doc, "attacks").items()) build_attack(name, e);
    for (const auto& e : section(doc, "evaluations")) evaluate(e);
    for (const auto& e : section(doc, "defenses")) defend(e);
    std::size_t t = 0;
    for (const auto& e : section(doc, "transfer")) transfer(e, t++);
    writer_.write_text(kMetricsFile, metrics_csv(rows_));
  }

 private:
  const Dataset& dataset(const std::string& name) {
    auto it = datasets_.find(name);
    if (it == datasets_.end()) {
      const std::string ref = view_.dataset_reference(name);
      Dataset d = resolve_dataset(ref, view_.shape);
      d.name = name;
      writer_.add_input({name, "dataset", ref, dataset_digest(d)});
      it = datasets_.emplace(name, std::move(d)).first;
    }
    return it->second;
  }

  void build_encoder(const std::string& name, const json& e) {
    if (e.contains("path")) {
      const fs::path p = view_.encoder_path(e);
      EncoderHandle h = load_encoder(p);
      writer_.add_input({name, "encoder", p.string(), h.weights_digest()});
      encoders_.emplace(name, std::move(h));
      return;
    }
    std::optional<EncoderHandle> h;
    if (e.contains("train")) {
      const json& t = e.at("train");
      ContrastiveOptions o;
      o.epochs = value_or<std::size_t>(t, "epochs", o.epochs);
      o.batch_size = value_or<std::size_t>(t, "batch_size", o.batch_size);
      o.learning_rate = value_or<double>(t, "lr", o.learning_rate);
      o.tau = value_or<double>(t, "tau", o.tau);
      o.seed = value_or<std::int64_t>(t, "seed", view_.seed);
      o.pgd_steps = value_or<std::size_t>(t, "pgd_steps", 0);
      o.pgd_epsilon = value_or<double>(t, "pgd_epsilon", 0.0);
      h = train_contrastive(dataset(t.at("data").get<std::string>()), o).encoder;
    } else {
      h = random_toy_encoder(view_.shape, e.at("random_seed").get<std::int64_t>());
    }
    const std::string rel = "encoders/" + name;
    save_encoder(*h, writer_.path(rel));
    writer_.record(rel);
    encoders_.emplace(name, std::move(*h));
  }

  void build_attack(const std::string& name, const json& e) {
    const AttackConfig cfg = view_.attack_config(e);
    const EncoderHandle& enc = encoders_.at(e.at("encoder").get<std::string>());
    NoiseArtifact a = train_advencoder(cfg, enc, dataset(e.at("surrogate").get<std::string>()));
    const std::string rel = "artifacts/" + name;
    save_artifact(a, writer_.path(rel));
    writer_.record(rel);
    artifacts_.emplace(name, std::move(a));
    attack_encoder_.emplace(name, e.at("encoder").get<std::string>());
  }

  const DownstreamHead& probe(const std::string& encoder, const std::string& train) {
    const auto key = std::make_pair(encoder, train);
    auto it = probes_.find(key);
    if (it == probes_.end()) {
      it = probes_.emplace(key, train_linear_probe(encoders_.at(encoder), dataset(train), view_.probe)).first;
    }
    return it->second;
  }

  EvalOptions eval_options(const json& e) const {
    EvalOptions o;
    o.seed = view_.seed;
    o.probe = view_.probe;
    o.setting = value_or<std::string>(e, "setting", "");
    o.retrieval = value_or<bool>(e, "retrieval", false);
    o.asr_over_all_samples = value_or<bool>(e, "asr_over_all_samples", false);
    return o;
  }

  std::string encoder_of(const json& e) const {
    const std::string attack = e.at("attack").get<std::string>();
    return value_or<std::string>(e, "encoder", attack_encoder_.at(attack));
  }

  void evaluate(const json& e) {
    const std::string attack = e.at("attack").get<std::string>();
    const std::string enc = encoder_of(e);
    const DownstreamHead& head = probe(enc, e.at("train").get<std::string>());
    rows_.push_back({attack, evaluate_attack(artifacts_.at(attack), encoders_.at(enc), head,
                                             dataset(e.at("test").get<std::string>()), eval_options(e))});
  }

  void defend(const json& e) {
    const std::string attack = e.at("attack").get<std::string>();
    const std::string enc = encoder_of(e);
    DefenseSpec base;
    base.kind = parse_defense_kind(e.at("kind").get<std::string>());
    base.sigma = value_or<double>(e, "sigma", base.sigma);
    base.epochs = value_or<std::size_t>(e, "epochs", base.epochs);
    base.lr_body = value_or<double>(e, "lr_body", base.lr_body);
    base.lr_head = value_or<double>(e, "lr_head", base.lr_head);
    base.prune_rate = value_or<double>(e, "prune_rate", base.prune_rate);
    base.pgd_steps = value_or<std::size_t>(e, "pgd_steps", base.pgd_steps);
    base.pgd_epsilon = value_or<double>(e, "pgd_epsilon", base.pgd_epsilon);
    base.seed = value_or<std::int64_t>(e, "seed", view_.seed);
    DefenseInputs in;
    in.artifact = &artifacts_.at(attack);
    in.encoder = &encoders_.at(enc);
    in.downstream_train = &dataset(e.at("train").get<std::string>());
    in.downstream_test = &dataset(e.at("test").get<std::string>());
    if (e.contains("pretraining")) in.pretraining = &dataset(e.at("pretraining").get<std::string>());
    in.eval = eval_options(e);
    if (base.kind == DefenseKind::kCorruption) in.head = &probe(enc, e.at("train").get<std::string>());
    for (const auto& value : e.at("values")) {
      DefenseSpec s = base;
      const double x = value.get<double>();
      switch (s.kind) {
        case DefenseKind::kCorruption: s.sigma = x; break;
        case DefenseKind::kFinetune: s.epochs = static_cast<std::size_t>(x); break;
        case DefenseKind::kPrune: s.prune_rate = x; break;
        case DefenseKind::kAdversarialTraining: s.pgd_epsilon = x; break;
      }
      rows_.push_back({attack, run_defense(s, in)});
    }
  }

  void transfer(const json& e, std::size_t index) {
    std::vector<NoiseArtifact> arts;
    std::vector<std::string> art_names, enc_names;
    for (const auto& a : e.at("attacks")) {
      art_names.push_back(a.get<std::string>());
      arts.push_back(artifacts_.at(art_names.back()));
    }
    std::vector<EncoderHandle> encs;
    std::vector<DownstreamHead> heads;
    const std::string train = e.at("train").get<std::string>();
    for (const auto& n : e.at("encoders")) {
      enc_names.push_back(n.get<std::string>());
      encs.push_back(encoders_.at(enc_names.back()));
      heads.push_back(probe(enc_names.back(), train));
    }
    const auto m = transfer_matrix(arts, encs, heads, dataset(e.at("test").get<std::string>()));
    std::ostringstream out;
    out << "attack";
    for (const auto& n : enc_names) out << "," << csv_field(n);
    out << '\n';
    for (std::size_t a = 0; a < m.size(); ++a) {
      out << csv_field(art_names[a]);
      for (double v : m[a]) out << "," << num(v);
      out << '\n';
    }
    writer_.write_text("transfer_" + std::to_string(index) + ".csv", out.str());
  }

  PlanView view_;
  RunWriter& writer_;
  std::map<std::string, Dataset> datasets_;
  std::map<std::string, EncoderHandle> encoders_;
  std::map<std::string, NoiseArtifact> artifacts_;
  std::map<std::string, std::string> attack_encoder_;
  std::map<std::pair<std::string, std::string>, DownstreamHead> probes_;
  std::vector<MetricRow> rows_;
};

}  // namespace

RunManifest run_experiment(const Plan& plan, const fs::path& out_dir) {
  validate_plan(plan);
  RunWriter writer(out_dir);
  writer.write_text("plan.json", plan.document.dump(2) + "\n");
  try {
    Runner(plan, writer).run();
  } catch (const json::exception& e) {
    fail(ErrorCode::kParseError, std::string("plan: ") + e.what());
  }
  return writer.finish(plan.document, make_run_id());
}

RunManifest run_experiment(const fs::path& plan_file, const fs::path& out_dir) {
  return run_experiment(load_plan(plan_file), out_dir);
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::kCsv;
  if (text == "markdown_table") return ReportFormat::kMarkdownTable;
  if (text == "png_curves") return ReportFormat::kPngCurves;
  fail(ErrorCode::kUnknownFormat, "unknown report format '" + std::string(text) + "'");
}

namespace {

struct Curve {
  std::string axis;
  std::map<double, std::vector<double>> points;  // x -> samples
};

void draw_curve(const fs::path& file, const std::string& title, const std::string& axis,
                const std::vector<std::pair<double, double>>& pts) {
  constexpr int kW = 640, kH = 480, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  cv::Mat img(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar ink(40, 40, 40), line(180, 90, 30);
  cv::line(img, {kLeft, kH - kBottom}, {kW - kRight, kH - kBottom}, ink, 1, cv::LINE_AA);
  cv::line(img, {kLeft, kTop}, {kLeft, kH - kBottom}, ink, 1, cv::LINE_AA);
  double x0 = pts.front().first, x1 = pts.back().first;
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  const auto px = [&](double x) { return kLeft + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (kW - kLeft - kRight))); };
  const auto py = [&](double y) { return kH - kBottom - static_cast<int>(std::lround(y * (kH - kTop - kBottom))); };
  for (double y : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    cv::line(img, {kLeft - 4, py(y)}, {kLeft, py(y)}, ink);
    cv::putText(img, num(y), {8, py(y) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
  }
  std::vector<cv::Point> poly;
  for (const auto& [x, y] : pts) {
    poly.emplace_back(px(x), py(std::clamp(y, 0.0, 1.0)));
    cv::putText(img, num(x), {px(x) - 14, kH - kBottom + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.35, ink, 1, cv::LINE_AA);
  }
  cv::polylines(img, poly, false, line, 2, cv::LINE_AA);
  for (const auto& p : poly) cv::circle(img, p, 4, line, cv::FILLED, cv::LINE_AA);
  cv::putText(img, title, {kLeft, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55, ink, 1, cv::LINE_AA);
  cv::putText(img, axis, {kW / 2 - 30, kH - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, ink, 1, cv::LINE_AA);
  fs::create_directories(file.parent_path());
  if (!cv::imwrite(file.string(), img)) fail(ErrorCode::kIo, "cannot write " + file.string());
}

std::vector<ReportFile> emit_curves(const fs::path& reports, const std::vector<MetricRow>& rows) {
  static const std::vector<std::pair<std::string, double EvalReport::*>> metrics = {
      {"clean_accuracy", &EvalReport::clean_accuracy},
      {"malicious_accuracy", &EvalReport::malicious_accuracy},
      {"asr", &EvalReport::attack_success_rate},
      {"random_noise_asr", &EvalReport::random_noise_asr}};
  std::vector<ReportFile> out;
  for (const auto& [metric, field] : metrics) {
    std::map<std::string, Curve> curves;
    for (const MetricRow& row : rows) {
      const EvalReport& r = row.report;
      std::string group, axis;
      double x = 0.0;
      if (r.defense_kind != "none") {
        group = r.defense_kind;
        axis = r.defense_kind == "corruption" ? "sigma"
               : r.defense_kind == "finetune" ? "epochs"
               : r.defense_kind == "prune"    ? "prune rate"
                                              : "pgd epsilon";
        x = r.defense_param;
      } else if (r.mode == AttackMode::kPerturbation) {
        group = "perturbation";
        axis = "epsilon";
        x = r.epsilon;
      } else {
        group = "patch";
        axis = "patch fraction";
        x = r.patch_fraction;
      }
      Curve& c = curves[group];
      c.axis = axis;
      c.points[x].push_back(r.*field);
    }
    for (const auto& [group, c] : curves) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& [x, ys] : c.points) {
        double s = 0.0;
        for (double y : ys) s += y;
        pts.emplace_back(x, s / static_cast<double>(ys.size()));
      }
      const fs::path file = reports / "curves" / (group + "_" + metric + ".png");
      draw_curve(file, group + ": " + metric, c.axis, pts);
      out.push_back({file, metric, 0, 0, pts.size()});
    }
  }
  return out;
}

ReportFile emit_markdown(const fs::path& reports, const std::vector<MetricRow>& rows) {
  std::vector<std::string> settings, encoders;
  std::map<std::pair<std::string, std::string>, double> cell;
  const auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const MetricRow& row : rows) {
    if (row.report.defense_kind != "none") continue;
    const std::string setting =
        row.report.setting.empty() ? row.attack : row.report.setting + " (" + row.attack + ")";
    add_unique(settings, setting);
    add_unique(encoders, row.report.encoder_id);
    cell[{setting, row.report.encoder_id}] = row.report.attack_success_rate;
  }
  std::ostringstream md;
  md << "| setting |";
  for (const auto& e : encoders) md << ' ' << e << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < encoders.size(); ++i) md << "---:|";
  md << '\n';
  for (const auto& s : settings) {
    md << "| " << s << " |";
    for (const auto& e : encoders) {
      const auto it = cell.find({s, e});
      if (it == cell.end()) {
        md << " - |";
      } else {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * it->second);
        md << ' ' << buf << " |";
      }
    }
    md << '\n';
  }
  const fs::path file = reports / "asr_table.md";
  write_file(file, md.str());
  return {file, "asr", settings.size(), encoders.size(), 0};
}

}  // namespace

std::vector<ReportFile> emit_report(const fs::path& run_dir, ReportFormat format) {
  RunManifest m = read_manifest(run_dir);
  const bool has_metrics = std::any_of(m.outputs.begin(), m.outputs.end(),
                                       [](const ManifestOutput& o) { return o.path == kMetricsFile; });
  if (!has_metrics) fail(ErrorCode::kCorruptManifest, "manifest does not list " + std::string(kMetricsFile));
  const std::vector<MetricRow> rows = parse_metrics_csv(read_text(run_dir / kMetricsFile));
  const fs::path reports = run_dir / "reports";
  std::vector<ReportFile> files;
  switch (format) {
    case ReportFormat::kCsv: {
      const fs::path file = reports / "metrics.csv";
      write_file(file, metrics_csv(rows));
      files.push_back({file, "", rows.size(), csv_columns().size(), 0});
      break;
    }
    case ReportFormat::kMarkdownTable: files.push_back(emit_markdown(reports, rows)); break;
    case ReportFormat::kPngCurves: files = emit_curves(reports, rows); break;
  }
  for (const auto& f : files) {
    add_or_replace(m.outputs, {fs::relative(f.path, run_dir).generic_string(), sha256_file(f.path)});
  }
  write_manifest(m, run_dir);
  return files;
}

}  // namespace advenc
