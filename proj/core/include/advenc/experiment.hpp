#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "advenc/config.hpp"
#include "advenc/defenses.hpp"
#include "advenc/encoders.hpp"
#include "advenc/evaluation.hpp"
#include "advenc/types.hpp"

namespace advenc {

std::string_view tool_version();

inline constexpr int kMetricsSchemaVersion = 1;

/// One metrics.csv row.
struct MetricRow {
  std::string attack;
  EvalReport report;
};

/// Header plus one line per row; the first column is schema_version.
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics_csv(std::string_view text);

struct ManifestInput {
  std::string name;
  std::string kind;  // "dataset" or "encoder"
  std::string reference;
  std::string sha256;
};

struct ManifestOutput {
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct RunManifest {
  std::string run_id;
  nlohmann::json config;
  std::vector<ManifestInput> inputs;
  std::vector<ManifestOutput> outputs;
  std::string tool_version;
  std::string started_at;
  double duration_seconds = 0.0;
};

nlohmann::json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);
/// Throws kCorruptManifest when manifest.json is missing, unparseable or any
/// listed output is absent or has a different digest.
RunManifest read_manifest(const std::filesystem::path& run_dir);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir);

/// Tracks files written below a run directory and their digests.
class RunWriter {
 public:
  /// Throws kOutputNotEmpty unless `dir` is absent or empty.
  explicit RunWriter(std::filesystem::path dir);
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& relative) const { return dir_ / relative; }
  void write_text(const std::string& relative, std::string_view text);
  /// Registers every regular file below `relative` (a file or directory).
  void record(const std::string& relative);
  void add_input(ManifestInput input);
  /// Writes manifest.json with the duration since construction.
  RunManifest finish(nlohmann::json config, std::string run_id);

 private:
  std::filesystem::path dir_;
  std::vector<ManifestInput> inputs_;
  std::vector<ManifestOutput> outputs_;
  std::string started_at_;
  double start_seconds_;
};

/// Digest of the decoded images and labels (stable across storage formats).
std::string dataset_digest(const Dataset& data);

/// JSON experiment plan:
///   seed, image_shape, probe {epochs, lr, batch_size}
///   datasets    name -> reference (see resolve_dataset)
///   encoders    name -> {path} | {random_seed} | {train: {data, epochs, batch_size, seed, pgd_steps, pgd_epsilon}}
///   attacks     name -> {encoder, surrogate, config {key: value} | config_file}
///   evaluations [{attack, encoder?, train, test, setting?, retrieval?, asr_over_all_samples?}]
///   defenses    [{attack, encoder?, train, test, pretraining?, kind, values [...], ...DefenseSpec fields}]
///   transfer    [{attacks [...], encoders [...], train, test}]
struct Plan {
  nlohmann::json document;
  std::filesystem::path base_dir;
};

Plan load_plan(const std::filesystem::path& file);
Plan parse_plan(std::string_view text, std::filesystem::path base_dir = ".");
/// Resolves every reference and config without running anything. Throws
/// kUnresolvedReference, kParseError or the config error.
void validate_plan(const Plan& plan);

/// Validates the plan, then trains encoders, attacks, evaluations, defenses and
/// transfer matrices in that order below `out_dir`.
RunManifest run_experiment(const Plan& plan, const std::filesystem::path& out_dir);
RunManifest run_experiment(const std::filesystem::path& plan_file, const std::filesystem::path& out_dir);

enum class ReportFormat { kCsv, kMarkdownTable, kPngCurves };
ReportFormat parse_report_format(std::string_view text);

struct ReportFile {
  std::filesystem::path path;
  /// Curve metric (png_curves only).
  std::string metric;
  std::size_t rows = 0;
  std::size_t columns = 0;
  std::size_t points = 0;
};

/// Writes below <run_dir>/reports and registers the files in the manifest.
std::vector<ReportFile> emit_report(const std::filesystem::path& run_dir, ReportFormat format);

}  // namespace advenc
