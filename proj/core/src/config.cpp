#include "advenc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "advenc/digest.hpp"
#include "advenc/error.hpp"

namespace advenc {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  // Accept "a/b" so budgets can be written as 10/255.
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    return parse_double(key, trim(text.substr(0, slash))) / parse_double(key, trim(text.substr(slash + 1)));
  }
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::kParseError, std::string(key) + ": not a number: '" + std::string(text) + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    fail(ErrorCode::kParseError, std::string(key) + ": not an integer: '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCode::kParseError, std::string(key) + ": not a boolean: '" + std::string(text) + "'");
}

using Setter = std::function<void(AttackConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"mode", [](AttackConfig& c, std::string_view v) { c.mode = parse_attack_mode(v); }},
      {"epsilon", [](AttackConfig& c, std::string_view v) { c.epsilon = parse_double("epsilon", v); }},
      {"patch_fraction", [](AttackConfig& c, std::string_view v) { c.patch_fraction = parse_double("patch_fraction", v); }},
      {"patch_position", [](AttackConfig& c, std::string_view v) { c.patch_position = parse_patch_position(v); }},
      {"alpha", [](AttackConfig& c, std::string_view v) { c.alpha = parse_double("alpha", v); }},
      {"beta", [](AttackConfig& c, std::string_view v) { c.beta = parse_double("beta", v); }},
      {"lambda", [](AttackConfig& c, std::string_view v) { c.lambda = parse_double("lambda", v); }},
      {"tau", [](AttackConfig& c, std::string_view v) { c.tau = parse_double("tau", v); }},
      {"latent_dim", [](AttackConfig& c, std::string_view v) { c.latent_dim = parse_int<std::size_t>("latent_dim", v); }},
      {"epochs", [](AttackConfig& c, std::string_view v) { c.epochs = parse_int<std::size_t>("epochs", v); }},
      {"batch_size", [](AttackConfig& c, std::string_view v) { c.batch_size = parse_int<std::size_t>("batch_size", v); }},
      {"learning_rate", [](AttackConfig& c, std::string_view v) { c.learning_rate = parse_double("learning_rate", v); }},
      {"seed", [](AttackConfig& c, std::string_view v) { c.seed = parse_int<std::int64_t>("seed", v); }},
      {"image_shape", [](AttackConfig& c, std::string_view v) { c.image_shape = parse_image_shape(v); }},
      {"hfc_cutoff", [](AttackConfig& c, std::string_view v) { c.hfc_cutoff = parse_double("hfc_cutoff", v); }},
      {"use_generator", [](AttackConfig& c, std::string_view v) { c.use_generator = parse_bool("use_generator", v); }},
  };
  return table;
}

}  // namespace

std::string_view to_string(AttackMode mode) {
  return mode == AttackMode::kPerturbation ? "perturbation" : "patch";
}

std::string_view to_string(PatchPosition position) {
  return position == PatchPosition::kBottomRight ? "bottom_right" : "random_fixed";
}

AttackMode parse_attack_mode(std::string_view text) {
  if (text == "perturbation") return AttackMode::kPerturbation;
  if (text == "patch") return AttackMode::kPatch;
  fail(ErrorCode::kParseError, "unknown mode '" + std::string(text) + "'");
}

PatchPosition parse_patch_position(std::string_view text) {
  if (text == "bottom_right") return PatchPosition::kBottomRight;
  if (text == "random_fixed") return PatchPosition::kRandomFixed;
  fail(ErrorCode::kParseError, "unknown patch_position '" + std::string(text) + "'");
}

std::string to_string(const ImageShape& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" + std::to_string(shape.width);
}

ImageShape parse_image_shape(std::string_view text) {
  ImageShape shape;
  std::size_t* fields[] = {&shape.channels, &shape.height, &shape.width};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto sep = text.find('x');
    if ((i < 2) == (sep == std::string_view::npos)) {
      fail(ErrorCode::kParseError, "image_shape must look like CxHxW");
    }
    *fields[i] = parse_int<std::size_t>("image_shape", trim(text.substr(0, sep)));
    text = i < 2 ? text.substr(sep + 1) : std::string_view{};
  }
  return shape;
}

std::size_t AttackConfig::patch_side() const {
  return static_cast<std::size_t>(
      std::floor(std::sqrt(patch_fraction * static_cast<double>(image_shape.height * image_shape.width))));
}

AttackConfig validate_config(const AttackConfig& config) {
  if (config.mode == AttackMode::kPerturbation) {
    if (!(config.epsilon > 0.0 && config.epsilon <= 1.0)) {
      fail(ErrorCode::kBudgetOutOfRange, "epsilon must lie in (0, 1], got " + format_double(config.epsilon));
    }
  } else if (!(config.patch_fraction > 0.0 && config.patch_fraction <= 1.0)) {
    fail(ErrorCode::kFractionOutOfRange, "patch_fraction must lie in (0, 1], got " + format_double(config.patch_fraction));
  }
  if (!(config.alpha >= 0.0) || !(config.beta >= 0.0) || !(config.lambda >= 0.0)) {
    fail(ErrorCode::kInvalidParameter, "loss weights must be non-negative");
  }
  if (!(config.tau > 0.0) || !std::isfinite(config.tau)) fail(ErrorCode::kInvalidParameter, "tau must be positive");
  if (config.epochs == 0) fail(ErrorCode::kInvalidParameter, "epochs must be positive");
  if (config.batch_size == 0) fail(ErrorCode::kInvalidParameter, "batch_size must be positive");
  if (config.latent_dim == 0) fail(ErrorCode::kInvalidParameter, "latent_dim must be positive");
  if (!(config.learning_rate > 0.0)) fail(ErrorCode::kInvalidParameter, "learning_rate must be positive");
  if (config.image_shape.channels == 0 || config.image_shape.height < 2 || config.image_shape.width < 2) {
    fail(ErrorCode::kInvalidParameter, "image_shape must have C >= 1 and H, W >= 2");
  }
  if (!(config.hfc_cutoff > 0.0 && config.hfc_cutoff < 1.0)) {
    fail(ErrorCode::kInvalidParameter, "hfc_cutoff must lie in (0, 1)");
  }
  return config;
}

std::string to_canonical_text(const AttackConfig& c) {
  std::ostringstream out;
  out << "mode = " << to_string(c.mode) << '\n'
      << "epsilon = " << format_double(c.epsilon) << '\n'
      << "patch_fraction = " << format_double(c.patch_fraction) << '\n'
      << "patch_position = " << to_string(c.patch_position) << '\n'
      << "alpha = " << format_double(c.alpha) << '\n'
      << "beta = " << format_double(c.beta) << '\n'
      << "lambda = " << format_double(c.lambda) << '\n'
      << "tau = " << format_double(c.tau) << '\n'
      << "latent_dim = " << c.latent_dim << '\n'
      << "epochs = " << c.epochs << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "learning_rate = " << format_double(c.learning_rate) << '\n'
      << "seed = " << c.seed << '\n'
      << "image_shape = " << to_string(c.image_shape) << '\n'
      << "hfc_cutoff = " << format_double(c.hfc_cutoff) << '\n'
      << "use_generator = " << (c.use_generator ? "true" : "false") << '\n';
  return out.str();
}

AttackConfig parse_config_text(std::string_view text) {
  AttackConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) fail(ErrorCode::kUnknownKey, "unknown config key '" + std::string(key) + "'");
    it->second(config, value);
  }
  return config;
}

AttackConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingFile, path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_digest(const AttackConfig& config) { return sha256_hex(to_canonical_text(config)); }

}  // namespace advenc
