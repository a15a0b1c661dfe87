#include "slat/config.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace slat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> problems)
    : Error("invalid configuration: " + join(problems, "; ")), problems_(std::move(problems)) {}

RawConfig parse_ini(const std::string& text, const std::string& source) {
  RawConfig out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find_first_of("#;"); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, number, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError(source, number, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, number, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source, number, "missing key before '='");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) throw ParseError(source, number, "duplicate key '" + full + "'");
    out[full] = trim(line.substr(eq + 1));
  }
  return out;
}

RawConfig read_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str(), path);
}

namespace {

double to_double(const std::string& v) {
  // Accept simple fractions like 8/255.
  if (const auto slash = v.find('/'); slash != std::string::npos) {
    return std::stod(v.substr(0, slash)) / std::stod(v.substr(slash + 1));
  }
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return d;
}

long to_long(const std::string& v) {
  std::size_t used = 0;
  const long n = std::stol(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return n;
}

std::size_t to_size(const std::string& v) {
  const long n = to_long(v);
  if (n < 0) throw std::invalid_argument(v);
  return static_cast<std::size_t>(n);
}

bool to_bool(const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument(v);
}

std::vector<int> to_sites(const std::string& v) {
  std::vector<int> out;
  std::string cell;
  std::istringstream in(v);
  while (std::getline(in, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(static_cast<int>(to_long(cell)));
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](auto& c, auto& v) { c.seed = static_cast<std::uint64_t>(to_long(v)); }},
      {"model.name", [](auto& c, auto& v) { c.model.name = v; }},
      {"model.hidden", [](auto& c, auto& v) { c.model.hidden = to_size(v); }},
      {"model.activation", [](auto& c, auto& v) { c.model.activation = parse_activation(v); }},
      {"model.sites", [](auto& c, auto& v) { c.model.sites = to_sites(v); }},
      {"model.eta", [](auto& c, auto& v) { c.model.eta = to_double(v); }},
      {"data.source", [](auto& c, auto& v) { c.data.source = v; }},
      {"data.mu_x", [](auto& c, auto& v) { c.data.toy.mu_x = to_double(v); }},
      {"data.mu_y", [](auto& c, auto& v) { c.data.toy.mu_y = to_double(v); }},
      {"data.sigma_x", [](auto& c, auto& v) { c.data.toy.sigma_x = to_double(v); }},
      {"data.sigma_y", [](auto& c, auto& v) { c.data.toy.sigma_y = to_double(v); }},
      {"data.n_per_class", [](auto& c, auto& v) { c.data.toy.n_per_class = to_size(v); }},
      {"data.eval_per_class", [](auto& c, auto& v) { c.data.toy_eval_per_class = to_size(v); }},
      {"data.images", [](auto& c, auto& v) { c.data.images = v; }},
      {"data.labels", [](auto& c, auto& v) { c.data.labels = v; }},
      {"data.train_count", [](auto& c, auto& v) { c.data.train_count = to_size(v); }},
      {"data.eval_count", [](auto& c, auto& v) { c.data.eval_count = to_size(v); }},
      {"data.augment_pad", [](auto& c, auto& v) { c.train.augment_pad = to_size(v); }},
      {"train.method", [](auto& c, auto& v) { c.train.method = parse_method(v); }},
      {"train.epochs", [](auto& c, auto& v) { c.train.epochs = static_cast<int>(to_long(v)); }},
      {"train.batch", [](auto& c, auto& v) { c.train.batch = to_size(v); }},
      {"train.lr_max", [](auto& c, auto& v) { c.train.lr_max = to_double(v); }},
      {"train.peak_fraction", [](auto& c, auto& v) { c.train.peak_fraction = to_double(v); }},
      {"train.momentum", [](auto& c, auto& v) { c.train.momentum = to_double(v); }},
      {"train.weight_decay", [](auto& c, auto& v) { c.train.weight_decay = to_double(v); }},
      {"train.epsilon", [](auto& c, auto& v) { c.train.epsilon = to_double(v); }},
      {"train.rs_alpha", [](auto& c, auto& v) { c.train.rs_alpha = to_double(v); }},
      {"train.pgd_steps", [](auto& c, auto& v) { c.train.pgd_steps = static_cast<int>(to_long(v)); }},
      {"train.pgd_alpha", [](auto& c, auto& v) { c.train.pgd_alpha = to_double(v); }},
      {"train.lambda_ga", [](auto& c, auto& v) { c.train.lambda_ga = to_double(v); }},
      {"train.clamp", [](auto& c, auto& v) { c.train.clamp = to_bool(v) ? std::optional<InputRange>(InputRange{}) : std::nullopt; }},
      {"train.checkpoint_every", [](auto& c, auto& v) { c.train.checkpoint_every = to_long(v); }},
      {"eval.samples", [](auto& c, auto& v) { c.eval.samples = to_size(v); }},
      {"eval.epsilon", [](auto& c, auto& v) { c.eval.epsilon = to_double(v); }},
      {"eval.pgd_steps", [](auto& c, auto& v) { c.eval.pgd_steps = static_cast<int>(to_long(v)); }},
      {"eval.pgd_alpha", [](auto& c, auto& v) { c.eval.pgd_alpha = to_double(v); }},
      {"eval.final_steps", [](auto& c, auto& v) { c.eval.final_steps = static_cast<int>(to_long(v)); }},
      {"eval.final_restarts", [](auto& c, auto& v) { c.eval.final_restarts = static_cast<int>(to_long(v)); }},
      {"eval.final_count", [](auto& c, auto& v) { c.eval.final_count = to_size(v); }},
      {"eval.landscape", [](auto& c, auto& v) { c.eval.landscape = to_bool(v); }},
      {"eval.landscape_n", [](auto& c, auto& v) { c.eval.landscape_n = to_size(v); }},
      {"eval.landscape_samples", [](auto& c, auto& v) { c.eval.landscape_samples = to_size(v); }},
      {"eval.overfit_window", [](auto& c, auto& v) { c.eval.overfit_window = to_long(v); }},
      {"eval.overfit_drop", [](auto& c, auto& v) { c.eval.overfit_drop = to_double(v); }},
      {"eval.overfit_clean_tolerance", [](auto& c, auto& v) { c.eval.overfit_clean_tolerance = to_double(v); }},
      {"eval.boundary", [](auto& c, auto& v) { c.eval.boundary = to_bool(v); }},
      {"output.dir", [](auto& c, auto& v) { c.out_dir = v; }},
  };
  return table;
}

}  // namespace

ExperimentConfig build_config(const RawConfig& raw, const std::vector<std::pair<std::string, std::string>>& overrides,
                              bool check_files) {
  RawConfig merged = raw;
  for (const auto& [k, v] : overrides) merged[k] = v;

  ExperimentConfig cfg;
  std::vector<std::string> problems;
  const bool is_idx = merged.count("data.source") && merged.at("data.source") == "idx";
  const bool is_image = is_idx;
  cfg.model.name = is_image ? "small_cnn" : "toy_mlp";
  cfg.model.eta = is_image ? 8.0 / 255.0 : 0.1;
  cfg.train.epsilon = is_image ? 8.0 / 255.0 : 0.1;
  cfg.train.augment_pad = is_image ? 4 : 0;
  cfg.train.clamp = is_image ? std::optional<InputRange>(InputRange{}) : std::nullopt;
  cfg.eval.boundary = !is_image;

  for (const auto& [key, value] : merged) {
    const auto it = setters().find(key);
    if (it == setters().end()) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      it->second(cfg, value);
    } catch (const std::exception&) {
      problems.push_back("bad value '" + value + "' for '" + key + "'");
    }
  }
  cfg.train.seed = cfg.seed;
  if (!merged.count("eval.epsilon")) cfg.eval.epsilon = cfg.train.epsilon;

  const std::vector<std::string> models = {"linear", "toy_mlp", "small_cnn", "small_cnn_deep"};
  if (std::find(models.begin(), models.end(), cfg.model.name) == models.end()) {
    problems.push_back("model.name must be one of linear, toy_mlp, small_cnn, small_cnn_deep");
  }
  if (cfg.data.source != "toy" && cfg.data.source != "idx") problems.push_back("data.source must be toy or idx");
  const bool cnn = cfg.model.name.rfind("small_cnn", 0) == 0;
  if (cnn && cfg.data.source != "idx") problems.push_back("small_cnn needs data.source = idx");
  if (!cnn && cfg.data.source == "idx") problems.push_back(cfg.model.name + " needs data.source = toy");
  if (cfg.model.hidden < 1) problems.push_back("model.hidden must be >= 1");
  if (!(cfg.model.eta >= 0.0)) problems.push_back("model.eta must be >= 0");
  const int blocks = cfg.model.name == "linear" ? 1 : (cnn ? 3 : 2);
  for (int k : cfg.model.sites) {
    if (k < 0 || k >= blocks) {
      problems.push_back("model.sites: site " + std::to_string(k) + " not in 0.." + std::to_string(blocks - 1));
    }
  }
  if (cfg.data.source == "idx") {
    if (cfg.data.images.empty() || cfg.data.labels.empty()) {
      problems.push_back("data.images and data.labels are required for idx data");
    } else if (check_files) {
      if (!std::filesystem::exists(cfg.data.images)) problems.push_back("data.images not found: " + cfg.data.images);
      if (!std::filesystem::exists(cfg.data.labels)) problems.push_back("data.labels not found: " + cfg.data.labels);
    }
    if (cfg.data.eval_count < 1) problems.push_back("data.eval_count must be >= 1");
  } else if (!(cfg.data.toy.sigma_x > 0.0) || !(cfg.data.toy.sigma_y > 0.0)) {
    problems.push_back("data.sigma_x and data.sigma_y must be > 0");
  }
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  if (cfg.train.method == Method::slat_fast_ga && (cnn || cfg.model.activation != Activation::softplus) &&
      cfg.model.name != "linear") {
    problems.push_back("train.method slat_fast_ga needs a softplus toy_mlp or a linear model");
  }
  if (cfg.eval.pgd_steps < 1 || cfg.eval.final_steps < 1 || cfg.eval.final_restarts < 1) {
    problems.push_back("eval attack steps and restarts must be >= 1");
  }
  if (cfg.eval.landscape_n < 2) problems.push_back("eval.landscape_n must be >= 2");
  if (cfg.eval.samples < 1) problems.push_back("eval.samples must be >= 1");
  if (!problems.empty()) throw ValidationError(problems);
  return cfg;
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  return build_config(read_ini(path), overrides);
}

}  // namespace slat
