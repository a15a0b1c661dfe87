#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slat/data.hpp"
#include "slat/error.hpp"
#include "slat/training.hpp"

namespace slat {

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// All violations found while validating, one per entry.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Flat `section.key -> value` view of an INI file. Keys before the first
/// section header have no prefix.
using RawConfig = std::map<std::string, std::string>;

RawConfig parse_ini(const std::string& text, const std::string& source = "<string>");
RawConfig read_ini(const std::string& path);

struct ModelConfig {
  std::string name = "toy_mlp";  // linear | toy_mlp | small_cnn | small_cnn_deep
  std::size_t hidden = 16;
  Activation activation = Activation::relu;
  std::vector<int> sites;  // empty: the zoo default
  double eta = 0.0;  // latent sites; the input site uses train.epsilon
};

struct DataConfig {
  std::string source = "toy";  // toy | idx
  ToySpec toy;
  std::size_t toy_eval_per_class = 500;
  std::string images;
  std::string labels;
  std::size_t train_count = 0;  // 0: everything not held out
  std::size_t eval_count = 1000;
};

struct EvalConfig {
  std::size_t samples = 128;
  double epsilon = 0.0;
  int pgd_steps = 20;
  double pgd_alpha = 0.0;
  int final_steps = 50;
  int final_restarts = 10;
  std::size_t final_count = 1000;
  std::size_t landscape_n = 21;
  std::size_t landscape_samples = 128;
  long overfit_window = 100;
  double overfit_drop = 0.3;
  double overfit_clean_tolerance = 0.05;
  bool landscape = true;
  bool boundary = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  DataConfig data;
  TrainSpec train;
  EvalConfig eval;
  std::string out_dir = "runs/default";
};

/// Applies `section.key=value` overrides on top of the file values, then
/// fills defaults that depend on the data source (eta 8/255 and pad 4 with
/// clamping for images, eta 0.1 for the toy task) and validates. Throws
/// ValidationError naming every unknown key or bad value.
ExperimentConfig build_config(const RawConfig& raw, const std::vector<std::pair<std::string, std::string>>& overrides = {},
                              bool check_files = true);
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace slat
