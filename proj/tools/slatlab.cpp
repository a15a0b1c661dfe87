// slatlab: command-line driver for training, evaluation and sweeps.
//
//   slatlab train --config configs/toy.ini --seed 3 --out runs/toy --train.method=fgsm_at
//   slatlab eval --config configs/mnist.ini --ckpt runs/mnist/final.ckpt
//   slatlab sweep --config configs/mnist.ini --param train.epsilon --values 0.1,0.2,0.3
//   slatlab landscape --config configs/mnist.ini --ckpt runs/mnist/final.ckpt
//   slatlab toy-demo --config configs/toy.ini

#include <cstdlib>
#include <malloc.h>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "slat/config.hpp"
#include "slat/experiment.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Leftover `--section.key=value` (or `--section.key value`) arguments.
Overrides parse_overrides(const std::vector<std::string>& rest) {
  Overrides out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    std::string arg = rest[i];
    if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos) {
      throw slat::Error("unrecognized argument '" + arg + "'");
    }
    arg = arg.substr(2);
    if (const auto eq = arg.find('='); eq != std::string::npos) {
      out.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
    } else if (i + 1 < rest.size()) {
      out.emplace_back(arg, rest[++i]);
    } else {
      throw slat::Error("override '" + arg + "' has no value");
    }
  }
  return out;
}

unsigned sweep_threads() {
  if (const char* env = std::getenv("SLATLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : s) {
    if (c == ',') {
      if (!cell.empty()) out.push_back(cell);
      cell.clear();
    } else if (c != ' ') {
      cell += c;
    }
  }
  if (!cell.empty()) out.push_back(cell);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Batch tensors are large; keep them on the heap instead of mmap/munmap per op.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Single-step latent adversarial training experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string ckpt;
  long seed = -1;
  bool eval_only = false;
  std::string param;
  std::string values;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI experiment config")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->allow_extras();
  };

  CLI::App* train = app.add_subcommand("train", "Train and evaluate one configuration");
  add_common(train);
  train->add_flag("--eval-only", eval_only, "Skip training and evaluate --ckpt");
  train->add_option("--ckpt", ckpt, "Checkpoint to evaluate");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--ckpt", ckpt, "Checkpoint to evaluate")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "One run per value of a config parameter");
  add_common(sweep);
  sweep->add_option("--param", param, "Dotted config key, e.g. train.epsilon")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  CLI::App* landscape = app.add_subcommand("landscape", "Loss landscape of a checkpoint");
  add_common(landscape);
  landscape->add_option("--ckpt", ckpt, "Checkpoint")->required();

  CLI::App* toy = app.add_subcommand("toy-demo", "Standard, FGSM AT and SLAT on the toy task");
  add_common(toy);

  CLI11_PARSE(app, argc, argv);

  CLI::App* active = app.get_subcommands().front();
  try {
    Overrides overrides = parse_overrides(active->remaining());
    if (seed >= 0) overrides.emplace_back("seed", std::to_string(seed));
    if (!out_dir.empty()) overrides.emplace_back("output.dir", out_dir);

    if (active == sweep) {
      return slat::run_sweep(slat::read_ini(config_path), overrides, param, split_values(values), sweep_threads(),
                             std::cerr);
    }
    const slat::ExperimentConfig cfg = slat::load_config(config_path, overrides);
    if (active == train) return slat::run_experiment(cfg, std::cerr, eval_only, ckpt);
    if (active == eval) return slat::run_experiment(cfg, std::cerr, true, ckpt);
    if (active == landscape) return slat::run_landscape(cfg, ckpt, std::cerr);
    return slat::run_toy_demo(cfg, std::cerr);
  } catch (const slat::ValidationError& e) {
    std::cerr << "config error:\n";
    for (const auto& p : e.problems()) std::cerr << "  " << p << '\n';
    return slat::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return slat::kExitConfig;
  }
}
