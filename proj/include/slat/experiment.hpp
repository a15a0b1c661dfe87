#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "slat/config.hpp"
#include "slat/data.hpp"
#include "slat/models.hpp"

namespace slat {

struct Datasets {
  LabeledDataset train;
  LabeledDataset eval;
};

/// Toy: fresh train and eval draws (eval seed derived from the run seed).
/// IDX: the last eval_count examples are held out, training uses the first
/// train_count of the rest (all of them when 0).
Datasets load_datasets(const ExperimentConfig& cfg);

/// Zoo model for the config, with K and eta applied.
Model build_model(const ExperimentConfig& cfg);

enum ExitCode { kExitOk = 0, kExitConfig = 1, kExitNonFinite = 2 };

/// Trains (unless eval_only) and writes metrics.csv, final.ckpt,
/// landscape_<method>.csv, summary.json and timing.json under cfg.out_dir.
/// With eval_only the model comes from `checkpoint` and only the summary and
/// landscape are written.
int run_experiment(const ExperimentConfig& cfg, std::ostream& log, bool eval_only = false,
                   const std::string& checkpoint = "");

/// One run per value of the dotted `param`, in <out>/<param>=<value>/, then
/// <out>/sweep.csv. Failed runs are reported and the rest continue. Runs go
/// in parallel up to `threads` at a time.
int run_sweep(const RawConfig& raw, const std::vector<std::pair<std::string, std::string>>& overrides,
              const std::string& param, const std::vector<std::string>& values, unsigned threads, std::ostream& log);

/// Loss landscape of a checkpoint on the head of the eval set.
int run_landscape(const ExperimentConfig& cfg, const std::string& checkpoint, std::ostream& log);

/// Standard, FGSM AT and SLAT on the toy task with one seed; per-method
/// runs in subdirectories, toy_data.csv and a combined summary.json.
int run_toy_demo(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace slat
