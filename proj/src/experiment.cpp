#include "slat/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "slat/attacks.hpp"
#include "slat/error.hpp"
#include "slat/metrics.hpp"
#include "slat/rng.hpp"
#include "slat/training.hpp"

namespace slat {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Datasets load_datasets(const ExperimentConfig& cfg) {
  Datasets d;
  if (cfg.data.source == "toy") {
    ToySpec spec = cfg.data.toy;
    spec.seed = mix_seed(cfg.seed, 1);
    d.train = gen_toy(spec);
    spec.seed = mix_seed(cfg.seed, 2);
    spec.n_per_class = cfg.data.toy_eval_per_class;
    d.eval = gen_toy(spec);
    return d;
  }
  const LabeledDataset all = load_idx(cfg.data.images, cfg.data.labels);
  if (cfg.data.eval_count >= all.size()) throw Error("data.eval_count leaves no training examples");
  const std::size_t held = all.size() - cfg.data.eval_count;
  const std::size_t n_train = cfg.data.train_count == 0 ? held : std::min(cfg.data.train_count, held);
  d.train = all.slice(0, n_train);
  d.eval = all.slice(held, all.size());
  return d;
}

Model build_model(const ExperimentConfig& cfg) {
  const std::uint64_t seed = mix_seed(cfg.seed, 3);
  Model m = [&] {
    if (cfg.model.name == "linear") return build_linear(2, 2, seed);
    if (cfg.model.name == "toy_mlp") return build_toy_mlp(cfg.model.hidden, cfg.model.activation, seed);
    return build_small_cnn(Shape{1, 28, 28}, 10, cfg.model.activation, cfg.model.name == "small_cnn_deep", seed);
  }();
  if (!cfg.model.sites.empty()) m.set_sites(cfg.model.sites);
  // The input site is perturbed with the training radius; model.eta covers the latent sites.
  m.set_eta(cfg.model.eta);
  if (m.etas().count(0)) m.set_eta(0, cfg.train.epsilon);
  return m;
}

namespace {

EvalSettings eval_settings(const ExperimentConfig& cfg) {
  EvalSettings e;
  e.samples = cfg.eval.samples;
  e.epsilon = cfg.eval.epsilon;
  e.pgd_steps = cfg.eval.pgd_steps;
  e.pgd_alpha = cfg.eval.pgd_alpha;
  e.seed = mix_seed(cfg.seed, 4);
  e.clamp = cfg.train.clamp;
  return e;
}

AttackSpec pgd_spec(const ExperimentConfig& cfg, int steps, int restarts) {
  AttackSpec a;
  a.kind = AttackKind::pgd;
  a.epsilon = cfg.eval.epsilon;
  a.steps = steps;
  a.restarts = restarts;
  a.alpha = cfg.eval.pgd_alpha > 0.0 ? cfg.eval.pgd_alpha : 2.5 * cfg.eval.epsilon / steps;
  a.clamp = cfg.train.clamp;
  a.seed = mix_seed(cfg.seed, 5);
  return a;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json summarize(const Model& model, const ExperimentConfig& cfg, const Datasets& data,
               const std::vector<MetricRecord>& records, long steps, std::ostream& log) {
  json s;
  s["method"] = to_string(cfg.train.method);
  s["model"] = cfg.model.name;
  s["seed"] = cfg.seed;
  s["epsilon"] = cfg.eval.epsilon;
  s["steps"] = steps;

  const LabeledDataset final_set = data.eval.slice(0, std::min(cfg.eval.final_count, data.eval.size()));
  s["eval_examples"] = final_set.size();
  s["clean_acc"] = accuracy(model, final_set);
  const AttackSpec pgd20 = pgd_spec(cfg, cfg.eval.pgd_steps, 1);
  s["pgd" + std::to_string(cfg.eval.pgd_steps) + "_acc"] = robust_accuracy(model, final_set, pgd20);
  const AttackSpec pgd_final = pgd_spec(cfg, cfg.eval.final_steps, cfg.eval.final_restarts);
  s["pgd" + std::to_string(cfg.eval.final_steps) + "_" + std::to_string(cfg.eval.final_restarts) + "_acc"] =
      robust_accuracy(model, final_set, pgd_final);
  log << "  final clean " << s["clean_acc"] << " robust " << s["pgd" + std::to_string(cfg.eval.pgd_steps) + "_acc"]
      << '\n';

  if (!records.empty()) {
    const OverfitDetector det{cfg.eval.overfit_window, cfg.eval.overfit_drop, cfg.eval.overfit_clean_tolerance};
    const auto hit = detect_catastrophic_overfitting(records, det);
    s["catastrophic_overfitting"] = hit.has_value();
    s["overfit_step"] = hit ? json(*hit) : json(nullptr);
    s["final_grad_align"] = records.back().grad_align;
  }
  if (cfg.eval.boundary) {
    try {
      s["boundary_ratio"] = boundary_nonrobust_ratio(model, toy_probe(cfg.data.toy));
    } catch (const DegenerateBoundary& e) {
      s["boundary_ratio"] = nullptr;
      s["boundary_error"] = e.what();
    }
  }
  if (cfg.eval.landscape) {
    const LabeledDataset head = data.eval.slice(0, std::min(cfg.eval.landscape_samples, data.eval.size()));
    const LandscapeGrid grid =
        loss_landscape(model, head.xs, head.ys, cfg.eval.epsilon, cfg.eval.landscape_n, mix_seed(cfg.seed, 6));
    write_landscape_csv(grid, (fs::path(cfg.out_dir) / ("landscape_" + std::string(to_string(cfg.train.method)) + ".csv")).string());
    s["landscape_plane_residual"] = plane_fit_residual(grid);
  }
  return s;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, std::ostream& log, bool eval_only, const std::string& checkpoint) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);
  const Datasets data = load_datasets(cfg);
  Model model = build_model(cfg);
  log << to_string(cfg.train.method) << ": " << data.train.size() << " train / " << data.eval.size()
      << " eval examples, " << model.parameter_count() << " parameters\n";

  std::vector<MetricRecord> records;
  long steps = 0;
  if (eval_only) {
    if (checkpoint.empty()) throw Error("--eval-only needs --ckpt");
    load_checkpoint(model, checkpoint);
  } else {
    const fs::path metrics_path = out / "metrics.csv";
    auto flush = [&] { write_metrics_csv(metrics_path.string(), records, model.sites()); };
    const RecordSink sink = [&](const MetricRecord& r) {
      records.push_back(r);
      log << "  step " << r.step << " clean " << r.clean_acc << " pgd " << r.pgd_acc << " align " << r.grad_align
          << " lr " << r.lr << '\n';
      flush();
    };
    save_checkpoint(model, (out / "init.ckpt").string());
    try {
      steps = train(model, data.train, data.eval, cfg.train, eval_settings(cfg), sink).steps;
    } catch (const NonFiniteGradient& e) {
      flush();
      log << "aborted: " << e.what() << '\n';
      json s;
      s["method"] = to_string(cfg.train.method);
      s["aborted"] = true;
      s["nonfinite_step"] = e.step();
      write_json(s, out / "summary.json");
      return kExitNonFinite;
    }
    save_checkpoint(model, (out / "final.ckpt").string());
  }

  json summary = summarize(model, cfg, data, records, steps, log);
  write_json(summary, out / (eval_only ? "eval_summary.json" : "summary.json"));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json timing;
  timing["wall_clock_seconds"] = seconds;
  write_json(timing, out / (eval_only ? "eval_timing.json" : "timing.json"));
  return kExitOk;
}

int run_sweep(const RawConfig& raw, const std::vector<std::pair<std::string, std::string>>& overrides,
              const std::string& param, const std::vector<std::string>& values, unsigned threads, std::ostream& log) {
  if (values.empty()) throw Error("sweep: no values given");
  const ExperimentConfig base = build_config(raw, overrides);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    auto o = overrides;
    o.emplace_back(param, v);
    o.emplace_back("output.dir", (fs::path(base.out_dir) / (param + "=" + v)).string());
    configs.push_back(build_config(raw, o));
  }

  std::vector<int> codes(values.size(), kExitOk);
  std::vector<std::string> errors(values.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      std::ostringstream local;
      try {
        codes[i] = run_experiment(configs[i], local);
      } catch (const std::exception& e) {
        codes[i] = kExitConfig;
        errors[i] = e.what();
      }
      std::lock_guard lock(log_mutex);
      log << "[" << param << "=" << values[i] << "]\n" << local.str();
      if (!errors[i].empty()) log << "  failed: " << errors[i] << '\n';
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(configs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(base.out_dir);
  std::ofstream csv(fs::path(base.out_dir) / "sweep.csv");
  std::vector<std::string> columns;
  std::vector<json> rows(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const fs::path p = fs::path(configs[i].out_dir) / "summary.json";
    if (codes[i] == kExitOk && fs::exists(p)) {
      std::ifstream in(p);
      rows[i] = json::parse(in);
      for (const auto& [k, v] : rows[i].items()) {
        if (v.is_number() && std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
      }
    }
  }
  csv << param << ",status";
  for (const auto& c : columns) csv << ',' << c;
  csv << '\n';
  int worst = kExitOk;
  for (std::size_t i = 0; i < values.size(); ++i) {
    csv << values[i] << ',' << (codes[i] == kExitOk ? "ok" : (codes[i] == kExitNonFinite ? "nonfinite" : "error"));
    for (const auto& c : columns) {
      csv << ',';
      if (rows[i].contains(c) && rows[i][c].is_number()) csv << rows[i][c].dump();
    }
    csv << '\n';
    worst = std::max(worst, codes[i]);
  }
  return worst;
}

int run_landscape(const ExperimentConfig& cfg, const std::string& checkpoint, std::ostream& log) {
  if (checkpoint.empty()) throw Error("landscape needs --ckpt");
  fs::create_directories(cfg.out_dir);
  const Datasets data = load_datasets(cfg);
  Model model = build_model(cfg);
  load_checkpoint(model, checkpoint);
  const LabeledDataset head = data.eval.slice(0, std::min(cfg.eval.landscape_samples, data.eval.size()));
  const LandscapeGrid grid =
      loss_landscape(model, head.xs, head.ys, cfg.eval.epsilon, cfg.eval.landscape_n, mix_seed(cfg.seed, 6));
  const fs::path path = fs::path(cfg.out_dir) / ("landscape_" + std::string(to_string(cfg.train.method)) + ".csv");
  write_landscape_csv(grid, path.string());
  log << "wrote " << path.string() << " (plane residual " << plane_fit_residual(grid) << ")\n";
  return kExitOk;
}

int run_toy_demo(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.data.source != "toy") throw Error("toy-demo needs data.source = toy");
  fs::create_directories(cfg.out_dir);
  const Datasets data = load_datasets(cfg);
  write_toy_csv(data.train, (fs::path(cfg.out_dir) / "toy_data.csv").string());
  json combined;
  combined["seed"] = cfg.seed;
  combined["epsilon"] = cfg.eval.epsilon;
  int code = kExitOk;
  for (Method m : {Method::standard, Method::fgsm_at, Method::slat}) {
    ExperimentConfig c = cfg;
    c.train.method = m;
    c.eval.boundary = true;
    c.out_dir = (fs::path(cfg.out_dir) / to_string(m)).string();
    const int rc = run_experiment(c, log);
    code = std::max(code, rc);
    if (rc != kExitOk) continue;
    std::ifstream in(fs::path(c.out_dir) / "summary.json");
    const json s = json::parse(in);
    json entry;
    entry["boundary_ratio"] = s.value("boundary_ratio", json(nullptr));
    entry["clean_acc"] = s["clean_acc"];
    entry["robust_acc"] = s["pgd" + std::to_string(cfg.eval.pgd_steps) + "_acc"];
    combined[to_string(m)] = entry;
  }
  write_json(combined, fs::path(cfg.out_dir) / "summary.json");
  log << combined.dump(2) << '\n';
  return code;
}

}  // namespace slat
