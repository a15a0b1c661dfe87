#include "slat/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slat/attacks.hpp"
#include "slat/error.hpp"
#include "slat/rng.hpp"

namespace slat {

Method parse_method(const std::string& name) {
  if (name == "standard") return Method::standard;
  if (name == "fgsm_at" || name == "fgsm") return Method::fgsm_at;
  if (name == "fgsm_rs") return Method::fgsm_rs;
  if (name == "pgd_at" || name == "pgd") return Method::pgd_at;
  if (name == "slat") return Method::slat;
  if (name == "slat_fast_ga") return Method::slat_fast_ga;
  if (name == "fgsm_rs_latent") return Method::fgsm_rs_latent;
  throw Error("unknown training method '" + name + "'");
}

const char* to_string(Method method) {
  switch (method) {
    case Method::standard: return "standard";
    case Method::fgsm_at: return "fgsm_at";
    case Method::fgsm_rs: return "fgsm_rs";
    case Method::pgd_at: return "pgd_at";
    case Method::slat: return "slat";
    case Method::slat_fast_ga: return "slat_fast_ga";
    case Method::fgsm_rs_latent: return "fgsm_rs_latent";
  }
  return "?";
}

void TrainSpec::validate() const {
  if (epochs < 0) throw Error("train: epochs must be >= 0");
  if (batch < 1) throw Error("train: batch must be >= 1");
  if (!(lr_max > 0.0)) throw Error("train: lr_max must be > 0");
  if (!(peak_fraction > 0.0 && peak_fraction < 1.0)) throw Error("train: peak_fraction must be in (0, 1)");
  if (!(epsilon >= 0.0)) throw Error("train: epsilon must be >= 0");
  if (!(lambda_ga >= 0.0)) throw Error("train: lambda_ga must be >= 0");
  if (pgd_steps < 1) throw Error("train: pgd_steps must be >= 1");
}

double cyclic_lr(long step, long total_steps, double lr_max, double peak_fraction) {
  if (total_steps <= 0) return 0.0;
  const double t = static_cast<double>(std::clamp(step, 0L, total_steps));
  const double total = static_cast<double>(total_steps);
  const double peak = peak_fraction * total;
  if (t <= peak) return lr_max * (t / peak);
  return lr_max * ((total - t) / (total - peak));
}

OptimizerState make_optimizer_state(const Model& model) {
  OptimizerState s;
  for (const auto& p : model.params()) s.velocity.emplace_back(p.value.shape());
  return s;
}

void sgd_update(Model& model, std::span<const Tensor> grads, OptimizerState& state, double lr, double momentum,
                double weight_decay, long step) {
  auto& params = model.params();
  if (grads.size() != params.size() || state.velocity.size() != params.size()) {
    throw ShapeMismatch("sgd_update", std::to_string(params.size()) + " tensors", std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw ShapeMismatch("sgd_update " + params[i].name, to_string(params[i].value.shape()),
                          to_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) throw NonFiniteGradient(step);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].value.raw();
    double* v = state.velocity[i].raw();
    const double* g = grads[i].raw();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      v[j] = momentum * v[j] + (g[j] + weight_decay * p[j]);
      p[j] -= lr * v[j];
    }
  }
}

namespace {

// Forward on (x, deltas) with parameter gradients, mean loss, one backward.
StepResult update_grads(const Model& model, const Tensor& x, std::span<const int> y, const Deltas& deltas,
                        const std::optional<InputRange>& clamp) {
  ForwardOptions opts;
  opts.param_grad = true;
  opts.clamp = clamp;
  ForwardResult fw = forward_with_latents(model, x, deltas, opts);
  const NodeId loss = fw.tape.softmax_xent(fw.logits, y);
  const Gradients grads = fw.tape.backward(loss);
  return {fw.tape.value(loss).item(), param_grads(fw, grads)};
}

struct CleanPass {
  ForwardResult fw;
  Gradients grads;
};

CleanPass clean_pass(const Model& model, const Tensor& x, std::span<const int> y) {
  ForwardOptions opts;
  opts.input_grad = true;
  ForwardResult fw = forward_with_latents(model, x, {}, opts);
  const NodeId loss = fw.tape.softmax_xent(fw.logits, y);
  Gradients grads = fw.tape.backward(loss);
  return {std::move(fw), std::move(grads)};
}

}  // namespace

StepResult standard_grads(const Model& model, const Tensor& x, std::span<const int> y) {
  return update_grads(model, x, y, {}, std::nullopt);
}

StepResult fgsm_at_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec) {
  return update_grads(model, fgsm(model, x, y, spec.epsilon, spec.clamp), y, {}, std::nullopt);
}

StepResult fgsm_rs_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                         std::uint64_t seed) {
  if (spec.epsilon == 0.0) return standard_grads(model, x, y);
  const Tensor adv = r_fgsm(model, x, y, spec.epsilon, spec.fgsm_rs_alpha(), spec.clamp, seed);
  return update_grads(model, adv, y, {}, std::nullopt);
}

StepResult pgd_at_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                        std::uint64_t seed) {
  if (spec.epsilon == 0.0) return standard_grads(model, x, y);
  const Tensor adv = pgd(model, x, y, spec.epsilon, spec.pgd_train_alpha(), spec.pgd_steps, 1, spec.clamp, seed);
  return update_grads(model, adv, y, {}, std::nullopt);
}

StepResult slat_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec) {
  const CleanPass clean = clean_pass(model, x, y);
  const Deltas deltas = latent_deltas(model, clean.fw, clean.grads);
  return update_grads(model, x, y, deltas, spec.clamp);
}

StepResult fgsm_rs_latent_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                                std::uint64_t seed) {
  const CleanPass clean = clean_pass(model, x, y);
  Deltas deltas = latent_deltas(model, clean.fw, clean.grads);
  deltas.erase(0);
  const Tensor adv = spec.epsilon == 0.0
                         ? x
                         : r_fgsm(model, x, y, spec.epsilon, spec.fgsm_rs_alpha(), spec.clamp, seed);
  return update_grads(model, adv, y, deltas, std::nullopt);
}

namespace {

struct FastGa {
  ForwardResult fw;
  NodeId adv_loss;
  NodeId total;
  double value;
};

FastGa build_fast_ga(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec) {
  if (!model.twice_differentiable()) {
    throw UnsupportedOps("fast gradient alignment needs a model built from dense and softplus layers only");
  }
  const CleanPass clean = clean_pass(model, x, y);
  const Deltas deltas = latent_deltas(model, clean.fw, clean.grads);
  const Tensor& g_clean = clean.grads.at(clean.fw.input);

  ForwardOptions opts;
  opts.param_grad = true;
  opts.input_grad = true;
  opts.clamp = spec.clamp;
  FastGa r{forward_with_latents(model, x, deltas, opts), {}, {}, 0.0};
  Tape& tape = r.fw.tape;
  r.adv_loss = tape.softmax_xent(r.fw.logits, y);
  const NodeId input = r.fw.input;
  const NodeId g_adv = tape.grad_graph(r.adv_loss, std::span<const NodeId>(&input, 1)).front();
  const NodeId cos = tape.row_cosine(g_adv, g_clean);
  r.total = tape.add(r.adv_loss, tape.scale(cos, -spec.lambda_ga));
  r.value = tape.value(r.adv_loss).item() + spec.lambda_ga * (1.0 - tape.value(cos).item());
  return r;
}

}  // namespace

StepResult fast_ga_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec) {
  FastGa r = build_fast_ga(model, x, y, spec);
  const Gradients grads = r.fw.tape.backward(r.total);
  return {r.value, param_grads(r.fw, grads)};
}

double fast_ga_loss(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec) {
  return build_fast_ga(model, x, y, spec).value;
}

StepResult method_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                        std::uint64_t seed) {
  switch (spec.method) {
    case Method::standard: return standard_grads(model, x, y);
    case Method::fgsm_at: return fgsm_at_grads(model, x, y, spec);
    case Method::fgsm_rs: return fgsm_rs_grads(model, x, y, spec, seed);
    case Method::pgd_at: return pgd_at_grads(model, x, y, spec, seed);
    case Method::slat: return slat_grads(model, x, y, spec);
    case Method::slat_fast_ga: return fast_ga_grads(model, x, y, spec);
    case Method::fgsm_rs_latent: return fgsm_rs_latent_grads(model, x, y, spec, seed);
  }
  throw Error("unknown method");
}

double train_step(Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                  OptimizerState& state, double lr, long step, std::uint64_t seed) {
  StepResult r;
  try {
    r = method_grads(model, x, y, spec, seed);
  } catch (const NonFiniteValue&) {
    throw NonFiniteGradient(step);
  }
  sgd_update(model, r.grads, state, lr, spec.momentum, spec.weight_decay, step);
  return r.loss;
}

namespace {

MetricRecord evaluate(const Model& model, const LabeledDataset& sample, const EvalSettings& eval, long step,
                      double epoch, double lr) {
  MetricRecord rec;
  rec.step = step;
  rec.epoch = epoch;
  rec.lr = lr;
  const Tensor& x = sample.xs;
  const std::span<const int> y(sample.ys);
  rec.clean_acc = accuracy(model, x, y);
  const double alpha = eval.pgd_alpha > 0.0 ? eval.pgd_alpha : 2.5 * eval.epsilon / eval.pgd_steps;
  const PgdResult attack = pgd_detailed(model, x, y, eval.epsilon, alpha, eval.pgd_steps, 1, eval.clamp,
                                        mix_seed(eval.seed, 1));
  const auto fooled = std::count(attack.any_success.begin(), attack.any_success.end(), 1);
  rec.pgd_acc = 1.0 - static_cast<double>(fooled) / static_cast<double>(y.size());
  const auto losses = per_example_xent(predict(model, attack.x_adv), y);
  rec.adv_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  rec.grad_align = grad_alignment(model, x, y, eval.epsilon, mix_seed(eval.seed, 2), eval.clamp);
  rec.l1_grad = feature_grad_l1(model, x, y);
  rec.logits_l2 = logits_l2_distance(model, x, y, eval.epsilon, 1.25 * eval.epsilon, mix_seed(eval.seed, 3),
                                     eval.clamp);
  return rec;
}

}  // namespace

TrainOutcome train(Model& model, const LabeledDataset& train_set, const LabeledDataset& eval_set,
                   const TrainSpec& spec, const EvalSettings& eval, const RecordSink& sink) {
  spec.validate();
  if (train_set.size() == 0) throw Error("train: empty dataset");
  if (eval_set.size() == 0) throw Error("train: empty evaluation set");

  const std::size_t n = train_set.size();
  const long per_epoch = static_cast<long>((n + spec.batch - 1) / spec.batch);
  const long total = per_epoch * spec.epochs;
  const LabeledDataset sample = eval_set.slice(0, std::min(eval.samples, eval_set.size()));

  TrainOutcome out;
  auto record = [&](long step, double lr) {
    MetricRecord rec;
    try {
      rec = evaluate(model, sample, eval, step, static_cast<double>(step) / static_cast<double>(per_epoch), lr);
    } catch (const NonFiniteValue&) {
      throw NonFiniteGradient(step);
    }
    out.records.push_back(rec);
    if (sink) sink(rec);
  };

  OptimizerState state = make_optimizer_state(model);
  Rng shuffle(mix_seed(spec.seed, 0x5eed));
  std::vector<std::size_t> order(n);
  long step = 0;
  double lr = 0.0;
  record(0, 0.0);
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);
    for (std::size_t begin = 0; begin < n; begin += spec.batch) {
      const std::size_t end = std::min(n, begin + spec.batch);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Tensor x = train_set.gather(idx);
      const std::vector<int> y = train_set.gather_labels(idx);
      if (spec.augment_pad > 0 && x.rank() == 4) {
        x = augment_pad_crop(x, spec.augment_pad, mix_seed(spec.seed, 0xa000000ULL + static_cast<std::uint64_t>(step)));
      }
      lr = cyclic_lr(step + 1, total, spec.lr_max, spec.peak_fraction);
      train_step(model, x, y, spec, state, lr, step + 1, mix_seed(spec.seed, static_cast<std::uint64_t>(step) + 1));
      ++step;
      if (spec.checkpoint_every > 0 && step % spec.checkpoint_every == 0 && step != total) record(step, lr);
    }
  }
  if (step > 0) record(step, lr);
  out.steps = step;
  return out;
}

}  // namespace slat
