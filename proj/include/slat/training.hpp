#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slat/data.hpp"
#include "slat/metrics.hpp"
#include "slat/models.hpp"

namespace slat {

enum class Method { standard, fgsm_at, fgsm_rs, pgd_at, slat, slat_fast_ga, fgsm_rs_latent };

Method parse_method(const std::string& name);
const char* to_string(Method method);

struct TrainSpec {
  Method method = Method::slat;
  int epochs = 30;
  std::size_t batch = 128;
  double lr_max = 0.2;
  double peak_fraction = 12.0 / 30.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double epsilon = 8.0 / 255.0;
  /// Step size of FGSM-RS; <= 0 means 1.25 * epsilon.
  double rs_alpha = 0.0;
  int pgd_steps = 7;
  /// Step size of PGD training; <= 0 means 2 * epsilon / 10.
  double pgd_alpha = 0.0;
  double lambda_ga = 0.0;
  std::optional<InputRange> clamp = InputRange{};
  std::size_t augment_pad = 0;
  std::uint64_t seed = 0;
  /// Steps between metric records; 0 records only the first and last step.
  long checkpoint_every = 0;

  double fgsm_rs_alpha() const { return rs_alpha > 0.0 ? rs_alpha : 1.25 * epsilon; }
  double pgd_train_alpha() const { return pgd_alpha > 0.0 ? pgd_alpha : 2.0 * epsilon / 10.0; }
  void validate() const;
};

/// Piecewise-linear one-cycle schedule: 0 -> lr_max over the first
/// peak_fraction of the steps, then back to 0 at total_steps.
double cyclic_lr(long step, long total_steps, double lr_max, double peak_fraction = 12.0 / 30.0);

struct OptimizerState {
  std::vector<Tensor> velocity;
};

OptimizerState make_optimizer_state(const Model& model);

/// v <- m v + (g + wd p); p <- p - lr v. Throws NonFiniteGradient(step) when a
/// gradient entry is not finite; parameters are untouched in that case.
void sgd_update(Model& model, std::span<const Tensor> grads, OptimizerState& state, double lr, double momentum,
                double weight_decay, long step = 0);

/// Loss and parameter gradients of one training step, before the update.
struct StepResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

/// Per-method gradient computation. `seed` drives random starts.
StepResult standard_grads(const Model& model, const Tensor& x, std::span<const int> y);
StepResult fgsm_at_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec);
StepResult fgsm_rs_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                         std::uint64_t seed);
StepResult pgd_at_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                        std::uint64_t seed);
/// Clean forward+backward for all latent gradients, one perturbed
/// forward+backward for the update.
StepResult slat_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec);
/// Latent deltas from the clean sample, input from a random start.
StepResult fgsm_rs_latent_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                                std::uint64_t seed);
/// SLAT loss plus lambda (1 - cos(g_clean, g_adv)); g_clean is a constant.
StepResult fast_ga_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec);

/// Value of the fast gradient-alignment objective at (x, y).
double fast_ga_loss(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec);

StepResult method_grads(const Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                        std::uint64_t seed);

/// One step of the spec's method followed by the SGD update; returns the loss.
double train_step(Model& model, const Tensor& x, std::span<const int> y, const TrainSpec& spec,
                  OptimizerState& state, double lr, long step = 0, std::uint64_t seed = 0);

/// What the training loop measures at each record.
struct EvalSettings {
  /// Examples scored at every record (taken from the head of the eval set).
  std::size_t samples = 128;
  double epsilon = 8.0 / 255.0;
  int pgd_steps = 20;
  /// <= 0 means 2.5 * epsilon / pgd_steps.
  double pgd_alpha = 0.0;
  std::uint64_t seed = 1234;
  std::optional<InputRange> clamp = InputRange{};
};

using RecordSink = std::function<void(const MetricRecord&)>;

struct TrainOutcome {
  std::vector<MetricRecord> records;
  long steps = 0;
};

/// Seeded Fisher-Yates shuffle per epoch, one step per batch (the last
/// partial batch included), records at step 0, every checkpoint_every steps
/// and after the final step. A non-finite gradient or forward value throws
/// NonFiniteGradient; every record made before it has already reached the
/// sink.
TrainOutcome train(Model& model, const LabeledDataset& train_set, const LabeledDataset& eval_set,
                   const TrainSpec& spec, const EvalSettings& eval, const RecordSink& sink = {});

}  // namespace slat
