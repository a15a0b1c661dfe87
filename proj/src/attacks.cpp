#include "slat/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "slat/error.hpp"
#include "slat/rng.hpp"

namespace slat {

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "r_fgsm" || name == "fgsm_rs") return AttackKind::r_fgsm;
  if (name == "pgd") return AttackKind::pgd;
  throw Error("unknown attack kind '" + name + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0)) throw Error("attack: epsilon must be >= 0");
  if (restarts < 1) throw Error("attack: restarts must be >= 1");
  if (kind == AttackKind::pgd && (!(alpha > 0.0) || steps < 1)) {
    throw Error("attack: pgd needs alpha > 0 and steps >= 1");
  }
  if (kind == AttackKind::r_fgsm && !(alpha > 0.0)) throw Error("attack: r_fgsm needs alpha > 0");
}

Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> y) {
  ForwardOptions opts;
  opts.input_grad = true;
  ForwardResult fw = forward_with_latents(model, x, {}, opts);
  const NodeId loss = fw.tape.softmax_xent(fw.logits, y);
  return fw.tape.backward(loss).at(fw.input);
}

std::vector<double> per_example_xent(const Tensor& logits, std::span<const int> y) {
  const std::size_t rows = y.size();
  const std::size_t C = logits.size() / std::max<std::size_t>(rows, 1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.raw() + r * C;
    const double m = *std::max_element(z, z + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(z[c] - m);
    out[r] = std::log(s) - (z[y[r]] - m);
  }
  return out;
}

std::vector<char> correct_predictions(const Tensor& logits, std::span<const int> y) {
  const std::size_t rows = y.size();
  const std::size_t C = logits.size() / std::max<std::size_t>(rows, 1);
  std::vector<char> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.raw() + r * C;
    const double target = z[y[r]];
    bool ok = true;
    for (std::size_t c = 0; c < C && ok; ++c) {
      if (static_cast<int>(c) != y[r] && z[c] >= target) ok = false;
    }
    out[r] = ok;
  }
  return out;
}

namespace {

Tensor maybe_clamp(Tensor t, const std::optional<InputRange>& range) {
  return range ? clamp(t, range->lo, range->hi) : t;
}

// x + clip(delta, -eps, eps), then the range clamp.
Tensor project(const Tensor& x, const Tensor& delta, double epsilon, const std::optional<InputRange>& range) {
  return maybe_clamp(x + clamp(delta, -epsilon, epsilon), range);
}

Tensor uniform_ball(const Shape& shape, double epsilon, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = epsilon * rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
            const std::optional<InputRange>& clamp) {
  if (!(epsilon >= 0.0)) throw Error("fgsm: epsilon must be >= 0");
  if (epsilon == 0.0) return x;
  const Tensor g = input_gradient(model, x, y);
  return maybe_clamp(x + epsilon * sign(g), clamp);
}

Tensor r_fgsm(const Model& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha,
              const std::optional<InputRange>& clamp, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw Error("r_fgsm: alpha must be > 0");
  if (epsilon == 0.0) return x;
  const Tensor start = project(x, uniform_ball(x.shape(), epsilon, seed), epsilon, clamp);
  const Tensor g = input_gradient(model, start, y);
  return project(x, (start - x) + alpha * sign(g), epsilon, clamp);
}

PgdResult pgd_detailed(const Model& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha,
                       int steps, int restarts, const std::optional<InputRange>& clamp, std::uint64_t seed) {
  if (steps < 1 || restarts < 1) throw Error("pgd: steps and restarts must be >= 1");
  if (!(alpha > 0.0)) throw Error("pgd: alpha must be > 0");
  const std::size_t rows = y.size();
  const std::size_t width = x.size() / std::max<std::size_t>(rows, 1);
  PgdResult result{x, std::vector<char>(rows, 0)};
  std::vector<double> best_loss(rows, -INFINITY);

  for (int r = 0; r < restarts; ++r) {
    Tensor adv = project(x, uniform_ball(x.shape(), epsilon, mix_seed(seed, static_cast<std::uint64_t>(r))),
                         epsilon, clamp);
    for (int s = 0; s < steps; ++s) {
      const Tensor g = input_gradient(model, adv, y);
      adv = project(x, (adv - x) + alpha * sign(g), epsilon, clamp);
    }
    const Tensor logits = predict(model, adv);
    const auto losses = per_example_xent(logits, y);
    const auto correct = correct_predictions(logits, y);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!correct[i]) result.any_success[i] = 1;
      if (losses[i] > best_loss[i]) {
        best_loss[i] = losses[i];
        std::copy_n(adv.raw() + i * width, width, result.x_adv.raw() + i * width);
      }
    }
  }
  return result;
}

Tensor pgd(const Model& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha, int steps,
           int restarts, const std::optional<InputRange>& clamp, std::uint64_t seed) {
  return pgd_detailed(model, x, y, epsilon, alpha, steps, restarts, clamp, seed).x_adv;
}

Tensor run_attack(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::fgsm:
      return fgsm(model, x, y, spec.epsilon, spec.clamp);
    case AttackKind::r_fgsm:
      return r_fgsm(model, x, y, spec.epsilon, spec.alpha, spec.clamp, spec.seed);
    case AttackKind::pgd:
      return pgd(model, x, y, spec.epsilon, spec.alpha, spec.steps, spec.restarts, spec.clamp, spec.seed);
  }
  throw Error("unknown attack kind");
}

Deltas latent_deltas(const Model& model, const ForwardResult& clean, const Gradients& grads) {
  Deltas out;
  for (int k : model.sites()) {
    const NodeId h = clean.tape.site(k);
    const double eta = model.eta(k);
    out[k] = grads.has(h) ? eta * sign(grads.at(h)) : Tensor(clean.tape.value(h).shape());
  }
  return out;
}

Deltas latent_deltas(const Model& model, const Tensor& x, std::span<const int> y) {
  ForwardOptions opts;
  opts.input_grad = true;
  ForwardResult fw = forward_with_latents(model, x, {}, opts);
  const NodeId loss = fw.tape.softmax_xent(fw.logits, y);
  return latent_deltas(model, fw, fw.tape.backward(loss));
}

}  // namespace slat
