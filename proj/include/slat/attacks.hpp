#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slat/models.hpp"

namespace slat {

enum class AttackKind { fgsm, r_fgsm, pgd };

AttackKind parse_attack_kind(const std::string& name);

struct AttackSpec {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 10;
  int restarts = 1;
  std::optional<InputRange> clamp;
  std::uint64_t seed = 0;

  /// Throws slat::Error when the invariants do not hold.
  void validate() const;
};

/// ∇_x of the mean cross entropy, one row per example.
Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> y);

/// Per-example cross entropy of a logits batch.
std::vector<double> per_example_xent(const Tensor& logits, std::span<const int> y);

/// 1 where the label's logit is the strict maximum of its row; ties count
/// as wrong.
std::vector<char> correct_predictions(const Tensor& logits, std::span<const int> y);

/// x + epsilon * sign(∇_x L), clamped to the range when given.
Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
            const std::optional<InputRange>& clamp = std::nullopt);

/// Random start in the ball, then one clipped step of size alpha.
Tensor r_fgsm(const Model& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha,
              const std::optional<InputRange>& clamp, std::uint64_t seed);

/// Result of a multi-restart attack. `any_success[i]` is set when at least
/// one restart left example i misclassified (argmax ties count as wrong).
struct PgdResult {
  Tensor x_adv;
  std::vector<char> any_success;
};

/// Iterated sign steps with ball projection; per example the restart with the
/// highest final loss is kept (lowest restart index on ties). The random
/// start of every restart is epsilon * u with u ~ U[-1,1]^d drawn from
/// (seed, restart), so balls of different radius share directions.
Tensor pgd(const Model& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha, int steps,
           int restarts, const std::optional<InputRange>& clamp, std::uint64_t seed);
PgdResult pgd_detailed(const Model& model, const Tensor& x, std::span<const int> y, double epsilon, double alpha,
                       int steps, int restarts, const std::optional<InputRange>& clamp, std::uint64_t seed);

Tensor run_attack(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);

/// delta_k = eta_k * sign(∇_{h_k} L) for every k in K, from one clean
/// forward and one backward sweep.
Deltas latent_deltas(const Model& model, const Tensor& x, std::span<const int> y);
/// Same, from gradients already computed on a clean forward.
Deltas latent_deltas(const Model& model, const ForwardResult& clean, const Gradients& grads);

}  // namespace slat
