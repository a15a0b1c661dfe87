#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slat/attacks.hpp"
#include "slat/data.hpp"
#include "slat/models.hpp"

namespace slat {

struct MetricRecord {
  long step = 0;
  double epoch = 0.0;
  double clean_acc = 0.0;
  double pgd_acc = 0.0;
  double adv_loss = 0.0;
  double grad_align = 0.0;
  std::map<int, double> l1_grad;
  double logits_l2 = 0.0;
  double lr = 0.0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

/// Header row and one line per record; doubles are written with 17
/// significant digits so reading back is exact.
void write_metrics_csv(std::ostream& out, std::span<const MetricRecord> records, std::span<const int> sites);
void write_metrics_csv(const std::string& path, std::span<const MetricRecord> records, std::span<const int> sites);
std::vector<MetricRecord> read_metrics_csv(std::istream& in);
std::vector<MetricRecord> read_metrics_csv(const std::string& path);

/// Fraction of rows whose label logit is the strict maximum.
double accuracy(const Model& model, const Tensor& x, std::span<const int> y);
double accuracy(const Model& model, const LabeledDataset& data, std::size_t batch = 256);

/// Mean over rows of cos(∇_x L(x), ∇_x L(x + gamma)), gamma ~ U[-eps, eps]^d.
double grad_alignment(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
                      std::uint64_t seed, const std::optional<InputRange>& clamp = std::nullopt);

/// Mean over examples of ‖∇_{h_k} L‖₁ at the clean input, for every k in K.
std::map<int, double> feature_grad_l1(const Model& model, const Tensor& x, std::span<const int> y);

/// |L(h_k + e) - L(h_k) - <∇_{h_k} L, e>| with the perturbation e applied at
/// site k (mean loss over the batch).
double linear_approx_error(const Model& model, const Tensor& x, std::span<const int> y, int site,
                           const Tensor& perturbation);

struct LandscapeGrid {
  std::vector<double> a;       // adversarial direction coefficients
  std::vector<double> b;       // Rademacher direction coefficients
  std::vector<double> values;  // values[i * b.size() + j] = L(x + a_i s + b_j r)

  double at(std::size_t i, std::size_t j) const { return values[i * b.size() + j]; }
};

/// Mean loss on x + a sign(∇_x L) + b r over a, b in linspace(0, eps, n).
LandscapeGrid loss_landscape(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
                             std::size_t n, std::uint64_t seed);
void write_landscape_csv(const LandscapeGrid& grid, const std::string& path);
/// Least-squares plane z = c0 + c1 a + c2 b over the grid; returns
/// ‖residual‖ / ‖z - mean(z)‖ (0 for a flat grid).
double plane_fit_residual(const LandscapeGrid& grid);

/// Fraction of examples that stay correctly classified under the attack.
/// For PGD an example counts only if no restart fools it.
double robust_accuracy(const Model& model, const LabeledDataset& data, const AttackSpec& spec,
                       std::size_t batch = 256);
double robust_accuracy(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);

/// Mean over rows of ‖f(fgsm(x)) - f(r_fgsm(x))‖₂.
double logits_l2_distance(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
                          double alpha, std::uint64_t seed, const std::optional<InputRange>& clamp = std::nullopt);

struct OverfitDetector {
  long window = 100;
  double pgd_drop = 0.3;
  double clean_tolerance = 0.05;
};

/// Earliest record step at which pgd_acc is more than pgd_drop below some
/// record at most `window` steps earlier while clean_acc is at most
/// clean_tolerance below that same record.
std::optional<long> detect_catastrophic_overfitting(std::span<const MetricRecord> records,
                                                    const OverfitDetector& detector = {});

struct BoundaryProbe {
  double x_lo = -1.0, x_hi = 1.0;
  double y_lo = -1.0, y_hi = 1.0;
  std::size_t n = 401;
};

/// Probe window covering |mu| + 3 sigma on each axis of the toy task.
BoundaryProbe toy_probe(const ToySpec& spec, std::size_t n = 401);

/// Locates zero crossings of logit[1] - logit[0] along grid rows and columns,
/// fits a line through them by total least squares and returns
/// |normal_y| / |normal_x| capped at 1e6. Throws DegenerateBoundary when the
/// grid has no sign change.
double boundary_nonrobust_ratio(const Model& model, const BoundaryProbe& probe);

}  // namespace slat
