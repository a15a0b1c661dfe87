#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slat/tensor.hpp"

namespace slat {

/// Examples stacked along the first axis of `xs`.
struct LabeledDataset {
  Tensor xs;
  std::vector<int> ys;
  std::size_t classes = 0;
  double lo = 0.0;
  double hi = 1.0;
  std::string name;

  std::size_t size() const noexcept { return ys.size(); }
  /// Per-example shape (xs without the first axis).
  Shape example_shape() const;
  /// Stacks the given examples into a batch.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  /// Examples [begin, end).
  LabeledDataset slice(std::size_t begin, std::size_t end) const;
};

struct ToySpec {
  double mu_x = 1.0;
  double mu_y = 0.05;
  double sigma_x = 0.5;
  double sigma_y = 0.02;
  std::size_t n_per_class = 500;
  std::uint64_t seed = 0;
};

/// Class 1 from N(mu, diag(sigma^2)), class 0 from N(-mu, diag(sigma^2)),
/// interleaved. The input range is the per-axis bounding box of the samples.
LabeledDataset gen_toy(const ToySpec& spec);

void write_toy_csv(const LabeledDataset& data, const std::string& path);

/// Reads an IDX image/label pair; pixels are scaled to [0, 1].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
/// Writes images (rounded back to bytes) and labels as an IDX pair.
void write_idx(const LabeledDataset& data, const std::string& images_path, const std::string& labels_path);

/// Zero-pads each spatial side of every [C,H,W] example by `pad` and crops
/// back at a random offset, one offset per example.
Tensor augment_pad_crop(const Tensor& batch, std::size_t pad, std::uint64_t seed);
/// Single-example crop at a given offset in [0, 2*pad].
Tensor pad_crop(const Tensor& image, std::size_t pad, std::size_t dy, std::size_t dx);

Tensor rademacher(const Shape& shape, std::uint64_t seed);

}  // namespace slat
