#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace slat {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  /// Throws ShapeMismatch when the data length disagrees with the shape.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }
  static Tensor vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a one-element tensor.
  double item() const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Three-valued sign: sign(0) == 0.
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor sign(const Tensor& t);
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& t);
Tensor& operator+=(Tensor& a, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);
double l1_norm(const Tensor& t);
double l2_norm(const Tensor& t);
double linf_norm(const Tensor& t);

/// Elementwise clamp into [lo, hi].
Tensor clamp(const Tensor& t, double lo, double hi);

/// Rows [begin, end) of a tensor whose first axis indexes examples.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Cosine similarity; 1 when both vectors are zero, 0 when exactly one is.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace slat
