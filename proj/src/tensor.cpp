#include "slat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "slat/error.hpp"

namespace slat {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeMismatch("tensor", to_string(shape_) + " (" + std::to_string(shape_size(shape_)) + " elements)",
                        std::to_string(data_.size()) + " elements");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeMismatch("item", "[1]", to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) throw ShapeMismatch("reshape", to_string(shape_), to_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {
void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeMismatch(op, to_string(a.shape()), to_string(b.shape()));
}
}  // namespace

Tensor sign(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = sign(t[i]);
  return out;
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor operator*(double s, const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = s * t[i];
  return out;
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same("dot", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l1_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += std::abs(v);
  return s;
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = std::clamp(t[i], lo, hi);
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || end > t.dim(0) || begin > end) {
    throw ShapeMismatch("slice_rows", "rows within " + to_string(t.shape()),
                        "[" + std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = end - begin;
  return Tensor(shape, std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                                           t.data().begin() + static_cast<std::ptrdiff_t>(end * row)));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 && bb == 0.0) return 1.0;
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

}  // namespace slat
