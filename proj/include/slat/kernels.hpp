#pragma once

// Numeric kernels behind the tape ops. Two implementations share each
// signature: `slat::kernels` (im2col + OpenMP, used by the library) and
// `slat::kernels::reference` (plain serial loops, kept for tests and the
// benchmark). Outputs are overwritten, never accumulated into.
//
// Parallel kernels partition work so that every output element is reduced
// in a fixed order; results do not depend on the thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace slat::kernels {

using In = std::span<const double>;
using Out = std::span<double>;

/// Square-kernel, stride-1, zero "same" padding convolution geometry.
struct ConvDims {
  std::size_t batch;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t height;
  std::size_t width;
  std::size_t ksize;  // odd

  std::size_t pad() const { return ksize / 2; }
  std::size_t plane() const { return height * width; }
  std::size_t patch() const { return in_channels * ksize * ksize; }
};

struct PoolDims {
  std::size_t planes;  // batch * channels
  std::size_t height;
  std::size_t width;
  std::size_t out_height() const { return height / 2; }
  std::size_t out_width() const { return width / 2; }
};

// c[m x n] = a[m x k] * b[k x n]
void matmul_nn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n);
// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n);

// y[batch x out] = x[batch x in] * w[out x in]^T + bias
void dense_forward(In x, In w, In bias, Out y, std::size_t batch, std::size_t in, std::size_t out);

void conv2d_forward(In x, In w, In bias, Out y, const ConvDims& d);
void conv2d_backward_input(In gy, In w, Out gx, const ConvDims& d);
void conv2d_backward_params(In gy, In x, Out gw, Out gbias, const ConvDims& d);

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped. `argmax`
/// receives the flat input index of the winner (first maximum on ties).
void maxpool2x2_forward(In x, Out y, std::span<std::uint32_t> argmax, const PoolDims& d);
void maxpool2x2_backward(In gy, std::span<const std::uint32_t> argmax, Out gx);

namespace reference {

void matmul_nn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n);
void dense_forward(In x, In w, In bias, Out y, std::size_t batch, std::size_t in, std::size_t out);
void conv2d_forward(In x, In w, In bias, Out y, const ConvDims& d);
void conv2d_backward_input(In gy, In w, Out gx, const ConvDims& d);
void conv2d_backward_params(In gy, In x, Out gw, Out gbias, const ConvDims& d);
void maxpool2x2_forward(In x, Out y, std::span<std::uint32_t> argmax, const PoolDims& d);
void maxpool2x2_backward(In gy, std::span<const std::uint32_t> argmax, Out gx);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace slat::kernels
