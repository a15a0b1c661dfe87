#include <algorithm>

#include "slat/kernels.hpp"

namespace slat::kernels::reference {

void matmul_nn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void matmul_nt(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

void matmul_tn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void dense_forward(In x, In w, In bias, Out y, std::size_t batch, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = bias[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[o * in + i];
      y[r * out + o] = s;
    }
}

namespace {
// Signed offset of input coordinate `pos + tap - pad`; returns false when it
// falls in the zero padding.
inline bool tap(std::size_t pos, std::size_t t, std::size_t pad, std::size_t extent, std::size_t& out) {
  const long v = static_cast<long>(pos) + static_cast<long>(t) - static_cast<long>(pad);
  if (v < 0 || v >= static_cast<long>(extent)) return false;
  out = static_cast<std::size_t>(v);
  return true;
}
}  // namespace

void conv2d_forward(In x, In w, In bias, Out y, const ConvDims& d) {
  const std::size_t H = d.height, W = d.width, K = d.ksize, P = d.pad();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          double s = bias[o];
          for (std::size_t ci = 0; ci < d.in_channels; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky) {
              std::size_t yy;
              if (!tap(r, ky, P, H, yy)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                std::size_t xx;
                if (!tap(c, kx, P, W, xx)) continue;
                s += w[((o * d.in_channels + ci) * K + ky) * K + kx] *
                     x[((b * d.in_channels + ci) * H + yy) * W + xx];
              }
            }
          y[((b * d.out_channels + o) * H + r) * W + c] = s;
        }
}

void conv2d_backward_input(In gy, In w, Out gx, const ConvDims& d) {
  const std::size_t H = d.height, W = d.width, K = d.ksize, P = d.pad();
  std::fill(gx.begin(), gx.end(), 0.0);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          const double g = gy[((b * d.out_channels + o) * H + r) * W + c];
          for (std::size_t ci = 0; ci < d.in_channels; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky) {
              std::size_t yy;
              if (!tap(r, ky, P, H, yy)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                std::size_t xx;
                if (!tap(c, kx, P, W, xx)) continue;
                gx[((b * d.in_channels + ci) * H + yy) * W + xx] +=
                    g * w[((o * d.in_channels + ci) * K + ky) * K + kx];
              }
            }
        }
}

void conv2d_backward_params(In gy, In x, Out gw, Out gbias, const ConvDims& d) {
  const std::size_t H = d.height, W = d.width, K = d.ksize, P = d.pad();
  std::fill(gw.begin(), gw.end(), 0.0);
  std::fill(gbias.begin(), gbias.end(), 0.0);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          const double g = gy[((b * d.out_channels + o) * H + r) * W + c];
          gbias[o] += g;
          for (std::size_t ci = 0; ci < d.in_channels; ++ci)
            for (std::size_t ky = 0; ky < K; ++ky) {
              std::size_t yy;
              if (!tap(r, ky, P, H, yy)) continue;
              for (std::size_t kx = 0; kx < K; ++kx) {
                std::size_t xx;
                if (!tap(c, kx, P, W, xx)) continue;
                gw[((o * d.in_channels + ci) * K + ky) * K + kx] +=
                    g * x[((b * d.in_channels + ci) * H + yy) * W + xx];
              }
            }
        }
}

void maxpool2x2_forward(In x, Out y, std::span<std::uint32_t> argmax, const PoolDims& d) {
  const std::size_t OH = d.out_height(), OW = d.out_width();
  for (std::size_t p = 0; p < d.planes; ++p)
    for (std::size_t r = 0; r < OH; ++r)
      for (std::size_t c = 0; c < OW; ++c) {
        std::size_t best = (p * d.height + 2 * r) * d.width + 2 * c;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (p * d.height + 2 * r + dy) * d.width + 2 * c + dx;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (p * OH + r) * OW + c;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
}

void maxpool2x2_backward(In gy, std::span<const std::uint32_t> argmax, Out gx) {
  std::fill(gx.begin(), gx.end(), 0.0);
  for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
}

}  // namespace slat::kernels::reference
