#include "sclld/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <vector>

namespace sclld::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Output columns [lo, hi) whose tap kx lands inside a row of width `extent`.
struct TapRange {
  std::size_t lo, hi;
};

TapRange valid_taps(std::size_t k, std::size_t stride, std::size_t extent, std::size_t out) {
  const std::size_t lo = k == 0 ? 1 : 0;
  const std::size_t hi = std::min(out, (extent + 1 - k + stride - 1) / stride);
  return {lo, std::max(lo, hi)};
}

// Per-thread scratch that only grows.
double* scratch(std::size_t n) {
  thread_local std::vector<double> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// Unfolds one image [C][H][W] into a [C*9][out_h*out_w] patch matrix.
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow, s = g.stride;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const double* src = image + ci * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
      const auto rows = valid_taps(ky, s, g.in_h, oh);
      for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
        const auto cols_ok = valid_taps(kx, s, g.in_w, ow);
        double* row = cols + ((ci * kKernelSize + ky) * kKernelSize + kx) * plane;
        std::fill(row, row + rows.lo * ow, 0.0);
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          const double* line = src + (oy * s + ky - 1) * g.in_w + kx - 1;
          double* dst = row + oy * ow;
          std::fill(dst, dst + cols_ok.lo, 0.0);
          if (s == 1) {
            std::copy(line + cols_ok.lo, line + cols_ok.hi, dst + cols_ok.lo);
          } else {
            for (std::size_t ox = cols_ok.lo; ox < cols_ok.hi; ++ox) dst[ox] = line[ox * s];
          }
          std::fill(dst + cols_ok.hi, dst + ow, 0.0);
        }
        std::fill(row + rows.hi * ow, row + plane, 0.0);
      }
    }
  }
}

// Adjoint of im2col: scatters patch columns back into an image (accumulating).
void col2im(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow, s = g.stride;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    double* dst = image + ci * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
      const auto rows = valid_taps(ky, s, g.in_h, oh);
      for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
        const auto cols_ok = valid_taps(kx, s, g.in_w, ow);
        const double* row = cols + ((ci * kKernelSize + ky) * kKernelSize + kx) * plane;
        for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
          double* line = dst + (oy * s + ky - 1) * g.in_w + kx - 1;
          const double* src = row + oy * ow;
          for (std::size_t ox = cols_ok.lo; ox < cols_ok.hi; ++ox) line[ox * s] += src[ox];
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t k = g.patch();
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_channels * plane;
  const ConstMap w(weight.data(), g.out_channels, k);
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < batch; ++b) {
    double* cols = scratch(k * plane);
    im2col(g, input.data() + b * in_stride, cols);
    MutMap out(output.data() + b * out_stride, g.out_channels, plane);
    out.noalias() = w * ConstMap(cols, k, plane);
    if (!bias.empty()) {
      for (std::size_t co = 0; co < g.out_channels; ++co) out.row(co).array() += bias[co];
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t k = g.patch();
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_channels * plane;
  const ConstMap w(weight.data(), g.out_channels, k);
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < batch; ++b) {
    MutMap cols(scratch(k * plane), k, plane);
    cols.noalias() =
        w.transpose() * ConstMap(grad_output.data() + b * out_stride, g.out_channels, plane);
    col2im(g, cols.data(), grad_input.data() + b * in_stride);
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t plane = g.out_h() * g.out_w();
  const std::size_t k = g.patch();
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_channels * plane;
  const std::size_t wsize = g.weight_size();
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);

  // Per-sample partials, summed afterwards in sample order.
  thread_local std::vector<double> partial_w_buf, partial_b_buf;
  std::vector<double>& partial_w = partial_w_buf;
  std::vector<double>& partial_b = partial_b_buf;
  partial_w.resize(g.batch * wsize);
  partial_b.resize(grad_bias.empty() ? 0 : g.batch * g.out_channels);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < batch; ++b) {
    double* cols = scratch(k * plane);
    im2col(g, input.data() + b * in_stride, cols);
    const ConstMap go(grad_output.data() + b * out_stride, g.out_channels, plane);
    MutMap(partial_w.data() + b * wsize, g.out_channels, k).noalias() =
        go * ConstMap(cols, k, plane).transpose();
    if (!partial_b.empty()) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += go(co, p);
        partial_b[b * g.out_channels + co] = s;
      }
    }
  }

  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* src = partial_w.data() + b * wsize;
    for (std::size_t i = 0; i < wsize; ++i) grad_weight[i] += src[i];
  }
  if (!grad_bias.empty()) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        grad_bias[co] += partial_b[b * g.out_channels + co];
      }
    }
  }
}

void dense_forward(const DenseGeometry& g, std::span<const double> input,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> output) {
  const ConstMap x(input.data(), g.batch, g.in_features);
  const ConstMap w(weight.data(), g.out_features, g.in_features);
  MutMap out(output.data(), g.batch, g.out_features);
  out.noalias() = x * w.transpose();
  if (!bias.empty()) {
    const Eigen::Map<const Eigen::RowVectorXd> b(bias.data(), g.out_features);
    out.rowwise() += b;
  }
}

void dense_backward_input(const DenseGeometry& g, std::span<const double> grad_output,
                          std::span<const double> weight, std::span<double> grad_input) {
  const ConstMap go(grad_output.data(), g.batch, g.out_features);
  const ConstMap w(weight.data(), g.out_features, g.in_features);
  MutMap(grad_input.data(), g.batch, g.in_features).noalias() += go * w;
}

void dense_backward_weight(const DenseGeometry& g, std::span<const double> input,
                           std::span<const double> grad_output, std::span<double> grad_weight,
                           std::span<double> grad_bias) {
  const ConstMap x(input.data(), g.batch, g.in_features);
  const ConstMap go(grad_output.data(), g.batch, g.out_features);
  MutMap(grad_weight.data(), g.out_features, g.in_features).noalias() += go.transpose() * x;
  if (!grad_bias.empty()) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t o = 0; o < g.out_features; ++o) grad_bias[o] += go(b, o);
    }
  }
}

}  // namespace sclld::kernels
