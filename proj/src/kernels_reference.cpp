#include <algorithm>

#include "sclld/kernels.hpp"

namespace sclld::kernels::reference {

namespace {

// Input coordinate read by output coordinate `o` at kernel tap `k`, or -1 when
// the tap lands in the zero padding.
long tap(std::size_t o, std::size_t k, std::size_t stride, std::size_t extent) {
  const long i = static_cast<long>(o * stride + k) - 1;
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double s = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
              const long iy = tap(oy, ky, g.stride, g.in_h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
                const long ix = tap(ox, kx, g.stride, g.in_w);
                if (ix < 0) continue;
                s += weight[((co * g.in_channels + ci) * kKernelSize + ky) * kKernelSize + kx] *
                     input[((b * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
            }
          }
          output[((b * g.out_channels + co) * oh + oy) * ow + ox] = s;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = grad_output[((b * g.out_channels + co) * oh + oy) * ow + ox];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
              const long iy = tap(oy, ky, g.stride, g.in_h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
                const long ix = tap(ox, kx, g.stride, g.in_w);
                if (ix < 0) continue;
                grad_input[((b * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] +=
                    weight[((co * g.in_channels + ci) * kKernelSize + ky) * kKernelSize + kx] * go;
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = grad_output[((b * g.out_channels + co) * oh + oy) * ow + ox];
          if (!grad_bias.empty()) grad_bias[co] += go;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < kKernelSize; ++ky) {
              const long iy = tap(oy, ky, g.stride, g.in_h);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < kKernelSize; ++kx) {
                const long ix = tap(ox, kx, g.stride, g.in_w);
                if (ix < 0) continue;
                grad_weight[((co * g.in_channels + ci) * kKernelSize + ky) * kKernelSize + kx] +=
                    go * input[((b * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
              }
            }
          }
        }
      }
    }
  }
}

void dense_forward(const DenseGeometry& g, std::span<const double> input,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> output) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_features; ++o) {
      double s = bias.empty() ? 0.0 : bias[o];
      for (std::size_t i = 0; i < g.in_features; ++i) {
        s += weight[o * g.in_features + i] * input[b * g.in_features + i];
      }
      output[b * g.out_features + o] = s;
    }
  }
}

void dense_backward_input(const DenseGeometry& g, std::span<const double> grad_output,
                          std::span<const double> weight, std::span<double> grad_input) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t i = 0; i < g.in_features; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < g.out_features; ++o) {
        s += grad_output[b * g.out_features + o] * weight[o * g.in_features + i];
      }
      grad_input[b * g.in_features + i] += s;
    }
  }
}

void dense_backward_weight(const DenseGeometry& g, std::span<const double> input,
                           std::span<const double> grad_output, std::span<double> grad_weight,
                           std::span<double> grad_bias) {
  for (std::size_t o = 0; o < g.out_features; ++o) {
    double sb = 0.0;
    for (std::size_t i = 0; i < g.in_features; ++i) {
      double s = 0.0;
      for (std::size_t b = 0; b < g.batch; ++b) {
        s += grad_output[b * g.out_features + o] * input[b * g.in_features + i];
      }
      grad_weight[o * g.in_features + i] += s;
    }
    for (std::size_t b = 0; b < g.batch; ++b) sb += grad_output[b * g.out_features + o];
    if (!grad_bias.empty()) grad_bias[o] += sb;
  }
}

}  // namespace sclld::kernels::reference
