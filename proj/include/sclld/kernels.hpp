#pragma once

// Numeric kernels behind the differentiable ops.
//
// Two implementations share every signature:
//   sclld::kernels             im2col + GEMM, OpenMP-parallel over the batch
//   sclld::kernels::reference  serial nested loops, kept as the test oracle
//
// The parallel path reduces per-sample partial sums in sample order, so the
// result is bit-identical for any thread count.
//
// Layouts are row-major: images [batch][channels][h][w], conv kernels
// [out][in][3][3], dense weights [out][in]. Backward kernels add into their
// outputs.

#include <cstddef>
#include <span>

namespace sclld::kernels {

inline constexpr std::size_t kKernelSize = 3;

// 3x3 convolution, one pixel of zero padding on each side, stride 1 or 2.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;

  std::size_t out_h() const { return (in_h + stride - 1) / stride; }
  std::size_t out_w() const { return (in_w + stride - 1) / stride; }
  std::size_t patch() const { return in_channels * kKernelSize * kKernelSize; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * patch(); }
};

// Fully connected layer: out[b] = W * in[b] + bias.
struct DenseGeometry {
  std::size_t batch = 1;
  std::size_t in_features = 1;
  std::size_t out_features = 1;
};

// `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
// `grad_bias` may be empty.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);

void dense_forward(const DenseGeometry& g, std::span<const double> input,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> output);
void dense_backward_input(const DenseGeometry& g, std::span<const double> grad_output,
                          std::span<const double> weight, std::span<double> grad_input);
void dense_backward_weight(const DenseGeometry& g, std::span<const double> input,
                           std::span<const double> grad_output, std::span<double> grad_weight,
                           std::span<double> grad_bias);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);

void dense_forward(const DenseGeometry& g, std::span<const double> input,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> output);
void dense_backward_input(const DenseGeometry& g, std::span<const double> grad_output,
                          std::span<const double> weight, std::span<double> grad_input);
void dense_backward_weight(const DenseGeometry& g, std::span<const double> input,
                           std::span<const double> grad_output, std::span<double> grad_weight,
                           std::span<double> grad_bias);

}  // namespace reference

}  // namespace sclld::kernels
