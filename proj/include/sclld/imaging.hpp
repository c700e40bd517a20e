#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sclld/tensor.hpp"

namespace sclld {

inline constexpr std::size_t kImageSide = 100;

// Single-channel image, row-major, real-valued intensities.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), pixels(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Binary PGM ("P5") with maxval <= 255.
GrayImage read_pgm(std::string_view bytes);
GrayImage read_pgm_file(const std::filesystem::path& path);

enum class PixelScale {
  Byte,  // pixels already in [0, 255]
  Unit,  // pixels in [0, 1]; multiplied by 255 before quantizing
};

// Canonical "P5\n<w> <h>\n255\n" header followed by raw bytes.
std::string write_pgm(const GrayImage& image, PixelScale scale = PixelScale::Byte);
void write_pgm_file(const std::filesystem::path& path, const GrayImage& image,
                    PixelScale scale = PixelScale::Byte);

// Corner-aligned bilinear resampling: output corners sample input corners.
GrayImage resize_bilinear(const GrayImage& image, std::size_t out_w, std::size_t out_h);

// [0, 255] -> [0, 1] by division.
GrayImage normalize_unit(const GrayImage& image);

// Gradient magnitude sqrt(Gx^2 + Gy^2) with 3x3 Sobel kernels and replicate
// padding, before any rescaling.
GrayImage sobel_gradient(const GrayImage& image);

// sobel_gradient divided by its global maximum; a flat image stays zero.
GrayImage sobel_magnitude(const GrayImage& image);

GrayImage transpose(const GrayImage& image);

// Names of the preprocessing stages in the order they ran.
struct PipelineTrace {
  std::vector<std::string> steps;
};

// Edge detection (optional), then resize to 100x100, then normalization.
// The result has every pixel in [0, 1].
GrayImage preprocess(const GrayImage& raw, bool use_sobel, PipelineTrace* trace = nullptr);

// [1, H, W] tensor view of an image and back.
Tensor to_tensor(const GrayImage& image);
GrayImage from_tensor(const Tensor& t);

}  // namespace sclld
