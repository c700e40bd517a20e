#include "sclld/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sclld/error.hpp"

namespace sclld {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t next_number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > (1u << 24)) fail(ErrorKind::Format, std::string("PGM ") + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) fail(ErrorKind::Format, std::string("PGM header: missing ") + what);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail(ErrorKind::Format, "PGM header: truncated before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

GrayImage read_pgm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') fail(ErrorKind::Format, "not a PGM file");
  if (bytes[1] != '5') fail(ErrorKind::Format, "unsupported PGM variant");
  HeaderReader header(bytes);
  const std::size_t width = header.next_number("width");
  const std::size_t height = header.next_number("height");
  const std::size_t maxval = header.next_number("maxval");
  if (width == 0 || height == 0) fail(ErrorKind::Format, "PGM image has zero extent");
  if (maxval == 0 || maxval > 255) fail(ErrorKind::Format, "PGM maxval must be in 1..255");
  const std::size_t start = header.raster_start();
  if (bytes.size() < start + width * height) fail(ErrorKind::Format, "PGM raster truncated");

  GrayImage img(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[start + i]));
  }
  return img;
}

GrayImage read_pgm_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_pgm(bytes);
}

std::string write_pgm(const GrayImage& image, PixelScale scale) {
  if (image.width == 0 || image.height == 0 || image.pixels.size() != image.width * image.height) {
    fail(ErrorKind::InvalidArgument, "write_pgm: malformed image");
  }
  std::ostringstream os;
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + image.pixels.size());
  const double factor = scale == PixelScale::Unit ? 255.0 : 1.0;
  for (double v : image.pixels) {
    if (!std::isfinite(v)) fail(ErrorKind::Numerical, "write_pgm: non-finite pixel");
    const double q = std::round(v * factor);
    if (q < 0.0 || q > 255.0) fail(ErrorKind::InvalidArgument, "write_pgm: pixel outside [0,255]");
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

void write_pgm_file(const std::filesystem::path& path, const GrayImage& image, PixelScale scale) {
  const std::string bytes = write_pgm(image, scale);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

GrayImage resize_bilinear(const GrayImage& image, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) fail(ErrorKind::InvalidArgument, "resize: zero-sized target");
  if (image.width == 0 || image.height == 0) fail(ErrorKind::InvalidArgument, "resize: empty source");
  GrayImage out(out_w, out_h);
  auto source_coord = [](std::size_t o, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1) return 0.5 * static_cast<double>(in_n - 1);
    return static_cast<double>(o) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, out_h, image.height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, out_w, image.width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      if (fx == 0.0 && fy == 0.0) {
        out.at(x, y) = image.at(x0, y0);
        continue;
      }
      const double top = image.at(x0, y0) * (1.0 - fx) + image.at(x1, y0) * fx;
      const double bottom = image.at(x0, y1) * (1.0 - fx) + image.at(x1, y1) * fx;
      out.at(x, y) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

GrayImage normalize_unit(const GrayImage& image) {
  GrayImage out = image;
  for (auto& v : out.pixels) {
    if (!(v >= 0.0 && v <= 255.0)) fail(ErrorKind::InvalidArgument, "normalize: pixel outside [0,255]");
    v /= 255.0;
  }
  return out;
}

GrayImage sobel_gradient(const GrayImage& image) {
  if (image.width < 3 || image.height < 3) {
    fail(ErrorKind::InvalidArgument, "sobel: image smaller than the 3x3 kernel");
  }
  const auto w = static_cast<long>(image.width);
  const auto h = static_cast<long>(image.height);
  auto px = [&](long x, long y) {
    x = std::clamp(x, 0L, w - 1);
    y = std::clamp(y, 0L, h - 1);
    return image.pixels[static_cast<std::size_t>(y * w + x)];
  };
  GrayImage out(image.width, image.height);
#pragma omp parallel for schedule(static)
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
      out.pixels[static_cast<std::size_t>(y * w + x)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

GrayImage sobel_magnitude(const GrayImage& image) {
  GrayImage out = sobel_gradient(image);
  const double peak = *std::max_element(out.pixels.begin(), out.pixels.end());
  if (peak > 0.0) {
    for (auto& v : out.pixels) v /= peak;
  }
  return out;
}

GrayImage transpose(const GrayImage& image) {
  GrayImage out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) out.at(y, x) = image.at(x, y);
  }
  return out;
}

GrayImage preprocess(const GrayImage& raw, bool use_sobel, PipelineTrace* trace) {
  auto note = [trace](const char* step) {
    if (trace != nullptr) trace->steps.emplace_back(step);
  };
  GrayImage img = raw;
  if (use_sobel) {
    img = sobel_magnitude(img);
    for (auto& v : img.pixels) v *= 255.0;
    note("sobel");
  }
  img = resize_bilinear(img, kImageSide, kImageSide);
  note("resize");
  img = normalize_unit(img);
  note("normalize");
  return img;
}

Tensor to_tensor(const GrayImage& image) {
  return Tensor({1, image.height, image.width}, image.pixels);
}

GrayImage from_tensor(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 1) {
    fail(ErrorKind::ShapeMismatch, "expected a [1,H,W] tensor, got " + shape_to_string(t.dims()));
  }
  GrayImage img(t.dim(2), t.dim(1));
  img.pixels = t.values();
  return img;
}

}  // namespace sclld
