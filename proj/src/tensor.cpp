#include "sclld/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "sclld/error.hpp"

namespace sclld {

std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& dims) {
  std::ostringstream os;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  return os.str();
}

namespace {

void check_extents(const Shape& dims) {
  if (dims.empty()) fail(ErrorKind::ShapeMismatch, "tensor needs at least one dimension");
  for (auto d : dims) {
    if (d == 0) fail(ErrorKind::ShapeMismatch, "non-positive extent in shape " + shape_to_string(dims));
  }
}

}  // namespace

Tensor::Tensor(Shape dims, double fill) : dims_(std::move(dims)) {
  check_extents(dims_);
  data_.assign(shape_size(dims_), fill);
}

Tensor::Tensor(Shape dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  check_extents(dims_);
  if (shape_size(dims_) != data_.size()) {
    fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_to_string(dims_));
  }
}

Tensor Tensor::randn(Shape dims, double stddev, Rng& rng) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : t.data_) v = normal(rng);
  return t;
}

Tensor Tensor::reshaped(Shape dims) const {
  if (shape_size(dims) != size()) {
    fail(ErrorKind::ShapeMismatch, "cannot reshape " + shape_to_string(dims_) + " to " +
                                       shape_to_string(dims));
  }
  return Tensor(std::move(dims), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::ShapeMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::ShapeMismatch, "max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace sclld
