#include "stdn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace stdn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor value count " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

int Tensor::dim(int axis) const { return shape_[static_cast<std::size_t>(normalize_axis(shape_, axis))]; }

std::size_t Tensor::offset(std::initializer_list<int> index) const {
  if (index.size() != shape_.size()) throw std::out_of_range("index rank mismatch");
  std::size_t off = 0;
  std::size_t i = 0;
  for (int v : index) {
    if (v < 0 || v >= shape_[i]) throw std::out_of_range("index out of range");
    off = off * static_cast<std::size_t>(shape_[i]) + static_cast<std::size_t>(v);
    ++i;
  }
  return off;
}

double& Tensor::at(std::initializer_list<int> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<int> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

int normalize_axis(const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw std::out_of_range("axis out of range for shape " + shape_str(shape));
  return axis;
}

AxisView axis_view(const Shape& shape, int axis) {
  axis = normalize_axis(shape, axis);
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(shape[i]);
  v.len = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= static_cast<std::size_t>(shape[i]);
  return v;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace stdn
