#include "ddunet/tensor.hpp"

#include <cmath>
#include <sstream>

namespace ddunet {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(shape_));
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, double fill) : Tensor(std::move(shape)) {
  this->fill(fill);
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite()) {
    throw ShapeError(context + ": tensor contains non-finite values");
  }
}

}  // namespace ddunet
