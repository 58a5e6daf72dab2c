#include "safeadapt/diffcore/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace safeadapt::diff {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (shape_.size() > 2) throw ShapeError("tensor rank " + std::to_string(shape_.size()) + " unsupported");
  if (element_count(shape_) != values_.size()) {
    throw ShapeError("tensor shape " + to_string(shape_) + " does not match " + std::to_string(values_.size()) +
                     " values");
  }
}

Tensor Tensor::from_storage(Shape shape, Storage values) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.values_ = std::move(values);
  if (t.shape_.size() > 2 || element_count(t.shape_) != t.values_.size())
    throw ShapeError("tensor shape " + to_string(t.shape_) + " does not match storage");
  return t;
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = element_count(shape);
  return from_storage(std::move(shape), Storage(n, value));
}

Tensor Tensor::scalar(double value) { return from_storage(Shape{}, Storage{value}); }

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t = zeros({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.as_matrix() = m;
  return t;
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return values_[0];
}

bool Tensor::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace safeadapt::diff
