#pragma once

#include "safeadapt/common.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace safeadapt::diff {

using Shape = std::vector<std::size_t>;
/// Aligned to Eigen's maximum so kernels take the same code path on every buffer (bit-stable results).
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 (scalar), 1 or 2.
class Tensor {
 public:
  Tensor() : shape_{}, values_(1, 0.0) {}
  Tensor(Shape shape, std::vector<double> values);

  static Tensor from_storage(Shape shape, Storage values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_matrix(const Matrix& m);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  /// Rank-2 view dimensions; rank 1 is a single row, rank 0 is 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double item() const;

  Eigen::Map<const Matrix> as_matrix() const {
    return {values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  Eigen::Map<Matrix> as_matrix() {
    return {values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  Storage values_;
};

}  // namespace safeadapt::diff
