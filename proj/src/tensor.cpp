#include "tidsit/tensor.hpp"

#include <cmath>
#include <string>

#include "tidsit/errors.hpp"

namespace tidsit {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("tensor dimensions must be positive");
  }
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("tensor dimensions must be positive");
  }
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor value count " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();  // size before the move
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(1, 1, {value}); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() requires a scalar tensor, got " +
                     shape_string(*this));
  }
  return data_[0];
}

std::string shape_string(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

}  // namespace tidsit
