#include "hybridflow/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "hybridflow/errors.hpp"

namespace hybridflow::grad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor({values.size(), 1}, std::vector<double>(values.begin(), values.end()));
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ShapeError("tensor: item() on shape " + shape_string(shape_));
  }
  return values_[0];
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  const std::size_t c = cols();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= this->rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(values_.data() + rows[i] * c, c, out.values_.data() + i * c);
  }
  return out;
}

Tensor Tensor::slice_cols(std::size_t begin, std::size_t end) const {
  if (begin > end || end > cols()) throw ShapeError("slice_cols: bad range on " + shape_string(shape_));
  const std::size_t r = rows(), c = cols(), w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(values_.data() + i * c + begin, w, out.values_.data() + i * w);
  }
  return out;
}

Tensor Tensor::reshape(Shape shape) const {
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("hconcat: row mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = a(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b(i, j);
  }
  return out;
}

Tensor vconcat(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("vconcat: column mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return Tensor({a.rows() + b.rows(), a.cols()}, std::move(v));
}

}  // namespace hybridflow::grad
