#include "cormult/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "cormult/errors.hpp"

namespace cormult {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
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

Tensor::Tensor() : storage_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      storage_(std::make_shared<std::vector<double>>(shape_size(shape_), fill)) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeMismatch("zero extent in " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)),
      storage_(std::make_shared<std::vector<double>>(std::move(data))) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeMismatch("zero extent in " + shape_str(shape_));
  }
  if (shape_size(shape_) != storage_->size()) {
    throw ShapeMismatch("shape " + shape_str(shape_) + " does not hold " +
                        std::to_string(storage_->size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, value); }

Tensor Tensor::eye(std::size_t n) {
  Tensor t({n, n});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " +
                        shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(a)];
}

std::span<double> Tensor::mutable_data() {
  if (storage_.use_count() > 1) {
    storage_ = std::make_shared<std::vector<double>>(*storage_);
  }
  // Writing through a tracked tensor would invalidate what the tape saved.
  node_.reset();
  requires_grad_ = false;
  return *storage_;
}

double Tensor::item() const {
  if (size() != 1) throw NotScalar("tensor of shape " + shape_str(shape_));
  return (*storage_)[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw ShapeMismatch("index rank does not match " + shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i >= shape_[a]) throw ShapeMismatch("index out of bounds");
    flat = flat * shape_[a] + i;
    ++a;
  }
  return (*storage_)[flat];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.storage_ = storage_;
  return t;
}

bool Tensor::same_values(const Tensor& other) const {
  return shape_ == other.shape_ && *storage_ == *other.storage_;
}

}  // namespace cormult
