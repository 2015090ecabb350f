#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cormult {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Identifies a node on a particular tape. A reference whose tape has been
// destroyed simply stops matching the active tape and is treated as constant.
struct NodeRef {
  std::uint64_t tape_id = 0;
  std::size_t index = 0;
};

/// Dense row-major array of doubles.
///
/// Storage is shared copy-on-write: copying a Tensor is cheap, and
/// mutable_data() detaches before handing out a writable view. A tensor that
/// was produced on an active tape carries a NodeRef so later ops can chain
/// their gradients onto it.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor eye(std::size_t n);
  static Tensor from(std::initializer_list<double> values);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return storage_->size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const noexcept { return *storage_; }
  std::span<double> mutable_data();
  const std::vector<double>& values() const noexcept { return *storage_; }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  double operator[](std::size_t flat) const { return (*storage_)[flat]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  const std::optional<NodeRef>& node() const noexcept { return node_; }

  // Same values, no tape linkage.
  Tensor detach() const;

  bool same_values(const Tensor& other) const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<std::vector<double>> storage_;
  bool requires_grad_ = false;
  std::optional<NodeRef> node_;

  void attach(NodeRef ref) {
    node_ = ref;
    requires_grad_ = true;
  }
};

}  // namespace cormult
