#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "cormult/tensor.hpp"

namespace cormult {

using GradBuffer = std::vector<double>;

// Receives the gradient of the op output and accumulates into the buffers of
// its inputs. A null entry means that input needs no gradient.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<GradBuffer* const> grad_in)>;

class Gradients {
 public:
  // Gradient for a watched tensor; zeros of the right shape when the loss
  // does not depend on it.
  Tensor of(const Tensor& leaf) const;
  bool has(const Tensor& leaf) const;

 private:
  friend class Tape;
  std::uint64_t tape_id_ = 0;
  std::unordered_map<std::size_t, GradBuffer> by_node_;
};

/// Records differentiable ops for one reverse sweep.
///
/// Constructing a Tape makes it the active tape of the calling thread until
/// it is destroyed; ops run while no tape is active record nothing. Tapes
/// nest, the innermost wins. A tape is single-use: backward() consumes it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept;

  // Turns `t` into a leaf of this tape so its gradient can be queried.
  void watch(Tensor& t);

  Gradients backward(const Tensor& loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }
  // Number of nodes whose backward ran during the last sweep.
  std::size_t visited() const noexcept { return visited_; }
  bool consumed() const noexcept { return consumed_; }

  // Used by op implementations. Attaches `out` to the active tape when any
  // input is tracked there; otherwise returns it untouched.
  static Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs,
                       BackwardFn fn);
  static Tensor record(Tensor out, std::span<const Tensor* const> inputs,
                       BackwardFn fn);

  static bool any_tracked(std::span<const Tensor* const> inputs);

 private:
  struct Node {
    std::vector<std::ptrdiff_t> inputs;  // -1 for untracked inputs
    std::size_t size = 0;
    BackwardFn fn;  // empty for leaves
    bool leaf = false;
  };

  bool tracks(const Tensor& t) const noexcept;

  std::uint64_t id_;
  Tape* previous_;
  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
  bool consumed_ = false;
};

}  // namespace cormult
