#include "cormult/tape.hpp"

#include <atomic>

#include "cormult/errors.hpp"

namespace cormult {

namespace {

thread_local Tape* g_active = nullptr;
std::atomic<std::uint64_t> g_next_id{1};

}  // namespace

Tensor Gradients::of(const Tensor& leaf) const {
  if (leaf.node() && leaf.node()->tape_id == tape_id_) {
    auto it = by_node_.find(leaf.node()->index);
    if (it != by_node_.end()) return Tensor(leaf.shape(), it->second);
  }
  return Tensor::zeros(leaf.shape());
}

bool Gradients::has(const Tensor& leaf) const {
  return leaf.node() && leaf.node()->tape_id == tape_id_ &&
         by_node_.count(leaf.node()->index) > 0;
}

Tape::Tape() : id_(g_next_id.fetch_add(1)), previous_(g_active) {
  g_active = this;
}

Tape::~Tape() {
  if (g_active == this) g_active = previous_;
}

Tape* Tape::active() noexcept { return g_active; }

bool Tape::tracks(const Tensor& t) const noexcept {
  return t.node_ && t.node_->tape_id == id_ && !consumed_;
}

void Tape::watch(Tensor& t) {
  if (consumed_) throw Error("tape already consumed");
  Node node;
  node.size = t.size();
  node.leaf = true;
  nodes_.push_back(std::move(node));
  t.attach({id_, nodes_.size() - 1});
}

bool Tape::any_tracked(std::span<const Tensor* const> inputs) {
  Tape* tape = g_active;
  if (!tape) return false;
  for (const Tensor* in : inputs) {
    if (tape->tracks(*in)) return true;
  }
  return false;
}

Tensor Tape::record(Tensor out, std::initializer_list<const Tensor*> inputs,
                    BackwardFn fn) {
  return record(std::move(out),
                std::span<const Tensor* const>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Tensor Tape::record(Tensor out, std::span<const Tensor* const> inputs,
                    BackwardFn fn) {
  Tape* tape = g_active;
  if (!tape || !any_tracked(inputs)) return out;
  Node node;
  node.size = out.size();
  node.fn = std::move(fn);
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.inputs.push_back(tape->tracks(*in)
                              ? static_cast<std::ptrdiff_t>(in->node_->index)
                              : -1);
  }
  tape->nodes_.push_back(std::move(node));
  out.attach({tape->id_, tape->nodes_.size() - 1});
  return out;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw NotScalar("loss of shape " + shape_str(loss.shape()));
  if (consumed_) throw Error("tape already consumed");
  Gradients result;
  result.tape_id_ = id_;
  visited_ = 0;
  if (!tracks(loss)) {
    consumed_ = true;
    return result;
  }

  std::vector<GradBuffer> grads(nodes_.size());
  const std::size_t root = loss.node_->index;
  grads[root].assign(1, 1.0);

  std::vector<GradBuffer*> in_ptrs;
  // Nodes are appended in execution order, so a reverse sweep is a valid
  // topological order.
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads[i].empty()) continue;
    ++visited_;
    if (node.leaf) {
      result.by_node_.emplace(i, std::move(grads[i]));
      continue;
    }
    in_ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto src = node.inputs[k];
      if (src < 0) continue;
      auto& g = grads[static_cast<std::size_t>(src)];
      if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(src)].size, 0.0);
      in_ptrs[k] = &g;
    }
    node.fn(grads[i], in_ptrs);
    GradBuffer().swap(grads[i]);
    node.fn = nullptr;
  }
  consumed_ = true;
  nodes_.clear();
  return result;
}

}  // namespace cormult
