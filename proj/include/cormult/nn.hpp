#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cormult/rng.hpp"
#include "cormult/tape.hpp"
#include "cormult/tensor.hpp"

// Layers composed from cormult::ops. Each layer owns its parameter tensors
// and lists them (with stable names) through collect().
namespace cormult::nn {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<NamedParam>;

std::vector<Tensor*> tensors_of(const ParamList& params);

// Glorot-uniform weight [in, out].
Tensor xavier(std::size_t in, std::size_t out, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix);

  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t d, double eps = 1e-5);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix);

  Tensor gain;
  Tensor bias;
  double eps = 1e-5;
};

// Linear(d -> hidden), ReLU, Linear(hidden -> d).
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix);

  Linear up;
  Linear down;
};

class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  MultiheadAttention(std::size_t d, std::size_t heads, Rng& rng);

  // query[b, lq, d] attends over key_value[b, lk, d]; returns [b, lq, d].
  Tensor forward(const Tensor& query, const Tensor& key_value) const;
  // Softmax weights [b, heads, lq, lk].
  Tensor weights(const Tensor& query, const Tensor& key_value) const;
  void collect(ParamList& out, const std::string& prefix);

  std::size_t heads = 1;
  Linear q, k, v, o;

 private:
  Tensor split_heads(const Tensor& x) const;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(std::size_t vocab, std::size_t d, Rng& rng);

  // ids laid out row-major in `lead`.
  Tensor forward(std::span<const std::size_t> ids, Shape lead) const;
  void collect(ParamList& out, const std::string& prefix);

  Tensor table;  // [vocab, d]
};

// Same-padded temporal convolution with bias.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t k, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix);

  Tensor kernel;  // [k, in, out]
  Tensor bias;    // [out]
};

// Fixed sinusoidal table [len, d]: even columns sin(p / 10000^(2i/d)), odd
// columns the matching cos.
Tensor sinusoidal_table(std::size_t len, std::size_t d);

// Averaging matrix [target, len] that pools contiguous windows of len rows
// into exactly target rows. The last window absorbs the remainder; when
// len < target the last row is repeated.
Tensor window_pool_matrix(std::size_t len, std::size_t target);

class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(ParamList params, Options opt);

  // Watches every parameter on `tape` so a following backward() reaches them.
  void watch(Tape& tape);
  void step(const Gradients& grads);
  std::size_t steps() const noexcept { return t_; }
  const Options& options() const noexcept { return opt_; }

 private:
  ParamList params_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace cormult::nn
