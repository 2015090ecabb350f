#include "cormult/nn.hpp"

#include <cmath>

#include "cormult/errors.hpp"
#include "cormult/ops.hpp"

namespace cormult::nn {

std::vector<Tensor*> tensors_of(const ParamList& params) {
  std::vector<Tensor*> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w({in, out});
  for (auto& x : w.mutable_data()) x = rng.uniform(-a, a);
  return w;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(xavier(in, out, rng)), bias(Tensor::zeros({out})) {}

Tensor Linear::forward(const Tensor& x) const {
  return ops::add(ops::matmul(x, weight), bias);
}

void Linear::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

LayerNorm::LayerNorm(std::size_t d, double e)
    : gain(Tensor::ones({d})), bias(Tensor::zeros({d})), eps(e) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".gain", &gain});
  out.push_back({prefix + ".bias", &bias});
}

FeedForward::FeedForward(std::size_t d, std::size_t hidden, Rng& rng)
    : up(d, hidden, rng), down(hidden, d, rng) {}

Tensor FeedForward::forward(const Tensor& x) const {
  return down.forward(ops::relu(up.forward(x)));
}

void FeedForward::collect(ParamList& out, const std::string& prefix) {
  up.collect(out, prefix + ".up");
  down.collect(out, prefix + ".down");
}

MultiheadAttention::MultiheadAttention(std::size_t d, std::size_t h, Rng& rng)
    : heads(h), q(d, d, rng), k(d, d, rng), v(d, d, rng), o(d, d, rng) {
  if (h == 0 || d % h != 0) {
    throw ShapeMismatch("model dim " + std::to_string(d) + " not divisible by " +
                        std::to_string(h) + " heads");
  }
}

Tensor MultiheadAttention::split_heads(const Tensor& x) const {
  const std::size_t b = x.dim(0), len = x.dim(1), d = x.dim(2);
  return ops::transpose(ops::reshape(x, {b, len, heads, d / heads}), {0, 2, 1, 3});
}

Tensor MultiheadAttention::weights(const Tensor& query, const Tensor& key_value) const {
  if (query.rank() != 3 || key_value.rank() != 3 || query.dim(0) != key_value.dim(0) ||
      query.dim(2) != key_value.dim(2)) {
    throw ShapeMismatch("attention inputs " + shape_str(query.shape()) + " / " +
                        shape_str(key_value.shape()));
  }
  const std::size_t dh = query.dim(2) / heads;
  const Tensor qh = split_heads(q.forward(query));
  const Tensor kh = split_heads(k.forward(key_value));
  const Tensor scores = ops::scalar_mul(ops::matmul(qh, ops::transpose_last(kh)),
                                        1.0 / std::sqrt(static_cast<double>(dh)));
  return ops::softmax(scores, -1);
}

Tensor MultiheadAttention::forward(const Tensor& query, const Tensor& key_value) const {
  const std::size_t b = query.dim(0), lq = query.dim(1), d = query.dim(2);
  const Tensor attn = weights(query, key_value);
  const Tensor vh = split_heads(v.forward(key_value));
  const Tensor ctx = ops::transpose(ops::matmul(attn, vh), {0, 2, 1, 3});
  return o.forward(ops::reshape(ctx, {b, lq, d}));
}

void MultiheadAttention::collect(ParamList& out, const std::string& prefix) {
  q.collect(out, prefix + ".q");
  k.collect(out, prefix + ".k");
  v.collect(out, prefix + ".v");
  o.collect(out, prefix + ".o");
}

Embedding::Embedding(std::size_t vocab, std::size_t d, Rng& rng) : table({vocab, d}) {
  for (auto& x : table.mutable_data()) x = rng.normal(0.0, 1.0);
}

Tensor Embedding::forward(std::span<const std::size_t> ids, Shape lead) const {
  return ops::embedding(table, ids, std::move(lead));
}

void Embedding::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".table", &table});
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t k, Rng& rng)
    : kernel({k, in, out}), bias(Tensor::zeros({out})) {
  const double a = std::sqrt(6.0 / static_cast<double>(k * in + out));
  for (auto& x : kernel.mutable_data()) x = rng.uniform(-a, a);
}

Tensor Conv1d::forward(const Tensor& x) const {
  return ops::add(ops::conv1d(x, kernel), bias);
}

void Conv1d::collect(ParamList& out, const std::string& prefix) {
  out.push_back({prefix + ".kernel", &kernel});
  out.push_back({prefix + ".bias", &bias});
}

Tensor sinusoidal_table(std::size_t len, std::size_t d) {
  Tensor pe({len, d});
  auto p = pe.mutable_data();
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t j = 0; j < d; ++j) {
      const double rate =
          std::pow(10000.0, static_cast<double>(j - j % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      p[pos * d + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Tensor window_pool_matrix(std::size_t len, std::size_t target) {
  if (len == 0 || target == 0) throw ShapeMismatch("window pooling of empty extent");
  Tensor m({target, len});
  auto p = m.mutable_data();
  if (len < target) {
    for (std::size_t j = 0; j < target; ++j) p[j * len + std::min(j, len - 1)] = 1.0;
    return m;
  }
  const std::size_t w = len / target;
  for (std::size_t j = 0; j < target; ++j) {
    const std::size_t lo = j * w;
    const std::size_t hi = (j + 1 == target) ? len : lo + w;
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) p[j * len + i] = inv;
  }
  return m;
}

Adam::Adam(ParamList params, Options opt) : params_(std::move(params)), opt_(opt) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor->size(), 0.0);
    v_.emplace_back(p.tensor->size(), 0.0);
  }
}

void Adam::watch(Tape& tape) {
  for (auto& p : params_) tape.watch(*p.tensor);
}

void Adam::step(const Gradients& grads) {
  ++t_;
  const double b1t = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double b2t = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k].tensor;
    const Tensor g = grads.of(p);
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      const double mhat = m[i] / b1t;
      const double vhat = v[i] / b2t;
      w[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
  }
}

}  // namespace cormult::nn
