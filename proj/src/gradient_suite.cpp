#include "cormult/gradient_suite.hpp"

#include <cmath>

#include "cormult/features.hpp"
#include "cormult/fusion.hpp"
#include "cormult/mce.hpp"
#include "cormult/nn.hpp"
#include "cormult/ops.hpp"

namespace cormult {

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.normal(0.0, 1.0);
  return t;
}

// sum(w * y) with fixed random weights reaches every output element.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  return ops::sum(ops::mul(y, random_tensor(y.shape(), seed + 1000)));
}

// Softmax ignores a per-query constant, so key-bias gradients are exactly
// zero and finite differences only see rounding noise there.
std::vector<Tensor*> checked(const nn::ParamList& params) {
  std::vector<Tensor*> out;
  for (const auto& p : params) {
    if (p.name.find("k.bias") == std::string::npos) out.push_back(p.tensor);
  }
  return out;
}

}  // namespace

std::vector<GradientCase> primitive_gradient_cases() {
  auto unary = [](std::function<Tensor(const Tensor&)> op, Shape shape, bool positive = false) {
    return [op, shape, positive](std::uint64_t seed) {
      Tensor x = random_tensor(shape, seed);
      if (positive) {
        for (auto& v : x.mutable_data()) v = std::fabs(v) + 0.5;
      }
      return grad_check([&](const Tensor& v) { return weighted_sum(op(v), seed); }, x, kStep, kTol);
    };
  };
  auto binary = [](std::function<Tensor(const Tensor&, const Tensor&)> op, Shape sa, Shape sb,
                   bool b_positive = false) {
    return [op, sa, sb, b_positive](std::uint64_t seed) {
      Tensor a = random_tensor(sa, seed);
      Tensor b = random_tensor(sb, seed + 7);
      if (b_positive) {
        for (auto& v : b.mutable_data()) v = std::fabs(v) + 0.5;
      }
      const std::vector<Tensor*> in{&a, &b};
      return grad_check([&] { return weighted_sum(op(a, b), seed); }, in, kStep, kTol);
    };
  };
  std::vector<GradientCase> cases;
  cases.push_back({"add", binary(ops::add, {3, 4}, {4})});
  cases.push_back({"sub", binary(ops::sub, {2, 1, 4}, {3, 1})});
  cases.push_back({"mul", binary(ops::mul, {3, 4}, {3, 4})});
  cases.push_back({"div", binary(ops::div, {3, 4}, {1, 4}, true)});
  cases.push_back({"scalar_mul", unary([](const Tensor& x) { return ops::scalar_mul(x, -1.7); }, {5})});
  cases.push_back({"add_scalar", unary([](const Tensor& x) { return ops::add_scalar(x, 0.3); }, {5})});
  cases.push_back({"neg", unary(ops::neg, {5})});
  cases.push_back({"relu", unary(ops::relu, {4, 3})});
  cases.push_back({"abs", unary(ops::abs, {4, 3})});
  cases.push_back({"sqrt", unary(ops::sqrt, {6}, true)});
  cases.push_back({"exp", unary(ops::exp, {6})});
  cases.push_back({"log", unary(ops::log, {6}, true)});
  cases.push_back({"square", unary(ops::square, {6})});
  cases.push_back({"sum", unary([](const Tensor& x) { return ops::sum(x); }, {2, 3})});
  cases.push_back({"sum_axis", unary([](const Tensor& x) { return ops::sum(x, 1); }, {2, 3, 4})});
  cases.push_back({"mean", unary([](const Tensor& x) { return ops::mean(x); }, {2, 3})});
  cases.push_back({"mean_axis", unary([](const Tensor& x) { return ops::mean(x, 0); }, {3, 4})});
  cases.push_back({"max_axis", unary([](const Tensor& x) { return ops::max(x, -1); }, {3, 5})});
  cases.push_back({"reshape", unary([](const Tensor& x) { return ops::reshape(x, {6, 2}); }, {3, 4})});
  cases.push_back({"transpose", unary([](const Tensor& x) { return ops::transpose(x, {2, 0, 1}); }, {2, 3, 4})});
  cases.push_back({"transpose_last", unary(ops::transpose_last, {2, 3, 4})});
  cases.push_back(
      {"concat", binary([](const Tensor& a, const Tensor& b) { return ops::concat({a, b}, 1); }, {2, 3}, {2, 2})});
  cases.push_back({"narrow", unary([](const Tensor& x) { return ops::narrow(x, 1, 1, 2); }, {3, 4})});
  cases.push_back({"index_select", unary([](const Tensor& x) {
                     const std::vector<std::size_t> rows{2, 0, 2};
                     return ops::index_select(x, rows);
                   }, {3, 4})});
  cases.push_back({"matmul", binary(ops::matmul, {2, 3, 4}, {4, 5})});
  cases.push_back({"matmul_batched", binary(ops::matmul, {2, 3, 4}, {2, 4, 2})});
  cases.push_back({"softmax", unary([](const Tensor& x) { return ops::softmax(x, -1); }, {3, 5})});
  cases.push_back({"log_softmax", unary([](const Tensor& x) { return ops::log_softmax(x, -1); }, {3, 5})});
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     Tensor x = random_tensor({3, 6}, seed);
                     Tensor g = random_tensor({6}, seed + 1);
                     Tensor b = random_tensor({6}, seed + 2);
                     const std::vector<Tensor*> in{&x, &g, &b};
                     return grad_check([&] { return weighted_sum(ops::layer_norm(x, g, b), seed); }, in, kStep,
                                       kTol);
                   }});
  cases.push_back({"conv1d", binary(ops::conv1d, {2, 5, 3}, {3, 3, 2})});
  cases.push_back({"embedding", [](std::uint64_t seed) {
                     Tensor table = random_tensor({5, 3}, seed);
                     const std::vector<std::size_t> ids{4, 0, 4, 2};
                     const std::vector<Tensor*> in{&table};
                     return grad_check([&] { return weighted_sum(ops::embedding(table, ids, {2, 2}), seed); }, in,
                                       kStep, kTol);
                   }});
  cases.push_back({"pick", unary([](const Tensor& x) {
                     const std::vector<std::size_t> idx{1, 0, 3};
                     return ops::pick(x, idx);
                   }, {3, 4})});
  cases.push_back({"cosine_similarity", binary(ops::cosine_similarity, {3, 6}, {3, 6})});
  return cases;
}

std::vector<GradientCase> module_gradient_cases() {
  std::vector<GradientCase> cases;
  cases.push_back({"encoder_block", [](std::uint64_t seed) {
                     Rng rng(seed);
                     mce::EncoderBlock block(8, 2, rng);
                     Tensor x = random_tensor({2, 4, 8}, seed + 1);
                     nn::ParamList params;
                     block.collect(params, "block");
                     auto inputs = checked(params);
                     inputs.push_back(&x);
                     return grad_check([&] { return weighted_sum(block.forward(x), seed); }, inputs, kStep, kTol);
                   }});
  cases.push_back({"triplet_loss", [](std::uint64_t seed) {
                     Tensor a = random_tensor({4, 6}, seed), p = random_tensor({4, 6}, seed + 1),
                            n = random_tensor({4, 6}, seed + 2);
                     const std::vector<Tensor*> in{&a, &p, &n};
                     // A large margin keeps every hinge active, away from the kink.
                     return grad_check([&] { return mce::triplet_loss(a, p, n, 5.0, mce::Metric::Cosine); }, in,
                                       kStep, kTol);
                   }});
  cases.push_back({"crossmodal", [](std::uint64_t seed) {
                     Rng rng(seed);
                     fusion::CrossmodalTransformer ct(8, 2, 2, rng);
                     Tensor target = random_tensor({2, 3, 8}, seed + 1), source = random_tensor({2, 4, 8}, seed + 2);
                     nn::ParamList params;
                     ct.collect(params, "cross");
                     auto inputs = checked(params);
                     inputs.push_back(&target);
                     inputs.push_back(&source);
                     return grad_check([&] { return weighted_sum(ct.forward(target, source), seed); }, inputs, kStep,
                                       kTol);
                   }});
  cases.push_back({"memory_fuse", [](std::uint64_t seed) {
                     Rng rng(seed);
                     fusion::MemoryTransformer mt(8, 2, 1, rng);
                     Tensor a = random_tensor({2, 3, 4}, seed + 1), b = random_tensor({2, 3, 4}, seed + 2);
                     nn::ParamList params;
                     mt.collect(params, "memory");
                     auto inputs = checked(params);
                     inputs.push_back(&a);
                     inputs.push_back(&b);
                     return grad_check([&] { return weighted_sum(mt.fuse(a, b), seed); }, inputs, kStep, kTol);
                   }});
  cases.push_back({"cormult_toy", [](std::uint64_t seed) {
                     fusion::FusionConfig cfg;
                     cfg.d_f = 8;
                     cfg.heads = 2;
                     const mce::InputDims dims{4, 6, 3};
                     fusion::CorMulT model(cfg, dims, seed);
                     Rng rng(seed + 1);
                     std::vector<Features> fs(2);
                     for (auto& f : fs) {
                       f.audio = random_tensor({4, dims.n_mels}, rng.next_u64());
                       f.frames = random_tensor({3, dims.frame_dim}, rng.next_u64());
                       f.tokens.true_length = 3;
                       f.tokens.ids = {2 + rng.index(4), 2 + rng.index(4), 2 + rng.index(4), 0};
                     }
                     const std::vector<const Features*> ptrs{&fs[0], &fs[1]};
                     const FeatureBatch batch = stack(ptrs);
                     const std::vector<mce::CorrelationCoefficients> cors{{0.3, -0.2, 0.8}, {0.9, 0.1, -0.5}};
                     const std::vector<std::size_t> classes{2, 6};
                     auto loss = [&] {
                       return ops::neg(ops::mean(ops::pick(ops::log_softmax(model.logits(batch, cors), -1), classes)));
                     };
                     return grad_check(loss, checked(model.parameters()), kStep, kTol, 4);
                   }});
  return cases;
}

std::vector<GradientSuiteResult> run_gradient_suite(std::size_t primitive_seeds) {
  std::vector<GradientSuiteResult> out;
  for (const auto& c : primitive_gradient_cases()) {
    for (std::uint64_t s = 0; s < primitive_seeds; ++s) out.push_back({c.name, 100 + s, c.run(100 + s)});
  }
  for (const auto& c : module_gradient_cases()) out.push_back({c.name, 200, c.run(200)});
  return out;
}

}  // namespace cormult
