#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cormult/features.hpp"
#include "cormult/mce.hpp"
#include "cormult/modality.hpp"
#include "cormult/nn.hpp"
#include "cormult/param_file.hpp"
#include "cormult/tensor.hpp"

// Prediction-stage network: projections, directional crossmodal
// transformers, correlation weighting, memory transformers and the head.
namespace cormult::fusion {

inline constexpr std::size_t kClasses = 7;

enum class CoefficientMode { Affine01, Raw, Clamp0 };

CoefficientMode parse_mode(std::string_view s);  // BadConfig
std::string_view name_of(CoefficientMode m);

struct FusionConfig {
  std::size_t d_f = 40;
  std::size_t crossmodal_depth = 2;
  std::size_t heads = 4;
  std::size_t memory_depth = 1;
  std::size_t classes = kClasses;
  CoefficientMode mode = CoefficientMode::Affine01;
  bool positional = true;  // sinusoidal signal after projection
  double lr = 1e-3;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
};

void validate(const FusionConfig& cfg);  // BadConfig

// Scalar multiplier applied to a crossmodal stream for coefficient `cor`.
double coefficient_weight(double cor, CoefficientMode mode);
// h[b, len, d] scaled per sample by coefficient_weight(cor[i]).
Tensor weight_by_correlation(const Tensor& h, std::span<const double> cor, CoefficientMode mode);

// y = target + MHA(LN(target), LN(source)); out = y + FF(LN(y)).
class CrossmodalLayer {
 public:
  CrossmodalLayer() = default;
  CrossmodalLayer(std::size_t d, std::size_t heads, Rng& rng);
  Tensor forward(const Tensor& target, const Tensor& source) const;
  void collect(nn::ParamList& out, const std::string& prefix);

  nn::LayerNorm ln_target, ln_source, ln_ff;
  nn::MultiheadAttention attention;
  nn::FeedForward ff;
};

class CrossmodalTransformer {
 public:
  CrossmodalTransformer() = default;
  CrossmodalTransformer(std::size_t d, std::size_t heads, std::size_t depth, Rng& rng);
  // The source stays fixed across layers; the output has the target's shape.
  Tensor forward(const Tensor& target, const Tensor& source) const;
  void collect(nn::ParamList& out, const std::string& prefix);

  std::vector<CrossmodalLayer> layers;
};

// Pre-norm self-attention layers over the feature-wise concatenation of two
// streams, mean-pooled over time: [b, len, d] x2 -> [b, 2d].
class MemoryTransformer {
 public:
  MemoryTransformer() = default;
  MemoryTransformer(std::size_t d, std::size_t heads, std::size_t depth, Rng& rng);
  Tensor fuse(const Tensor& a, const Tensor& b) const;
  void collect(nn::ParamList& out, const std::string& prefix);

  struct Layer {
    nn::LayerNorm ln_attn, ln_ff;
    nn::MultiheadAttention attention;
    nn::FeedForward ff;
  };
  std::vector<Layer> layers;
};

struct Prediction {
  std::array<double, kClasses> probs{};
  int label_class = 0;  // argmax index - 3, ties to the lowest index
  double scalar_score = 0.0;
  std::size_t index() const noexcept { return static_cast<std::size_t>(label_class + 3); }
};

Prediction make_prediction(std::span<const double> probs);

class CorMulT {
 public:
  CorMulT() = default;  // empty; predict() throws NotTrained
  CorMulT(const FusionConfig& cfg, const mce::InputDims& dims, std::uint64_t seed);

  const FusionConfig& config() const noexcept { return cfg_; }
  const mce::InputDims& dims() const noexcept { return dims_; }
  bool empty() const noexcept { return cross_.empty(); }
  bool trained() const noexcept { return trained_; }
  void set_trained(bool v) noexcept { trained_ = v; }

  // Conv projection (plus positional signal when enabled): [b, len, d_f].
  Tensor project(Modality m, const FeatureBatch& batch) const;
  const CrossmodalTransformer& crossmodal(Modality source, Modality target) const;
  const MemoryTransformer& memory(Modality target) const;

  // [b, 7] logits; cors has one entry per clip.
  Tensor logits(const FeatureBatch& batch, std::span<const mce::CorrelationCoefficients> cors) const;
  std::vector<Prediction> predict(const FeatureBatch& batch,
                                  std::span<const mce::CorrelationCoefficients> cors) const;

  nn::ParamList parameters();
  std::vector<ParamRecord> records() const;
  std::string encode_bytes() const;
  void save(const std::filesystem::path& path) const;
  static CorMulT load(const std::filesystem::path& path);
  static CorMulT from_records(const std::vector<ParamRecord>& records);

 private:
  FusionConfig cfg_;
  mce::InputDims dims_;
  nn::Embedding embed_;
  std::array<nn::Conv1d, 3> proj_;
  std::vector<CrossmodalTransformer> cross_;  // index source * 3 + target
  std::array<MemoryTransformer, 3> memory_;
  nn::Linear head_;
  bool trained_ = false;
};

// Features, coefficients and class indices of a labeled split.
struct LabeledSet {
  std::vector<Features> features;
  std::vector<mce::CorrelationCoefficients> cors;
  std::vector<std::size_t> classes;
};

// Coefficients of every clip under a frozen MCE, or all ones when
// `identity` (the no-correlation ablation).
std::vector<mce::CorrelationCoefficients> coefficients(const mce::Mce& mce, std::span<const Features> features,
                                                       bool identity);

struct TrainHistory {
  std::vector<double> train_loss, val_loss, val_acc7;
};

struct TrainResult {
  CorMulT model;
  TrainHistory history;
};

TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set, const FusionConfig& cfg,
                  const mce::InputDims& dims, std::uint64_t seed);

// Mean cross-entropy and predictions over a labeled set, in batches.
struct SetEvaluation {
  double loss = 0.0;
  std::vector<Prediction> predictions;
};
SetEvaluation evaluate_set(const CorMulT& model, const LabeledSet& set, std::size_t batch_size = 64);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);

}  // namespace cormult::fusion
