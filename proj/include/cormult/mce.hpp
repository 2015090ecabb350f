#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cormult/features.hpp"
#include "cormult/modality.hpp"
#include "cormult/nn.hpp"
#include "cormult/param_file.hpp"
#include "cormult/sampling.hpp"
#include "cormult/tensor.hpp"

namespace cormult::mce {

enum class Metric { Euclidean, Manhattan, Chebyshev, Cosine, Mahalanobis };

Metric parse_metric(std::string_view s);  // BadConfig
std::string_view name_of(Metric m);

struct MceConfig {
  std::size_t d = 64;
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t t = 64;
  std::size_t o = 200;
  double margin = 1.0;
  Metric metric = Metric::Cosine;
  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
};

void validate(const MceConfig& cfg);  // BadConfig

// Input extents the modality transforms are built for.
struct InputDims {
  std::size_t n_mels = 32;
  std::size_t vocab = 2;
  std::size_t frame_dim = 64;
  bool operator==(const InputDims&) const = default;
};

// Symmetric positive-definite covariance, diagonal or full.
class Covariance {
 public:
  static Covariance identity(std::size_t n);
  static Covariance diagonal(std::vector<double> variances);  // NotSPD unless all > 0
  static Covariance full(const Tensor& c);                    // NotSPD
  // Per-dimension variance of the rows of x[n, o], plus `ridge`.
  static Covariance from_rows(const Tensor& x, double ridge = 1e-6);

  std::size_t dim() const noexcept { return n_; }
  bool is_diagonal() const noexcept { return full_inverse_.empty(); }
  const std::vector<double>& inverse_diagonal() const noexcept { return inv_diag_; }
  // Inverse as a [dim, dim] tensor.
  Tensor inverse() const;
  // Variances on the diagonal of C.
  std::vector<double> variances() const;

 private:
  std::size_t n_ = 0;
  std::vector<double> inv_diag_;
  std::vector<double> full_inverse_;  // row-major, empty when diagonal
  std::vector<double> diag_;
};

// Cosine returns similarity; every other metric returns a distance.
// Mahalanobis requires `cov`.
double distance(std::span<const double> u, std::span<const double> v, Metric metric,
                const Covariance* cov = nullptr);
// Row-wise over u[n, o] and v[n, o]; result [n].
Tensor distance(const Tensor& u, const Tensor& v, Metric metric, const Covariance* cov = nullptr);

// Triplet distance: 1 - cosine for the cosine metric, otherwise distance().
Tensor triplet_distance(const Tensor& u, const Tensor& v, Metric metric, const Covariance* cov = nullptr);

// Correlation of joint features a[t, o] (or [b, t, o]) and b of the same
// shape, pooled over t. Distances map to 1 / (1 + d).
double correlation(const Tensor& a, const Tensor& b, Metric metric, const Covariance* cov = nullptr);
Tensor correlation_rows(const Tensor& a, const Tensor& b, Metric metric, const Covariance* cov = nullptr);

// Mean hinge max(0, dist(a,p) - dist(a,n) + margin) over the rows of
// pooled vectors [n, o], or joint features [n, t, o] pooled over t.
Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin,
                    Metric metric, const Covariance* cov = nullptr);

// Batch-averaged hinge of every triplet with one anchor and partner modality.
struct DirectedLoss {
  Modality anchor;
  Modality partner;
  Tensor value;  // scalar batch-averaged hinge
};

// LOSS_M is the sum of the two terms anchored on M; the total is the mean
// of the three. Throws EmptyBatch with no terms and BadConfig unless every
// anchor has both partners.
struct LossBreakdown {
  std::array<Tensor, 3> per_modality;
  Tensor total;
};
LossBreakdown mce_loss(std::span<const DirectedLoss> terms);

Tensor positional_encoding(const Tensor& x);

// X1 = LN(X), X2 = MHA(X1, X1), X3 = LN(X1 + X2), out = X3 + FF(X3).
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(std::size_t d, std::size_t heads, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(nn::ParamList& out, const std::string& prefix);

  nn::LayerNorm ln1, ln2;
  nn::MultiheadAttention attention;
  nn::FeedForward ff;
};

struct CorrelationCoefficients {
  double cor_ta = 0.0;
  double cor_tv = 0.0;
  double cor_av = 0.0;
  double of(Modality a, Modality b) const;
};

class Mce {
 public:
  Mce() = default;  // empty; evaluate() throws NotPretrained
  Mce(const MceConfig& cfg, const InputDims& dims, std::uint64_t seed);

  const MceConfig& config() const noexcept { return cfg_; }
  const InputDims& dims() const noexcept { return dims_; }
  bool empty() const noexcept { return branches_.empty(); }
  bool pretrained() const noexcept { return pretrained_; }
  void set_pretrained(bool v) noexcept { pretrained_ = v; }

  // [b, len, d] after the input projection and positional encoding.
  Tensor transform(Modality m, const FeatureBatch& batch) const;
  Tensor encode(Modality m, const Tensor& x) const;
  // Temporal pooling len -> t, then the modality's d -> o map: [b, t, o].
  Tensor project_joint(Modality m, const Tensor& encoded) const;
  Tensor joint(Modality m, const FeatureBatch& batch) const;
  // joint() mean-pooled over t: [b, o].
  Tensor pooled(Modality m, const FeatureBatch& batch) const;

  std::vector<CorrelationCoefficients> evaluate(const FeatureBatch& batch) const;
  CorrelationCoefficients evaluate(const Features& f) const;

  nn::ParamList parameters();
  std::vector<ParamRecord> records() const;
  void save(const std::filesystem::path& path) const;
  static Mce load(const std::filesystem::path& path);
  static Mce from_records(const std::vector<ParamRecord>& records);
  std::string encode_bytes() const;

  // Covariance used for Mahalanobis scoring, fixed after pre-training.
  std::optional<Covariance> covariance;

 private:
  struct Branch {
    nn::Linear input;       // audio and vision
    nn::Embedding embed;    // text
    std::vector<EncoderBlock> blocks;
    nn::Linear out;
  };

  MceConfig cfg_;
  InputDims dims_;
  std::vector<Branch> branches_;  // indexed by modality
  bool pretrained_ = false;
};

struct PretrainOptions {
  sampling::Strategy strategy = sampling::Strategy::D;
  sampling::StrategyParams strategy_params;
  FeatureConfig features;
  std::uint64_t seed = 0;
  // Rebuild the Mahalanobis covariance from each batch's positives.
  bool batch_covariance = true;
};

struct PretrainResult {
  Mce model;
  // loss[0] is at initialization; loss[e] after epoch e, all on one fixed
  // monitor set of training triplets.
  std::vector<double> loss;
  // Mean optimized batch loss of each epoch; train_loss[0] is NaN.
  std::vector<double> train_loss;
};

PretrainResult pretrain(std::span<const sampling::Clip> clips, const MceConfig& cfg, const InputDims& dims,
                        const PretrainOptions& opt);

void write_loss_csv(const std::filesystem::path& path, const PretrainResult& r);

// Negatives of one partner modality for a batch of b clips. Row i of the
// negative matrix is positive row rows[i] when rows[i] < b (a strategy-A
// donor), otherwise computed[rows[i] - b].
struct NegativeSet {
  std::vector<Features> computed;
  std::vector<std::size_t> rows;
};

// Fixed triplets over a clip list, used for the monitored loss curve.
struct TripletSet {
  std::vector<std::vector<std::size_t>> batches;  // clip indices
  std::vector<sampling::TripletBatch> triplets;
  std::vector<std::array<NegativeSet, 3>> negatives;  // per batch, per partner modality
};
TripletSet build_triplet_set(std::span<const sampling::Clip> clips, std::size_t batch_size, const PretrainOptions& opt, Rng& rng);
double triplet_set_loss(const Mce& model, std::span<const Features> features, const TripletSet& set);

// Coefficients of aligned pairs and of strategy-A negatives: for every
// clip and modality pair, the second modality is swapped with that of a
// uniformly drawn different clip. `metric` overrides the model's metric.
// Entries are ordered by clip, then by pair (T,A), (T,V), (A,V).
struct PairScores {
  std::vector<double> aligned;
  std::vector<double> swapped;
  std::vector<std::size_t> donors;  // clip supplying the swapped modality
};
PairScores pair_scores(const Mce& model, std::span<const Features> features, std::uint64_t seed,
                       std::optional<Metric> metric = std::nullopt);

}  // namespace cormult::mce
