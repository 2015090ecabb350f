#include "cormult/mce.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>

#include "cormult/errors.hpp"
#include "cormult/ops.hpp"
#include "cormult/param_file.hpp"
#include "cormult/tape.hpp"

namespace cormult::mce {

namespace {

constexpr std::array<std::pair<Metric, std::string_view>, 5> kMetricNames{{
    {Metric::Euclidean, "euclidean"},
    {Metric::Manhattan, "manhattan"},
    {Metric::Chebyshev, "chebyshev"},
    {Metric::Cosine, "cosine"},
    {Metric::Mahalanobis, "mahalanobis"},
}};

void check_rows(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape() || u.rank() != 2) {
    throw ShapeMismatch("row-wise distance needs equal [n, o] operands, got " + shape_str(u.shape()) + " and " +
                        shape_str(v.shape()));
  }
}

const Covariance& require_cov(const Covariance* cov, std::size_t n) {
  if (cov == nullptr) throw NotSPD("mahalanobis distance needs a covariance");
  if (cov->dim() != n) throw ShapeMismatch("covariance dimension does not match the vectors");
  return *cov;
}

// [b, t, o] -> [b, o]; [b, o] passes through.
Tensor pool_time(const Tensor& x) {
  if (x.rank() == 3) return ops::mean(x, 1);
  if (x.rank() == 2) return x;
  throw ShapeMismatch("joint features must be [b, t, o] or pooled [b, o], got " + shape_str(x.shape()));
}

}  // namespace

Metric parse_metric(std::string_view s) {
  for (const auto& [m, name] : kMetricNames) {
    if (name == s) return m;
  }
  throw BadConfig("unknown metric '" + std::string(s) + "'");
}

std::string_view name_of(Metric m) {
  for (const auto& [k, name] : kMetricNames) {
    if (k == m) return name;
  }
  return "?";
}

void validate(const MceConfig& c) {
  if (c.d == 0 || c.heads == 0 || c.d % c.heads != 0) throw BadConfig("d must be a positive multiple of heads");
  if (c.layers == 0) throw BadConfig("layers must be >= 1");
  if (c.t == 0 || c.o == 0) throw BadConfig("t and o must be >= 1");
  if (!(c.margin >= 0.0)) throw BadConfig("margin must be >= 0");
  if (!(c.lr >= 0.0)) throw BadConfig("lr must be >= 0");
  if (c.batch_size == 0) throw BadConfig("batch_size must be >= 1");
}

// ---- Covariance ----

Covariance Covariance::identity(std::size_t n) { return diagonal(std::vector<double>(n, 1.0)); }

Covariance Covariance::diagonal(std::vector<double> variances) {
  Covariance c;
  c.n_ = variances.size();
  c.inv_diag_.resize(c.n_);
  for (std::size_t i = 0; i < c.n_; ++i) {
    if (!(variances[i] > 0.0) || !std::isfinite(variances[i])) {
      throw NotSPD("diagonal entry " + std::to_string(i) + " is not positive");
    }
    c.inv_diag_[i] = 1.0 / variances[i];
  }
  c.diag_ = std::move(variances);
  return c;
}

Covariance Covariance::full(const Tensor& t) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw ShapeMismatch("covariance must be square");
  const std::size_t n = t.dim(0);
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m(i, j) = t[i * n + j];
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw NotSPD("covariance is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NotSPD("covariance is not positive definite");
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  Covariance c;
  c.n_ = n;
  c.full_inverse_.resize(n * n);
  c.diag_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.diag_[i] = m(i, i);
    for (std::size_t j = 0; j < n; ++j) c.full_inverse_[i * n + j] = 0.5 * (inv(i, j) + inv(j, i));
  }
  c.inv_diag_.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.inv_diag_[i] = c.full_inverse_[i * n + i];
  return c;
}

Covariance Covariance::from_rows(const Tensor& x, double ridge) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeMismatch("covariance rows must be [n, o] with n >= 1");
  const std::size_t n = x.dim(0), o = x.dim(1);
  std::vector<double> mean(o, 0.0), var(o, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < o; ++j) mean[j] += x[i * o + j];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < o; ++j) {
      const double d = x[i * o + j] - mean[j];
      var[j] += d * d;
    }
  }
  for (auto& v : var) v = v / static_cast<double>(n) + ridge;
  return diagonal(std::move(var));
}

Tensor Covariance::inverse() const {
  if (!is_diagonal()) return Tensor({n_, n_}, full_inverse_);
  Tensor t = Tensor::zeros({n_, n_});
  for (std::size_t i = 0; i < n_; ++i) t.mutable_data()[i * n_ + i] = inv_diag_[i];
  return t;
}

std::vector<double> Covariance::variances() const { return diag_; }

// ---- Distances ----

double distance(std::span<const double> u, std::span<const double> v, Metric metric, const Covariance* cov) {
  if (u.size() != v.size()) throw ShapeMismatch("distance operands differ in length");
  const std::size_t n = u.size();
  switch (metric) {
    case Metric::Euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
      return std::sqrt(s);
    }
    case Metric::Manhattan: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::abs(u[i] - v[i]);
      return s;
    }
    case Metric::Chebyshev: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s = std::max(s, std::abs(u[i] - v[i]));
      return s;
    }
    case Metric::Cosine: {
      double dot = 0.0, nu = 0.0, nv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
      }
      if (nu == 0.0 || nv == 0.0) return 0.0;
      return dot / (std::sqrt(nu) * std::sqrt(nv));
    }
    case Metric::Mahalanobis: {
      const Covariance& c = require_cov(cov, n);
      double s = 0.0;
      if (c.is_diagonal()) {
        const auto& inv = c.inverse_diagonal();
        for (std::size_t i = 0; i < n; ++i) s += (u[i] - v[i]) * (u[i] - v[i]) * inv[i];
      } else {
        const Tensor inv = c.inverse();
        for (std::size_t i = 0; i < n; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < n; ++j) row += inv[i * n + j] * (u[j] - v[j]);
          s += (u[i] - v[i]) * row;
        }
      }
      return std::sqrt(std::max(s, 0.0));
    }
  }
  return 0.0;
}

Tensor distance(const Tensor& u, const Tensor& v, Metric metric, const Covariance* cov) {
  check_rows(u, v);
  if (metric == Metric::Cosine) return ops::cosine_similarity(u, v);
  const Tensor delta = ops::sub(u, v);
  switch (metric) {
    case Metric::Euclidean: return ops::sqrt(ops::sum(ops::square(delta), -1));
    case Metric::Manhattan: return ops::sum(ops::abs(delta), -1);
    case Metric::Chebyshev: return ops::max(ops::abs(delta), -1);
    case Metric::Mahalanobis: {
      const Covariance& c = require_cov(cov, u.dim(1));
      if (c.is_diagonal()) {
        const Tensor inv({c.dim()}, c.inverse_diagonal());
        return ops::sqrt(ops::sum(ops::mul(ops::square(delta), inv), -1));
      }
      return ops::sqrt(ops::sum(ops::mul(ops::matmul(delta, c.inverse()), delta), -1));
    }
    case Metric::Cosine: break;
  }
  return {};
}

Tensor triplet_distance(const Tensor& u, const Tensor& v, Metric metric, const Covariance* cov) {
  if (metric == Metric::Cosine) return ops::add_scalar(ops::neg(ops::cosine_similarity(u, v)), 1.0);
  return distance(u, v, metric, cov);
}

Tensor correlation_rows(const Tensor& a, const Tensor& b, Metric metric, const Covariance* cov) {
  if (a.shape() != b.shape()) throw ShapeMismatch("correlation operands differ in shape");
  const Tensor d = distance(pool_time(a), pool_time(b), metric, cov);
  if (metric == Metric::Cosine) return d;
  return ops::div(Tensor::ones(d.shape()), ops::add_scalar(d, 1.0));
}

double correlation(const Tensor& a, const Tensor& b, Metric metric, const Covariance* cov) {
  if (a.shape() != b.shape()) throw ShapeMismatch("correlation operands differ in shape");
  if (a.rank() != 2) throw ShapeMismatch("correlation expects one sample's [t, o] features");
  Shape s{1};
  s.insert(s.end(), a.shape().begin(), a.shape().end());
  return correlation_rows(ops::reshape(a, s), ops::reshape(b, s), metric, cov)[0];
}

Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin,
                    Metric metric, const Covariance* cov) {
  const Tensor a = pool_time(anchor), p = pool_time(positive), n = pool_time(negative);
  const Tensor dp = triplet_distance(a, p, metric, cov);
  const Tensor dn = triplet_distance(a, n, metric, cov);
  return ops::mean(ops::relu(ops::add_scalar(ops::sub(dp, dn), margin)));
}

LossBreakdown mce_loss(std::span<const DirectedLoss> terms) {
  if (terms.empty()) throw EmptyBatch("no triplet terms");
  LossBreakdown out;
  std::array<int, 3> count{};
  for (const auto& t : terms) {
    if (t.anchor == t.partner) throw BadConfig("a triplet term pairs a modality with itself");
    const int m = index_of(t.anchor);
    out.per_modality[m] = count[m] == 0 ? t.value : ops::add(out.per_modality[m], t.value);
    ++count[m];
  }
  for (int c : count) {
    if (c != 2) throw BadConfig("every anchor modality needs exactly its two partner terms");
  }
  out.total = ops::div(ops::add(ops::add(out.per_modality[0], out.per_modality[1]), out.per_modality[2]),
                       Tensor::from({3.0}));
  out.total = ops::reshape(out.total, {});
  return out;
}

// ---- Encoder ----

Tensor positional_encoding(const Tensor& x) {
  if (x.rank() < 2 || x.dim(-2) == 0) throw ShapeMismatch("positional encoding needs [.., len >= 1, d]");
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, Tensor> cache;
  const auto key = std::make_pair(x.dim(-2), x.dim(-1));
  Tensor table;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, nn::sinusoidal_table(key.first, key.second)).first;
    table = it->second;
  }
  return ops::add(x, table);
}

EncoderBlock::EncoderBlock(std::size_t d, std::size_t heads, Rng& rng)
    : ln1(d), ln2(d), attention(d, heads, rng), ff(d, 4 * d, rng) {}

Tensor EncoderBlock::forward(const Tensor& x) const {
  const Tensor x1 = ln1.forward(x);
  const Tensor x2 = attention.forward(x1, x1);
  const Tensor x3 = ln2.forward(ops::add(x1, x2));
  return ops::add(x3, ff.forward(x3));
}

void EncoderBlock::collect(nn::ParamList& out, const std::string& prefix) {
  ln1.collect(out, prefix + ".ln1");
  attention.collect(out, prefix + ".attention");
  ln2.collect(out, prefix + ".ln2");
  ff.collect(out, prefix + ".ff");
}

double CorrelationCoefficients::of(Modality a, Modality b) const {
  if (a == b) throw BadConfig("correlation of a modality with itself");
  const bool has_t = a == Modality::Text || b == Modality::Text;
  const bool has_a = a == Modality::Audio || b == Modality::Audio;
  if (has_t && has_a) return cor_ta;
  if (has_t) return cor_tv;
  return cor_av;
}

// ---- Mce ----

Mce::Mce(const MceConfig& cfg, const InputDims& dims, std::uint64_t seed) : cfg_(cfg), dims_(dims) {
  validate(cfg);
  if (dims.n_mels == 0 || dims.vocab == 0 || dims.frame_dim == 0) throw BadConfig("input dimensions must be >= 1");
  Rng rng = Rng::substream(seed, "mce.init");
  branches_.resize(3);
  for (Modality m : kModalities) {
    Branch& b = branches_[index_of(m)];
    switch (m) {
      case Modality::Audio: b.input = nn::Linear(dims.n_mels, cfg.d, rng); break;
      case Modality::Text: b.embed = nn::Embedding(dims.vocab, cfg.d, rng); break;
      case Modality::Vision: b.input = nn::Linear(dims.frame_dim, cfg.d, rng); break;
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) b.blocks.emplace_back(cfg.d, cfg.heads, rng);
    b.out = nn::Linear(cfg.d, cfg.o, rng);
  }
}

Tensor Mce::transform(Modality m, const FeatureBatch& batch) const {
  if (empty()) throw NotPretrained("model has no parameters");
  const Branch& b = branches_[index_of(m)];
  Tensor x;
  switch (m) {
    case Modality::Audio:
      if (batch.audio.rank() != 3 || batch.audio.dim(2) != dims_.n_mels) {
        throw ShapeMismatch("audio features must be [b, frames, " + std::to_string(dims_.n_mels) + "]");
      }
      x = b.input.forward(batch.audio);
      break;
    case Modality::Text:
      if (batch.seq_len == 0 || batch.ids.size() != batch.size * batch.seq_len) {
        throw ShapeMismatch("token batch is empty or ragged");
      }
      x = b.embed.forward(batch.ids, {batch.size, batch.seq_len});
      break;
    case Modality::Vision:
      if (batch.frames.rank() != 3 || batch.frames.dim(2) != dims_.frame_dim) {
        throw ShapeMismatch("frame features must be [b, f, " + std::to_string(dims_.frame_dim) + "]");
      }
      x = b.input.forward(batch.frames);
      break;
  }
  return positional_encoding(x);
}

Tensor Mce::encode(Modality m, const Tensor& x) const {
  Tensor h = x;
  for (const auto& block : branches_[index_of(m)].blocks) h = block.forward(h);
  return h;
}

Tensor Mce::project_joint(Modality m, const Tensor& encoded) const {
  const std::size_t len = encoded.dim(-2);
  const Tensor pooled = len == cfg_.t ? encoded : ops::matmul(nn::window_pool_matrix(len, cfg_.t), encoded);
  return branches_[index_of(m)].out.forward(pooled);
}

Tensor Mce::joint(Modality m, const FeatureBatch& batch) const {
  return project_joint(m, encode(m, transform(m, batch)));
}

Tensor Mce::pooled(Modality m, const FeatureBatch& batch) const {
  const Tensor enc = encode(m, transform(m, batch));
  // The t-mean commutes with the affine d -> o map, so the pooling matrix
  // collapses to its column means.
  const std::size_t len = enc.dim(1);
  const Tensor w = ops::mean(nn::window_pool_matrix(len, cfg_.t), 0, true);  // [1, len]
  const Tensor mean_enc = ops::reshape(ops::matmul(w, enc), {enc.dim(0), enc.dim(2)});
  return branches_[index_of(m)].out.forward(mean_enc);
}

std::vector<CorrelationCoefficients> Mce::evaluate(const FeatureBatch& batch) const {
  if (empty() || !pretrained_) throw NotPretrained("MCE parameters are not loaded");
  std::array<Tensor, 3> p;
  for (Modality m : kModalities) p[index_of(m)] = pooled(m, batch);
  std::optional<Covariance> local;
  const Covariance* cov = covariance ? &*covariance : nullptr;
  if (cfg_.metric == Metric::Mahalanobis && cov == nullptr) {
    local = Covariance::from_rows(ops::concat({p[0], p[1], p[2]}, 0));
    cov = &*local;
  }
  const auto ia = index_of(Modality::Audio), it = index_of(Modality::Text), iv = index_of(Modality::Vision);
  const Tensor ta = correlation_rows(p[it], p[ia], cfg_.metric, cov);
  const Tensor tv = correlation_rows(p[it], p[iv], cfg_.metric, cov);
  const Tensor av = correlation_rows(p[ia], p[iv], cfg_.metric, cov);
  std::vector<CorrelationCoefficients> out(batch.size);
  for (std::size_t i = 0; i < batch.size; ++i) out[i] = {ta[i], tv[i], av[i]};
  return out;
}

CorrelationCoefficients Mce::evaluate(const Features& f) const {
  const Features* items[] = {&f};
  return evaluate(stack(items)).front();
}

nn::ParamList Mce::parameters() {
  nn::ParamList out;
  for (Modality m : kModalities) {
    Branch& b = branches_[index_of(m)];
    const std::string p(name_of(m));
    if (m == Modality::Text) {
      b.embed.collect(out, p + ".embed");
    } else {
      b.input.collect(out, p + ".input");
    }
    for (std::size_t l = 0; l < b.blocks.size(); ++l) b.blocks[l].collect(out, p + ".block" + std::to_string(l));
    b.out.collect(out, p + ".out");
  }
  return out;
}

namespace {

const char* const kMagic = "MCE1";

Tensor scalar_record(double v) { return Tensor({1}, std::vector<double>{v}); }

}  // namespace

std::vector<ParamRecord> Mce::records() const {
  if (empty()) throw NotPretrained("model has no parameters");
  std::vector<ParamRecord> out{
      {"hparam.d", scalar_record(static_cast<double>(cfg_.d))},
      {"hparam.layers", scalar_record(static_cast<double>(cfg_.layers))},
      {"hparam.heads", scalar_record(static_cast<double>(cfg_.heads))},
      {"hparam.t", scalar_record(static_cast<double>(cfg_.t))},
      {"hparam.o", scalar_record(static_cast<double>(cfg_.o))},
      {"hparam.margin", scalar_record(cfg_.margin)},
      {"hparam.metric", scalar_record(static_cast<double>(static_cast<int>(cfg_.metric)))},
      {"hparam.n_mels", scalar_record(static_cast<double>(dims_.n_mels))},
      {"hparam.vocab", scalar_record(static_cast<double>(dims_.vocab))},
      {"hparam.frame_dim", scalar_record(static_cast<double>(dims_.frame_dim))},
  };
  for (const auto& p : const_cast<Mce*>(this)->parameters()) out.push_back({p.name, *p.tensor});
  if (covariance) {
    const auto v = covariance->variances();
    out.push_back({"covariance.variances", Tensor({v.size()}, v)});
  }
  return out;
}

std::string Mce::encode_bytes() const { return encode_records(kMagic, records()); }

void Mce::save(const std::filesystem::path& path) const { write_records(path, kMagic, records()); }

Mce Mce::from_records(const std::vector<ParamRecord>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r.value).second) throw FormatError("duplicate record " + r.name);
  }
  auto hp = [&](const std::string& key) {
    auto it = by_name.find("hparam." + key);
    if (it == by_name.end() || it->second->size() != 1) throw FormatError("missing hparam." + key);
    return (*it->second)[0];
  };
  auto count = [&](const std::string& key) { return static_cast<std::size_t>(std::llround(hp(key))); };
  MceConfig cfg;
  cfg.d = count("d");
  cfg.layers = count("layers");
  cfg.heads = count("heads");
  cfg.t = count("t");
  cfg.o = count("o");
  cfg.margin = hp("margin");
  const auto metric = count("metric");
  if (metric >= kMetricNames.size()) throw FormatError("unknown metric code");
  cfg.metric = static_cast<Metric>(metric);
  const InputDims dims{count("n_mels"), count("vocab"), count("frame_dim")};
  Mce m(cfg, dims, 0);
  std::size_t used = 10;
  for (auto& p : m.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("missing parameter " + p.name);
    if (it->second->shape() != p.tensor->shape()) {
      throw FormatError(p.name + ": stored shape " + shape_str(it->second->shape()) + " does not match " +
                        shape_str(p.tensor->shape()));
    }
    *p.tensor = it->second->detach();
    ++used;
  }
  if (auto it = by_name.find("covariance.variances"); it != by_name.end()) {
    m.covariance = Covariance::diagonal(it->second->values());
    ++used;
  }
  if (used != records.size()) throw FormatError("unexpected records in MCE file");
  m.pretrained_ = true;
  return m;
}

Mce Mce::load(const std::filesystem::path& path) { return from_records(read_records(path, kMagic)); }

// ---- Pre-training ----

namespace {

struct BatchInputs {
  FeatureBatch positives;
  std::array<std::optional<FeatureBatch>, 3> computed;  // per partner modality
  const std::array<NegativeSet, 3>* negatives = nullptr;
};

BatchInputs batch_inputs(std::span<const Features> features, const std::vector<std::size_t>& idx,
                         const std::array<NegativeSet, 3>& negatives) {
  BatchInputs in;
  std::vector<const Features*> pos;
  pos.reserve(idx.size());
  for (auto i : idx) pos.push_back(&features[i]);
  in.positives = stack(pos);
  in.negatives = &negatives;
  for (Modality m : kModalities) {
    const auto& set = negatives[index_of(m)];
    if (set.computed.empty()) continue;
    std::vector<const Features*> neg;
    for (const auto& f : set.computed) neg.push_back(&f);
    const Modality only[] = {m};
    in.computed[index_of(m)] = stack(neg, only);
  }
  return in;
}

Tensor batch_loss(const Mce& model, const BatchInputs& in) {
  const auto& cfg = model.config();
  std::array<Tensor, 3> pos, neg;
  for (Modality m : kModalities) {
    const auto k = index_of(m);
    pos[k] = model.pooled(m, in.positives);
    const Tensor pool = in.computed[k] ? ops::concat({pos[k], model.pooled(m, *in.computed[k])}, 0) : pos[k];
    neg[k] = ops::index_select(pool, (*in.negatives)[k].rows);
  }
  std::optional<Covariance> cov;
  if (cfg.metric == Metric::Mahalanobis) {
    cov = Covariance::from_rows(ops::concat({pos[0].detach(), pos[1].detach(), pos[2].detach()}, 0));
  }
  std::vector<DirectedLoss> terms;
  for (Modality a : kModalities) {
    for (Modality p : partners_of(a)) {
      terms.push_back({a, p,
                       triplet_loss(pos[index_of(a)], pos[index_of(p)], neg[index_of(p)], cfg.margin, cfg.metric,
                                    cov ? &*cov : nullptr)});
    }
  }
  return mce_loss(terms).total;
}

// Splits a permutation into batches; a trailing singleton joins the
// previous batch so pair-based strategies always see two clips.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  if (out.size() >= 2 && out.back().size() == 1 && batch_size > 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

struct DrawnBatch {
  sampling::TripletBatch triplets;
  std::array<NegativeSet, 3> negatives;
};

DrawnBatch draw_batch(std::span<const sampling::Clip> clips, const std::vector<std::size_t>& idx,
                      const PretrainOptions& opt, Rng& rng) {
  sampling::Batch batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(clips[i]);
  DrawnBatch out;
  out.triplets = sampling::make_triplets(batch, opt.strategy, opt.strategy_params, rng);
  const std::size_t b = idx.size();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  for (auto& set : out.negatives) set.rows.assign(b, kUnset);
  for (const auto& ns : out.triplets.negatives) {
    const auto& p = ns.provenance;
    NegativeSet& set = out.negatives[index_of(p.modality)];
    if (p.applied == sampling::Strategy::A) {
      set.rows[p.sample] = p.donor;
    } else {
      set.rows[p.sample] = b + set.computed.size();
      featurize_modality(ns.clip, p.modality, opt.features, set.computed.emplace_back());
    }
  }
  for (const auto& set : out.negatives) {
    for (auto r : set.rows) {
      if (r == kUnset) throw BadConfig("triplet batch lacks a negative for some sample and modality");
    }
  }
  return out;
}

}  // namespace

TripletSet build_triplet_set(std::span<const sampling::Clip> clips, std::size_t batch_size, const PretrainOptions& opt, Rng& rng) {
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  TripletSet set;
  set.batches = make_batches(order, batch_size);
  for (const auto& b : set.batches) {
    DrawnBatch d = draw_batch(clips, b, opt, rng);
    set.triplets.push_back(std::move(d.triplets));
    set.negatives.push_back(std::move(d.negatives));
  }
  return set;
}

double triplet_set_loss(const Mce& model, std::span<const Features> features, const TripletSet& set) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < set.batches.size(); ++b) {
    const BatchInputs in = batch_inputs(features, set.batches[b], set.negatives[b]);
    total += batch_loss(model, in)[0] * static_cast<double>(set.batches[b].size());
    n += set.batches[b].size();
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

PretrainResult pretrain(std::span<const sampling::Clip> clips, const MceConfig& cfg, const InputDims& dims,
                        const PretrainOptions& opt) {
  validate(cfg);
  sampling::validate(opt.strategy_params);
  if (clips.empty()) throw EmptyBatch("no clips to pre-train on");
  if (clips.size() < 2 && (opt.strategy == sampling::Strategy::A || opt.strategy == sampling::Strategy::D)) {
    throw BatchTooSmall("strategy " + std::string(sampling::name_of(opt.strategy)) + " needs at least 2 clips");
  }
  const std::vector<Features> features = featurize_all(clips, opt.features);

  PretrainResult r;
  r.model = Mce(cfg, dims, opt.seed);
  Rng monitor_rng = Rng::substream(opt.seed, "mce.monitor");
  const TripletSet monitor = build_triplet_set(clips, cfg.batch_size, opt, monitor_rng);
  r.loss.push_back(triplet_set_loss(r.model, features, monitor));
  r.train_loss.push_back(std::numeric_limits<double>::quiet_NaN());

  nn::Adam adam(r.model.parameters(), {.lr = cfg.lr});
  Rng shuffle_rng = Rng::substream(opt.seed, "mce.shuffle");
  Rng sample_rng = Rng::substream(opt.seed, "mce.sampling");
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    double sum = 0.0;
    for (const auto& idx : make_batches(order, cfg.batch_size)) {
      const DrawnBatch d = draw_batch(clips, idx, opt, sample_rng);
      const BatchInputs in = batch_inputs(features, idx, d.negatives);
      Tape tape;
      adam.watch(tape);
      const Tensor loss = batch_loss(r.model, in);
      const Gradients g = tape.backward(loss);
      adam.step(g);
      sum += loss[0] * static_cast<double>(idx.size());
    }
    r.train_loss.push_back(sum / static_cast<double>(clips.size()));
    r.loss.push_back(triplet_set_loss(r.model, features, monitor));
  }

  if (cfg.metric == Metric::Mahalanobis && opt.batch_covariance) {
    std::vector<const Features*> all;
    for (const auto& f : features) all.push_back(&f);
    const FeatureBatch fb = stack(all);
    r.model.covariance = Covariance::from_rows(ops::concat(
        {r.model.pooled(Modality::Audio, fb), r.model.pooled(Modality::Text, fb), r.model.pooled(Modality::Vision, fb)},
        0));
  }
  r.model.set_pretrained(true);
  return r;
}

void write_loss_csv(const std::filesystem::path& path, const PretrainResult& r) {
  std::ofstream out(path);
  if (!out) throw MissingFile(path.string());
  out.precision(17);
  out << "epoch,loss,train_loss\n";
  for (std::size_t e = 0; e < r.loss.size(); ++e) {
    out << e << ',' << r.loss[e] << ',';
    if (e < r.train_loss.size() && !std::isnan(r.train_loss[e])) out << r.train_loss[e];
    out << '\n';
  }
}

PairScores pair_scores(const Mce& model, std::span<const Features> features, std::uint64_t seed,
                       std::optional<Metric> metric_override) {
  const Metric metric = metric_override.value_or(model.config().metric);
  if (features.size() < 2) throw BatchTooSmall("pair scores need at least 2 clips");
  Rng rng = Rng::substream(seed, "mce.pair_scores");
  std::vector<const Features*> all;
  for (const auto& f : features) all.push_back(&f);
  const FeatureBatch fb = stack(all);
  std::array<Tensor, 3> p;
  for (Modality m : kModalities) p[index_of(m)] = model.pooled(m, fb);
  std::optional<Covariance> local;
  const Covariance* cov = model.covariance ? &*model.covariance : nullptr;
  if (metric == Metric::Mahalanobis && cov == nullptr) {
    local = Covariance::from_rows(ops::concat({p[0], p[1], p[2]}, 0));
    cov = &*local;
  }
  const std::size_t n = features.size();
  const std::size_t o = p[0].dim(1);
  auto row = [&](Modality m, std::size_t i) {
    return std::span<const double>(p[index_of(m)].data()).subspan(i * o, o);
  };
  auto score = [&](std::span<const double> u, std::span<const double> v) {
    const double d = distance(u, v, metric, cov);
    return metric == Metric::Cosine ? d : 1.0 / (1.0 + d);
  };
  constexpr std::array<std::pair<Modality, Modality>, 3> kPairs{{
      {Modality::Text, Modality::Audio}, {Modality::Text, Modality::Vision}, {Modality::Audio, Modality::Vision}}};
  PairScores out;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [a, b] : kPairs) {
      std::size_t j = rng.index(n - 1);
      if (j >= i) ++j;
      out.aligned.push_back(score(row(a, i), row(b, i)));
      out.swapped.push_back(score(row(a, i), row(b, j)));
      out.donors.push_back(j);
    }
  }
  return out;
}

}  // namespace cormult::mce
