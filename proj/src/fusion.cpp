#include "cormult/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "cormult/errors.hpp"
#include "cormult/metrics.hpp"
#include "cormult/ops.hpp"
#include "cormult/tape.hpp"

namespace cormult::fusion {

namespace {

constexpr std::array<std::pair<CoefficientMode, std::string_view>, 3> kModeNames{{
    {CoefficientMode::Affine01, "affine01"},
    {CoefficientMode::Raw, "raw"},
    {CoefficientMode::Clamp0, "clamp0"},
}};

// Concatenation order of the three memory outputs.
constexpr std::array<Modality, 3> kHeadOrder{Modality::Text, Modality::Audio, Modality::Vision};

const char* const kMagic = "CMT1";

}  // namespace

CoefficientMode parse_mode(std::string_view s) {
  for (const auto& [m, name] : kModeNames) {
    if (name == s) return m;
  }
  throw BadConfig("unknown coefficient mode '" + std::string(s) + "'");
}

std::string_view name_of(CoefficientMode m) {
  for (const auto& [k, name] : kModeNames) {
    if (k == m) return name;
  }
  return "?";
}

void validate(const FusionConfig& c) {
  if (c.d_f == 0 || c.heads == 0 || c.d_f % c.heads != 0) throw BadConfig("d_f must be a positive multiple of heads");
  if (c.crossmodal_depth == 0 || c.memory_depth == 0) throw BadConfig("transformer depths must be >= 1");
  if (c.classes != kClasses) throw BadConfig("class count must be 7");
  if (!(c.lr >= 0.0)) throw BadConfig("lr must be >= 0");
  if (c.batch_size == 0) throw BadConfig("batch_size must be >= 1");
}

double coefficient_weight(double cor, CoefficientMode mode) {
  switch (mode) {
    case CoefficientMode::Affine01: return (cor + 1.0) / 2.0;
    case CoefficientMode::Raw: return cor;
    case CoefficientMode::Clamp0: return std::max(cor, 0.0);
  }
  return cor;
}

Tensor weight_by_correlation(const Tensor& h, std::span<const double> cor, CoefficientMode mode) {
  if (h.rank() != 3 || h.dim(0) != cor.size()) throw ShapeMismatch("one coefficient per batch entry is required");
  std::vector<double> w(cor.size());
  for (std::size_t i = 0; i < cor.size(); ++i) w[i] = coefficient_weight(cor[i], mode);
  return ops::mul(h, Tensor({cor.size(), 1, 1}, std::move(w)));
}

// ---- layers ----

CrossmodalLayer::CrossmodalLayer(std::size_t d, std::size_t heads, Rng& rng)
    : ln_target(d), ln_source(d), ln_ff(d), attention(d, heads, rng), ff(d, 4 * d, rng) {}

Tensor CrossmodalLayer::forward(const Tensor& target, const Tensor& source) const {
  const Tensor y = ops::add(target, attention.forward(ln_target.forward(target), ln_source.forward(source)));
  return ops::add(y, ff.forward(ln_ff.forward(y)));
}

void CrossmodalLayer::collect(nn::ParamList& out, const std::string& prefix) {
  ln_target.collect(out, prefix + ".ln_target");
  ln_source.collect(out, prefix + ".ln_source");
  attention.collect(out, prefix + ".attention");
  ln_ff.collect(out, prefix + ".ln_ff");
  ff.collect(out, prefix + ".ff");
}

CrossmodalTransformer::CrossmodalTransformer(std::size_t d, std::size_t heads, std::size_t depth, Rng& rng) {
  for (std::size_t i = 0; i < depth; ++i) layers.emplace_back(d, heads, rng);
}

Tensor CrossmodalTransformer::forward(const Tensor& target, const Tensor& source) const {
  if (target.rank() != 3 || source.rank() != 3 || target.dim(0) != source.dim(0) || target.dim(2) != source.dim(2)) {
    throw ShapeMismatch("crossmodal streams must be [b, len, d] with equal b and d");
  }
  Tensor h = target;
  for (const auto& l : layers) h = l.forward(h, source);
  return h;
}

void CrossmodalTransformer::collect(nn::ParamList& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
}

MemoryTransformer::MemoryTransformer(std::size_t d, std::size_t heads, std::size_t depth, Rng& rng) {
  for (std::size_t i = 0; i < depth; ++i) {
    layers.push_back({nn::LayerNorm(d), nn::LayerNorm(d), nn::MultiheadAttention(d, heads, rng),
                      nn::FeedForward(d, 4 * d, rng)});
  }
}

Tensor MemoryTransformer::fuse(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) throw ShapeMismatch("memory streams must target the same modality");
  Tensor h = ops::concat({a, b}, -1);
  for (const auto& l : layers) {
    const Tensor x = l.ln_attn.forward(h);
    h = ops::add(h, l.attention.forward(x, x));
    h = ops::add(h, l.ff.forward(l.ln_ff.forward(h)));
  }
  return ops::mean(h, 1);
}

void MemoryTransformer::collect(nn::ParamList& out, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    layers[i].ln_attn.collect(out, p + ".ln_attn");
    layers[i].attention.collect(out, p + ".attention");
    layers[i].ln_ff.collect(out, p + ".ln_ff");
    layers[i].ff.collect(out, p + ".ff");
  }
}

Prediction make_prediction(std::span<const double> probs) {
  if (probs.size() != kClasses) throw ShapeMismatch("a prediction needs 7 probabilities");
  Prediction p;
  std::copy(probs.begin(), probs.end(), p.probs.begin());
  p.label_class = static_cast<int>(metrics::argmax(p.probs)) - 3;
  p.scalar_score = metrics::expected_score(p.probs);
  return p;
}

// ---- model ----

CorMulT::CorMulT(const FusionConfig& cfg, const mce::InputDims& dims, std::uint64_t seed) : cfg_(cfg), dims_(dims) {
  validate(cfg);
  Rng rng = Rng::substream(seed, "fusion.init");
  const std::size_t d = cfg.d_f;
  embed_ = nn::Embedding(dims.vocab, d, rng);
  proj_[index_of(Modality::Audio)] = nn::Conv1d(dims.n_mels, d, 3, rng);
  proj_[index_of(Modality::Text)] = nn::Conv1d(d, d, 3, rng);
  proj_[index_of(Modality::Vision)] = nn::Conv1d(dims.frame_dim, d, 3, rng);
  cross_.resize(9);
  for (Modality target : kModalities) {
    for (Modality source : partners_of(target)) {
      cross_[index_of(source) * 3 + index_of(target)] = CrossmodalTransformer(d, cfg.heads, cfg.crossmodal_depth, rng);
    }
  }
  for (Modality m : kModalities) memory_[index_of(m)] = MemoryTransformer(2 * d, cfg.heads, cfg.memory_depth, rng);
  head_ = nn::Linear(6 * d, cfg.classes, rng);
}

Tensor CorMulT::project(Modality m, const FeatureBatch& batch) const {
  if (empty()) throw NotTrained("model has no parameters");
  Tensor x;
  switch (m) {
    case Modality::Audio:
      if (batch.audio.rank() != 3 || batch.audio.dim(2) != dims_.n_mels) throw ShapeMismatch("audio feature width");
      x = batch.audio;
      break;
    case Modality::Text:
      if (batch.seq_len == 0 || batch.ids.size() != batch.size * batch.seq_len) throw ShapeMismatch("token batch");
      x = embed_.forward(batch.ids, {batch.size, batch.seq_len});
      break;
    case Modality::Vision:
      if (batch.frames.rank() != 3 || batch.frames.dim(2) != dims_.frame_dim) throw ShapeMismatch("frame width");
      x = batch.frames;
      break;
  }
  const Tensor h = proj_[index_of(m)].forward(x);
  return cfg_.positional ? mce::positional_encoding(h) : h;
}

const CrossmodalTransformer& CorMulT::crossmodal(Modality source, Modality target) const {
  if (source == target) throw BadConfig("crossmodal needs two distinct modalities");
  return cross_[index_of(source) * 3 + index_of(target)];
}

const MemoryTransformer& CorMulT::memory(Modality target) const { return memory_[index_of(target)]; }

Tensor CorMulT::logits(const FeatureBatch& batch, std::span<const mce::CorrelationCoefficients> cors) const {
  if (cors.size() != batch.size) throw ShapeMismatch("one coefficient triple per clip is required");
  std::array<Tensor, 3> proj;
  for (Modality m : kModalities) proj[index_of(m)] = project(m, batch);
  std::vector<Tensor> fused;
  for (Modality target : kHeadOrder) {
    std::array<Tensor, 2> streams;
    const auto sources = partners_of(target);
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<double> c(cors.size());
      for (std::size_t i = 0; i < cors.size(); ++i) c[i] = cors[i].of(sources[s], target);
      const Tensor h = crossmodal(sources[s], target).forward(proj[index_of(target)], proj[index_of(sources[s])]);
      streams[s] = weight_by_correlation(h, c, cfg_.mode);
    }
    fused.push_back(memory(target).fuse(streams[0], streams[1]));
  }
  return head_.forward(ops::concat(fused, -1));
}

std::vector<Prediction> CorMulT::predict(const FeatureBatch& batch,
                                         std::span<const mce::CorrelationCoefficients> cors) const {
  if (empty() || !trained_) throw NotTrained("CorMulT parameters are not trained");
  const Tensor p = ops::softmax(logits(batch, cors), -1);
  std::vector<Prediction> out;
  out.reserve(batch.size);
  for (std::size_t i = 0; i < batch.size; ++i) {
    out.push_back(make_prediction(std::span<const double>(p.data()).subspan(i * kClasses, kClasses)));
  }
  return out;
}

nn::ParamList CorMulT::parameters() {
  nn::ParamList out;
  embed_.collect(out, "T.embed");
  for (Modality m : kModalities) proj_[index_of(m)].collect(out, std::string(name_of(m)) + ".proj");
  for (Modality target : kModalities) {
    for (Modality source : partners_of(target)) {
      cross_[index_of(source) * 3 + index_of(target)].collect(
          out, "cross." + std::string(name_of(source)) + "to" + std::string(name_of(target)));
    }
  }
  for (Modality m : kModalities) memory_[index_of(m)].collect(out, "memory." + std::string(name_of(m)));
  head_.collect(out, "head");
  return out;
}

std::vector<ParamRecord> CorMulT::records() const {
  if (empty()) throw NotTrained("model has no parameters");
  auto rec = [](double v) { return Tensor({1}, std::vector<double>{v}); };
  auto count = [&](std::size_t v) { return rec(static_cast<double>(v)); };
  std::vector<ParamRecord> out{
      {"hparam.d_f", count(cfg_.d_f)},
      {"hparam.crossmodal_depth", count(cfg_.crossmodal_depth)},
      {"hparam.heads", count(cfg_.heads)},
      {"hparam.memory_depth", count(cfg_.memory_depth)},
      {"hparam.classes", count(cfg_.classes)},
      {"hparam.mode", count(static_cast<std::size_t>(cfg_.mode))},
      {"hparam.positional", count(cfg_.positional ? 1 : 0)},
      {"hparam.n_mels", count(dims_.n_mels)},
      {"hparam.vocab", count(dims_.vocab)},
      {"hparam.frame_dim", count(dims_.frame_dim)},
  };
  for (const auto& p : const_cast<CorMulT*>(this)->parameters()) out.push_back({p.name, *p.tensor});
  return out;
}

std::string CorMulT::encode_bytes() const { return encode_records(kMagic, records()); }

void CorMulT::save(const std::filesystem::path& path) const { write_records(path, kMagic, records()); }

CorMulT CorMulT::from_records(const std::vector<ParamRecord>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r.value).second) throw FormatError("duplicate record " + r.name);
  }
  auto count = [&](const std::string& key) {
    auto it = by_name.find("hparam." + key);
    if (it == by_name.end() || it->second->size() != 1) throw FormatError("missing hparam." + key);
    return static_cast<std::size_t>(std::llround((*it->second)[0]));
  };
  FusionConfig cfg;
  cfg.d_f = count("d_f");
  cfg.crossmodal_depth = count("crossmodal_depth");
  cfg.heads = count("heads");
  cfg.memory_depth = count("memory_depth");
  cfg.classes = count("classes");
  const auto mode = count("mode");
  if (mode >= kModeNames.size()) throw FormatError("unknown coefficient mode code");
  cfg.mode = static_cast<CoefficientMode>(mode);
  cfg.positional = count("positional") != 0;
  const mce::InputDims dims{count("n_mels"), count("vocab"), count("frame_dim")};
  CorMulT m(cfg, dims, 0);
  std::size_t used = 10;
  for (auto& p : m.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("missing parameter " + p.name);
    if (it->second->shape() != p.tensor->shape()) throw FormatError(p.name + ": stored shape does not match");
    *p.tensor = it->second->detach();
    ++used;
  }
  if (used != records.size()) throw FormatError("unexpected records in CMT file");
  m.trained_ = true;
  return m;
}

CorMulT CorMulT::load(const std::filesystem::path& path) { return from_records(read_records(path, kMagic)); }

// ---- training ----

std::vector<mce::CorrelationCoefficients> coefficients(const mce::Mce& model, std::span<const Features> features,
                                                       bool identity) {
  std::vector<mce::CorrelationCoefficients> out;
  out.reserve(features.size());
  if (identity) {
    out.assign(features.size(), {1.0, 1.0, 1.0});
    return out;
  }
  constexpr std::size_t kChunk = 64;
  for (std::size_t i = 0; i < features.size(); i += kChunk) {
    std::vector<const Features*> items;
    for (std::size_t j = i; j < std::min(features.size(), i + kChunk); ++j) items.push_back(&features[j]);
    const auto c = model.evaluate(stack(items));
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

namespace {

struct Slice {
  FeatureBatch batch;
  std::vector<mce::CorrelationCoefficients> cors;
  std::vector<std::size_t> classes;
};

Slice slice(const LabeledSet& set, std::span<const std::size_t> idx) {
  Slice s;
  std::vector<const Features*> items;
  for (auto i : idx) {
    items.push_back(&set.features[i]);
    s.cors.push_back(set.cors[i]);
    s.classes.push_back(set.classes[i]);
  }
  s.batch = stack(items);
  return s;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> classes) {
  return ops::neg(ops::mean(ops::pick(ops::log_softmax(logits, -1), classes)));
}

void check_set(const LabeledSet& s, const char* what) {
  if (s.features.size() != s.cors.size() || s.features.size() != s.classes.size()) {
    throw LengthMismatch(std::string(what) + ": features, coefficients and classes differ in length");
  }
  for (auto c : s.classes) {
    if (c >= kClasses) throw OutOfRange(std::string(what) + ": class index out of range");
  }
}

}  // namespace

SetEvaluation evaluate_set(const CorMulT& model, const LabeledSet& set, std::size_t batch_size) {
  check_set(set, "evaluation set");
  SetEvaluation ev;
  if (set.features.empty()) return ev;
  double total = 0.0;
  std::vector<std::size_t> idx(set.features.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < idx.size(); i += batch_size) {
    const auto part = std::span<const std::size_t>(idx).subspan(i, std::min(batch_size, idx.size() - i));
    const Slice s = slice(set, part);
    const Tensor lg = model.logits(s.batch, s.cors);
    total += cross_entropy(lg, s.classes)[0] * static_cast<double>(part.size());
    const Tensor p = ops::softmax(lg, -1);
    for (std::size_t r = 0; r < part.size(); ++r) {
      ev.predictions.push_back(make_prediction(std::span<const double>(p.data()).subspan(r * kClasses, kClasses)));
    }
  }
  ev.loss = total / static_cast<double>(idx.size());
  return ev;
}

TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set, const FusionConfig& cfg,
                  const mce::InputDims& dims, std::uint64_t seed) {
  validate(cfg);
  check_set(train_set, "training set");
  check_set(val_set, "validation set");
  if (train_set.features.empty()) throw EmptyBatch("no training clips");
  TrainResult r;
  r.model = CorMulT(cfg, dims, seed);
  nn::Adam adam(r.model.parameters(), {.lr = cfg.lr});
  Rng shuffle = Rng::substream(seed, "fusion.shuffle");
  std::vector<std::size_t> order(train_set.features.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
    double sum = 0.0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      const auto part = std::span<const std::size_t>(order).subspan(i, std::min(cfg.batch_size, order.size() - i));
      const Slice s = slice(train_set, part);
      Tape tape;
      adam.watch(tape);
      const Tensor loss = cross_entropy(r.model.logits(s.batch, s.cors), s.classes);
      adam.step(tape.backward(loss));
      sum += loss[0] * static_cast<double>(part.size());
    }
    r.history.train_loss.push_back(sum / static_cast<double>(order.size()));
    if (val_set.features.empty()) {
      r.history.val_loss.push_back(std::nan(""));
      r.history.val_acc7.push_back(std::nan(""));
      continue;
    }
    const SetEvaluation ev = evaluate_set(r.model, val_set);
    std::vector<std::size_t> pred;
    for (const auto& p : ev.predictions) pred.push_back(p.index());
    r.history.val_loss.push_back(ev.loss);
    r.history.val_acc7.push_back(metrics::acc7(pred, val_set.classes));
  }
  r.model.set_trained(true);
  return r;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw MissingFile(path.string());
  out.precision(17);
  out << "epoch,train_loss,val_loss,val_acc7\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    out << e + 1 << ',' << h.train_loss[e] << ',' << h.val_loss[e] << ',' << h.val_acc7[e] << '\n';
  }
}

}  // namespace cormult::fusion
