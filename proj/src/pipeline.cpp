#include "cormult/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cormult/errors.hpp"
#include "cormult/param_file.hpp"

namespace cormult::pipeline {

namespace {
const char* const kFeatureMagic = "FEA1";
}

mce::InputDims Corpus::dims() const {
  if (features.empty()) throw EmptyCorpus("corpus has no samples");
  return {features[0].audio.dim(1), vocab.size(), features[0].frames.dim(1)};
}

const std::vector<std::size_t>& Corpus::split(const std::string& name) const {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw BadConfig("unknown split '" + name + "'");
}

Corpus build_corpus(data::Dataset samples, const FeatureConfig& cfg, std::uint64_t seed) {
  if (samples.empty()) throw EmptyCorpus("dataset has no samples");
  Corpus c;
  c.samples = std::move(samples);
  const bool unassigned =
      std::any_of(c.samples.begin(), c.samples.end(), [](const auto& s) { return s.split.empty(); });
  if (unassigned) data::assign_splits(c.samples, data::split(c.samples.size(), kSplitRatios, seed));
  c.splits.train = data::indices_of_split(c.samples, "train");
  c.splits.val = data::indices_of_split(c.samples, "val");
  c.splits.test = data::indices_of_split(c.samples, "test");
  std::vector<std::string> texts;
  for (auto i : c.splits.train) texts.push_back(c.samples[i].text);
  c.vocab = text::build_vocab(texts);
  for (const auto& s : c.samples) c.clips.push_back(make_clip(s, c.vocab, cfg));
  c.features = featurize_all(c.clips, cfg);
  return c;
}

Corpus load_corpus(const std::filesystem::path& manifest, const FeatureConfig& cfg, std::uint64_t seed) {
  return build_corpus(data::load_manifest(manifest), cfg, seed);
}

fusion::LabeledSet labeled(const Corpus& c, std::span<const std::size_t> idx, const mce::Mce* mce) {
  fusion::LabeledSet s;
  s.features = gather<Features>(c.features, idx);
  for (auto i : idx) s.classes.push_back(data::label_to_class(c.samples[i].label));
  s.cors = mce ? fusion::coefficients(*mce, s.features, false)
               : std::vector<mce::CorrelationCoefficients>(idx.size(), {1.0, 1.0, 1.0});
  return s;
}

metrics::EvalReport evaluate(const Corpus& c, std::span<const std::size_t> idx, const fusion::CorMulT& model,
                             const mce::Mce* mce) {
  const fusion::LabeledSet set = labeled(c, idx, mce);
  const auto ev = fusion::evaluate_set(model, set);
  std::vector<metrics::Probs> probs;
  std::vector<double> labels;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    probs.push_back(ev.predictions[k].probs);
    labels.push_back(c.samples[idx[k]].label);
  }
  return metrics::evaluate(probs, labels);
}

void save_features(const std::filesystem::path& path, const Corpus& c) {
  std::vector<ParamRecord> records;
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    const auto& f = c.features[i];
    const std::string& id = c.samples[i].id;
    std::vector<double> ids(f.tokens.ids.begin(), f.tokens.ids.end());
    ids.push_back(static_cast<double>(f.tokens.true_length));
    records.push_back({id + "/audio", f.audio});
    const std::size_t n = ids.size();
    records.push_back({id + "/tokens", Tensor({n}, std::move(ids))});
    records.push_back({id + "/frames", f.frames});
  }
  write_records(path, kFeatureMagic, records);
}

void load_features(const std::filesystem::path& path, Corpus& c) {
  std::map<std::string, Tensor> by_name;
  for (auto& r : read_records(path, kFeatureMagic)) by_name.emplace(std::move(r.name), std::move(r.value));
  auto take = [&](const std::string& key) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw FormatError("feature cache lacks " + key);
    return it->second;
  };
  std::vector<Features> features(c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    const std::string& id = c.samples[i].id;
    features[i].audio = take(id + "/audio");
    features[i].frames = take(id + "/frames");
    const Tensor tok = take(id + "/tokens");
    for (std::size_t k = 0; k + 1 < tok.size(); ++k) {
      features[i].tokens.ids.push_back(static_cast<std::size_t>(std::llround(tok[k])));
    }
    features[i].tokens.true_length = static_cast<std::size_t>(std::llround(tok[tok.size() - 1]));
  }
  c.features = std::move(features);
}

}  // namespace cormult::pipeline
