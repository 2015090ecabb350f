#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cormult/data_io.hpp"
#include "cormult/encoders.hpp"
#include "cormult/features.hpp"
#include "cormult/fusion.hpp"
#include "cormult/mce.hpp"
#include "cormult/metrics.hpp"
#include "cormult/sampling.hpp"

// Dataset-to-model plumbing shared by the command-line tool and the
// acceptance runner.
namespace cormult::pipeline {

inline constexpr std::array<double, 3> kSplitRatios{0.70, 0.15, 0.15};

struct Corpus {
  data::Dataset samples;
  text::Vocabulary vocab;  // built from the training split only
  std::vector<sampling::Clip> clips;
  std::vector<Features> features;
  data::SplitIndices splits;

  mce::InputDims dims() const;
  const std::vector<std::size_t>& split(const std::string& name) const;
};

// Samples without a split field are assigned one from `seed` first.
Corpus build_corpus(data::Dataset samples, const FeatureConfig& cfg, std::uint64_t seed);
Corpus load_corpus(const std::filesystem::path& manifest, const FeatureConfig& cfg, std::uint64_t seed);

template <class T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

// Coefficients come from `mce`, or are all ones when it is null.
fusion::LabeledSet labeled(const Corpus& c, std::span<const std::size_t> idx, const mce::Mce* mce);

// All six metrics of `model` on the given samples.
metrics::EvalReport evaluate(const Corpus& c, std::span<const std::size_t> idx, const fusion::CorMulT& model,
                             const mce::Mce* mce);

// "FEA1" record file of per-sample feature tensors, keyed by sample id.
void save_features(const std::filesystem::path& path, const Corpus& c);
// Replaces c.features from a cache; throws FormatError when it does not
// cover every sample of the corpus.
void load_features(const std::filesystem::path& path, Corpus& c);

}  // namespace cormult::pipeline
