#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cormult/audio.hpp"
#include "cormult/data_io.hpp"
#include "cormult/encoders.hpp"
#include "cormult/modality.hpp"
#include "cormult/sampling.hpp"
#include "cormult/tensor.hpp"

namespace cormult {

struct FeatureConfig {
  audio::MelParams mel;
  std::size_t seq_len = 32;       // s
  std::size_t target_frames = 16;  // pooled f
};

// F_A, F_T and F_V of one clip.
struct Features {
  Tensor audio;  // [frames, n_mels] log-mel
  text::TokenSequence tokens;
  Tensor frames;  // [target_frames, i]
};

sampling::Clip make_clip(const data::MultimodalSample& s, const text::Vocabulary& vocab,
                         const FeatureConfig& cfg);
Features featurize(const sampling::Clip& c, const FeatureConfig& cfg);
// Featurizes only modality m of `c` into the matching field of `into`.
void featurize_modality(const sampling::Clip& c, Modality m, const FeatureConfig& cfg, Features& into);

std::vector<Features> featurize_all(std::span<const sampling::Clip> clips, const FeatureConfig& cfg);

// Batch-stacked features. Only modalities requested at stacking time are
// populated.
struct FeatureBatch {
  std::size_t size = 0;
  Tensor audio;                 // [b, frames, n_mels]
  std::vector<std::size_t> ids;  // [b, s] row-major
  std::size_t seq_len = 0;
  Tensor frames;  // [b, target_frames, i]
};

// Throws ShapeMismatch when the clips disagree on a modality's extents.
FeatureBatch stack(std::span<const Features* const> items,
                   std::span<const Modality> modalities = kModalities);

}  // namespace cormult
