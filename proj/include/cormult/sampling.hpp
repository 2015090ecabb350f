#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cormult/audio.hpp"
#include "cormult/encoders.hpp"
#include "cormult/modality.hpp"
#include "cormult/rng.hpp"
#include "cormult/tensor.hpp"

namespace cormult::sampling {

// One clip before featurization: raw waveform, encoded tokens, frames [f, i].
struct Clip {
  audio::Waveform audio;
  text::TokenSequence tokens;
  Tensor frames;
};

using Batch = std::vector<Clip>;

enum class Strategy { A, B, C, D };

// Accepts "A".."D" (case-insensitive). Throws BadConfig.
Strategy parse_strategy(std::string_view s);
std::string_view name_of(Strategy s);

struct StrategyParams {
  double audio_shift_s = 1.0;
  std::size_t text_shift_tokens = 1;
  double sigma = 0.1;  // relative to the RMS of the perturbed signal
  double word_replace_p = 0.15;
  std::size_t vocab_size = 2;  // replacement draws ids in [2, vocab_size)
};

void validate(const StrategyParams& p);

// Rotates the waveform later by round(shift_s * rate) samples.
audio::Waveform shift_audio(const audio::Waveform& w, double shift_s);
// Left-rotates the non-PAD prefix by k positions.
text::TokenSequence shift_tokens(const text::TokenSequence& t, std::size_t k);
// Rotates frames later by `k` rows.
Tensor shift_frames(const Tensor& frames, std::size_t k);

audio::Waveform perturb_audio(const audio::Waveform& w, double sigma, Rng& rng);
Tensor perturb_frames(const Tensor& frames, double sigma, Rng& rng);
text::TokenSequence perturb_tokens(const text::TokenSequence& t, double p, std::size_t vocab_size, Rng& rng);

struct SwapRecord {
  std::size_t sample;
  Modality modality;
  std::size_t donor;
};

// Strategy A. Throws BatchTooSmall for fewer than two clips.
Batch negative_swap(const Batch& batch, Rng& rng, std::vector<SwapRecord>* record = nullptr);
// Strategy B: audio and tokens shifted, frames untouched.
Clip negative_shift(const Clip& clip, double audio_shift_s, std::size_t text_shift_tokens);
// Strategy C: noise on audio and frames, random word replacement.
Clip negative_perturb(const Clip& clip, double sigma, double word_replace_p, std::size_t vocab_size,
                      Rng& rng);
// Strategy D: one of A, B, C per clip, uniformly.
Batch negative_mixed(const Batch& batch, const StrategyParams& params, Rng& rng,
                     std::vector<Strategy>* chosen = nullptr);

// Everything needed to rebuild one negative from the batch alone.
struct Provenance {
  Strategy requested = Strategy::A;
  Strategy applied = Strategy::A;  // never D
  std::size_t sample = 0;
  Modality modality = Modality::Audio;
  std::size_t donor = 0;  // equals sample unless applied == A
  std::uint64_t seed = 0;
};

// The clip `sample` with only `modality` altered by the applied strategy.
Clip realize(const Batch& batch, const Provenance& p, const StrategyParams& params);

struct Triplet {
  std::size_t sample;  // anchor and positive both come from this clip
  Modality anchor;
  Modality partner;
  std::size_t negative;  // index into TripletBatch::negatives
};

struct NegativeSample {
  Provenance provenance;
  Clip clip;
};

// For every clip and partner modality one negative is drawn, and both
// anchors that pair with that partner share it: 6 triplets per clip.
struct TripletBatch {
  std::vector<Triplet> triplets;
  std::vector<NegativeSample> negatives;
};

TripletBatch make_triplets(const Batch& batch, Strategy strategy, const StrategyParams& params, Rng& rng);

}  // namespace cormult::sampling
