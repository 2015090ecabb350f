#include "cormult/sampling.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cormult/errors.hpp"

namespace cormult::sampling {
namespace {

double rms(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : std::sqrt(s / static_cast<double>(x.size()));
}

void require_pair(const Batch& batch) {
  if (batch.size() < 2) throw BatchTooSmall("need at least 2 clips, got " + std::to_string(batch.size()));
}

std::size_t other_index(std::size_t self, std::size_t n, Rng& rng) {
  const std::size_t j = rng.index(n - 1);
  return j >= self ? j + 1 : j;
}

// Frame rows spanned by shift_s, given the clip duration implied by its audio.
std::size_t frame_shift(const Clip& c, double shift_s) {
  if (c.audio.samples.empty() || c.frames.rank() == 0) return 0;
  const double duration = static_cast<double>(c.audio.samples.size()) / c.audio.sample_rate;
  return static_cast<std::size_t>(std::llround(shift_s * static_cast<double>(c.frames.dim(0)) / duration));
}

void swap_modality(Clip& dst, const Clip& src, Modality m) {
  switch (m) {
    case Modality::Audio: dst.audio = src.audio; break;
    case Modality::Text: dst.tokens = src.tokens; break;
    case Modality::Vision: dst.frames = src.frames; break;
  }
}

}  // namespace

Strategy parse_strategy(std::string_view s) {
  if (s.size() == 1) {
    switch (std::toupper(static_cast<unsigned char>(s[0]))) {
      case 'A': return Strategy::A;
      case 'B': return Strategy::B;
      case 'C': return Strategy::C;
      case 'D': return Strategy::D;
    }
  }
  throw BadConfig("unknown negative strategy '" + std::string(s) + "'");
}

std::string_view name_of(Strategy s) {
  switch (s) {
    case Strategy::A: return "A";
    case Strategy::B: return "B";
    case Strategy::C: return "C";
    case Strategy::D: return "D";
  }
  return "?";
}

void validate(const StrategyParams& p) {
  if (!(p.audio_shift_s >= 0.0)) throw BadConfig("audio_shift_s must be >= 0");
  if (!(p.sigma >= 0.0)) throw BadConfig("sigma must be >= 0");
  if (!(p.word_replace_p >= 0.0 && p.word_replace_p <= 1.0)) throw BadConfig("word_replace_p must be in [0, 1]");
}

audio::Waveform shift_audio(const audio::Waveform& w, double shift_s) {
  audio::Waveform out = w;
  if (w.samples.empty()) return out;
  const auto k = static_cast<std::size_t>(std::llround(shift_s * w.sample_rate)) % w.samples.size();
  std::rotate(out.samples.rbegin(), out.samples.rbegin() + static_cast<std::ptrdiff_t>(k), out.samples.rend());
  return out;
}

text::TokenSequence shift_tokens(const text::TokenSequence& t, std::size_t k) {
  text::TokenSequence out = t;
  if (t.true_length == 0) return out;
  const auto r = static_cast<std::ptrdiff_t>(k % t.true_length);
  std::rotate(out.ids.begin(), out.ids.begin() + r, out.ids.begin() + static_cast<std::ptrdiff_t>(t.true_length));
  return out;
}

Tensor shift_frames(const Tensor& frames, std::size_t k) {
  const std::size_t f = frames.dim(0), row = frames.size() / f;
  Tensor out(frames.shape());
  auto dst = out.mutable_data();
  const auto src = frames.data();
  for (std::size_t r = 0; r < f; ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * row), row,
                dst.begin() + static_cast<std::ptrdiff_t>(((r + k) % f) * row));
  }
  return out;
}

audio::Waveform perturb_audio(const audio::Waveform& w, double sigma, Rng& rng) {
  audio::Waveform out = w;
  if (sigma == 0.0) return out;
  double s = 0.0;
  for (float x : w.samples) s += static_cast<double>(x) * x;
  const double sd = sigma * std::sqrt(s / static_cast<double>(std::max<std::size_t>(w.samples.size(), 1)));
  for (auto& x : out.samples) {
    // Clamped so the result is still a valid waveform.
    x = static_cast<float>(std::clamp(static_cast<double>(x) + rng.normal(0.0, sd), -1.0, 1.0));
  }
  return out;
}

Tensor perturb_frames(const Tensor& frames, double sigma, Rng& rng) {
  if (sigma == 0.0) return frames;
  const double sd = sigma * rms(frames.data());
  Tensor out = frames.detach();
  for (auto& v : out.mutable_data()) v += rng.normal(0.0, sd);
  return out;
}

text::TokenSequence perturb_tokens(const text::TokenSequence& t, double p, std::size_t vocab_size, Rng& rng) {
  text::TokenSequence out = t;
  if (p == 0.0) return out;
  for (std::size_t i = 0; i < t.true_length; ++i) {
    if (rng.bernoulli(p)) {
      out.ids[i] = vocab_size > 2 ? 2 + rng.index(vocab_size - 2) : text::Vocabulary::kUnk;
    }
  }
  return out;
}

Batch negative_swap(const Batch& batch, Rng& rng, std::vector<SwapRecord>* record) {
  require_pair(batch);
  Batch out = batch;
  if (record) record->clear();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto m = kModalities[rng.index(3)];
    const std::size_t donor = other_index(i, batch.size(), rng);
    swap_modality(out[i], batch[donor], m);
    if (record) record->push_back({i, m, donor});
  }
  return out;
}

Clip negative_shift(const Clip& clip, double audio_shift_s, std::size_t text_shift_tokens) {
  Clip out = clip;
  out.audio = shift_audio(clip.audio, audio_shift_s);
  out.tokens = shift_tokens(clip.tokens, text_shift_tokens);
  return out;
}

Clip negative_perturb(const Clip& clip, double sigma, double word_replace_p, std::size_t vocab_size,
                      Rng& rng) {
  Clip out = clip;
  out.audio = perturb_audio(clip.audio, sigma, rng);
  out.frames = perturb_frames(clip.frames, sigma, rng);
  out.tokens = perturb_tokens(clip.tokens, word_replace_p, vocab_size, rng);
  return out;
}

Batch negative_mixed(const Batch& batch, const StrategyParams& params, Rng& rng, std::vector<Strategy>* chosen) {
  require_pair(batch);
  Batch out = batch;
  if (chosen) chosen->clear();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto s = static_cast<Strategy>(rng.index(3));
    if (chosen) chosen->push_back(s);
    switch (s) {
      case Strategy::A: {
        const auto m = kModalities[rng.index(3)];
        swap_modality(out[i], batch[other_index(i, batch.size(), rng)], m);
        break;
      }
      case Strategy::B: out[i] = negative_shift(batch[i], params.audio_shift_s, params.text_shift_tokens); break;
      default:
        out[i] = negative_perturb(batch[i], params.sigma, params.word_replace_p, params.vocab_size, rng);
        break;
    }
  }
  return out;
}

Clip realize(const Batch& batch, const Provenance& p, const StrategyParams& params) {
  const Clip& src = batch.at(p.sample);
  Clip out = src;
  switch (p.applied) {
    case Strategy::A: swap_modality(out, batch.at(p.donor), p.modality); break;
    case Strategy::B:
      switch (p.modality) {
        case Modality::Audio: out.audio = shift_audio(src.audio, params.audio_shift_s); break;
        case Modality::Text: out.tokens = shift_tokens(src.tokens, params.text_shift_tokens); break;
        case Modality::Vision: out.frames = shift_frames(src.frames, frame_shift(src, params.audio_shift_s)); break;
      }
      break;
    case Strategy::C: {
      Rng rng(p.seed);
      switch (p.modality) {
        case Modality::Audio: out.audio = perturb_audio(src.audio, params.sigma, rng); break;
        case Modality::Text: out.tokens = perturb_tokens(src.tokens, params.word_replace_p, params.vocab_size, rng); break;
        case Modality::Vision: out.frames = perturb_frames(src.frames, params.sigma, rng); break;
      }
      break;
    }
    case Strategy::D: throw BadConfig("provenance must record the applied strategy");
  }
  return out;
}

TripletBatch make_triplets(const Batch& batch, Strategy strategy, const StrategyParams& params, Rng& rng) {
  validate(params);
  if (batch.empty()) throw EmptyBatch("no clips");
  if (strategy == Strategy::A || strategy == Strategy::D) require_pair(batch);
  TripletBatch out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Strategy applied = strategy == Strategy::D ? static_cast<Strategy>(rng.index(3)) : strategy;
    std::size_t neg_of[3];
    for (Modality m : kModalities) {
      Provenance p;
      p.requested = strategy;
      p.applied = applied;
      p.sample = i;
      p.modality = m;
      p.donor = applied == Strategy::A ? other_index(i, batch.size(), rng) : i;
      p.seed = rng.next_u64();
      neg_of[index_of(m)] = out.negatives.size();
      out.negatives.push_back({p, realize(batch, p, params)});
    }
    for (Modality a : kModalities) {
      for (Modality b : partners_of(a)) out.triplets.push_back({i, a, b, neg_of[index_of(b)]});
    }
  }
  return out;
}

}  // namespace cormult::sampling
