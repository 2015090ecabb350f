#include "cormult/features.hpp"

#include <algorithm>

#include "cormult/errors.hpp"

namespace cormult {

sampling::Clip make_clip(const data::MultimodalSample& s, const text::Vocabulary& vocab,
                         const FeatureConfig& cfg) {
  sampling::Clip c;
  c.audio = s.audio;
  c.tokens = text::encode(text::tokenize(s.text), vocab, cfg.seq_len);
  c.frames = s.frames;
  return c;
}

void featurize_modality(const sampling::Clip& c, Modality m, const FeatureConfig& cfg, Features& into) {
  switch (m) {
    case Modality::Audio: into.audio = audio::featurize(c.audio, cfg.mel).to_tensor(); break;
    case Modality::Text: into.tokens = c.tokens; break;
    case Modality::Vision: into.frames = vision::pool_frames(c.frames, cfg.target_frames); break;
  }
}

Features featurize(const sampling::Clip& c, const FeatureConfig& cfg) {
  Features f;
  for (Modality m : kModalities) featurize_modality(c, m, cfg, f);
  return f;
}

std::vector<Features> featurize_all(std::span<const sampling::Clip> clips, const FeatureConfig& cfg) {
  std::vector<Features> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(featurize(c, cfg));
  return out;
}

namespace {

Tensor stack_dense(std::span<const Features* const> items, Tensor Features::*field, const char* what) {
  const Shape& inner = ((*items[0]).*field).shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const auto* f : items) {
    const Tensor& t = f->*field;
    if (t.shape() != inner) {
      throw ShapeMismatch(std::string(what) + " extents differ within a batch: " + shape_str(t.shape()) +
                          " vs " + shape_str(inner));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

FeatureBatch stack(std::span<const Features* const> items, std::span<const Modality> modalities) {
  if (items.empty()) throw EmptyBatch("no clips to stack");
  FeatureBatch b;
  b.size = items.size();
  for (Modality m : modalities) {
    switch (m) {
      case Modality::Audio: b.audio = stack_dense(items, &Features::audio, "audio"); break;
      case Modality::Vision: b.frames = stack_dense(items, &Features::frames, "frames"); break;
      case Modality::Text:
        b.seq_len = items[0]->tokens.ids.size();
        b.ids.reserve(b.size * b.seq_len);
        for (const auto* f : items) {
          if (f->tokens.ids.size() != b.seq_len) throw ShapeMismatch("token sequences differ in length");
          b.ids.insert(b.ids.end(), f->tokens.ids.begin(), f->tokens.ids.end());
        }
        break;
    }
  }
  return b;
}

}  // namespace cormult
