#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cormult/data_io.hpp"
#include "cormult/encoders.hpp"
#include "cormult/errors.hpp"
#include "test_util.hpp"

namespace cormult::data {
namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cormult_data_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SynthConfig small(std::size_t n, double rho, std::uint64_t seed) {
  SynthConfig c;
  c.n = n;
  c.rho = rho;
  c.seed = seed;
  return c;
}

TEST(Synthetic, RhoOneKeepsModalitiesAligned) {
  const auto ds = generate_synthetic(small(200, 1.0, 1));
  ASSERT_EQ(ds.size(), 200u);
  for (const auto& s : ds) {
    ASSERT_TRUE(s.latent);
    const auto& z = *s.latent;
    EXPECT_EQ(z[0], z[1]);
    EXPECT_EQ(z[1], z[2]);
    EXPECT_GE(s.label, -3.0);
    EXPECT_LE(s.label, 3.0);
    EXPECT_EQ(label_to_class(s.label), static_cast<std::size_t>(z[0] + 3));
    EXPECT_EQ(s.audio.samples.size(), 8000u);
    EXPECT_NO_THROW(audio::validate(s.audio));
    const auto toks = text::tokenize(s.text);
    EXPECT_GE(toks.size(), 5u);
    EXPECT_LE(toks.size(), 20u);
  }
}

double mismatch_fraction(const Dataset& ds) {
  std::size_t bad = 0;
  for (const auto& s : ds) {
    const auto& z = *s.latent;
    if (z[0] != z[1] || z[1] != z[2]) ++bad;
  }
  return static_cast<double>(bad) / static_cast<double>(ds.size());
}

TEST(Synthetic, MismatchFractionTracksRho) {
  SynthConfig c = small(10000, 0.0, 2);
  // Modality sizes are irrelevant to the latent draw; keep the sweep fast.
  c.duration_s = 0.01;
  c.frame_count = 1;
  c.frame_dim = 2;
  EXPECT_EQ(mismatch_fraction(generate_synthetic(c)), 1.0);
  for (double rho : {0.3, 0.7, 0.9}) {
    c.rho = rho;
    const double p = 1.0 - rho;
    const double sigma = std::sqrt(p * (1.0 - p) / 10000.0);
    EXPECT_NEAR(mismatch_fraction(generate_synthetic(c)), p, 3.0 * sigma) << "rho " << rho;
  }
}

TEST(Synthetic, SeededRegenerationIsBitIdentical) {
  const auto a = generate_synthetic(small(30, 0.5, 3));
  const auto b = generate_synthetic(small(30, 0.5, 3));
  const auto c = generate_synthetic(small(30, 0.5, 4));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].audio.samples, b[i].audio.samples);
    EXPECT_EQ(a[i].text, b[i].text);
    EXPECT_EQ(a[i].frames.values(), b[i].frames.values());
    EXPECT_EQ(a[i].label, b[i].label);
  }
  EXPECT_NE(a[0].audio.samples, c[0].audio.samples);
}

// Nearest-centroid classifier per modality on the raw generator output.
TEST(Synthetic, EachModalitySeparatesClassesAtRhoOne) {
  SynthConfig c = small(700, 1.0, 5);
  const auto ds = generate_synthetic(c);
  const auto train = std::vector<MultimodalSample>(ds.begin(), ds.begin() + 350);
  const auto test = std::vector<MultimodalSample>(ds.begin() + 350, ds.end());

  auto accuracy = [&](auto featurize) {
    std::vector<std::vector<double>> centroid(7);
    std::vector<std::size_t> count(7, 0);
    for (const auto& s : train) {
      const auto f = featurize(s);
      const auto c = label_to_class(s.label);
      if (centroid[c].empty()) centroid[c].assign(f.size(), 0.0);
      for (std::size_t j = 0; j < f.size(); ++j) centroid[c][j] += f[j];
      ++count[c];
    }
    for (std::size_t c = 0; c < 7; ++c) {
      for (auto& v : centroid[c]) v /= static_cast<double>(count[c]);
    }
    std::size_t hit = 0;
    for (const auto& s : test) {
      const auto f = featurize(s);
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t c = 0; c < 7; ++c) {
        double d = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) d += (f[j] - centroid[c][j]) * (f[j] - centroid[c][j]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      hit += best == label_to_class(s.label);
    }
    return static_cast<double>(hit) / static_cast<double>(test.size());
  };

  const auto mel = [](const MultimodalSample& s) {
    const auto m = audio::featurize(s.audio);
    std::vector<double> mean(m.n_mels, 0.0);
    for (std::size_t n = 0; n < m.frames; ++n) {
      for (std::size_t b = 0; b < m.n_mels; ++b) mean[b] += m.at(n, b) / m.frames;
    }
    return mean;
  };
  std::vector<std::string> corpus;
  for (const auto& s : train) corpus.push_back(s.text);
  const auto vocab = text::build_vocab(corpus);
  const auto bag = [&](const MultimodalSample& s) {
    std::vector<double> h(vocab.size(), 0.0);
    for (const auto& t : text::tokenize(s.text)) h[vocab.id(t)] = 1.0;
    return h;
  };
  const auto frames = [](const MultimodalSample& s) { return s.frames.values(); };
  EXPECT_GE(accuracy(mel), 0.9);
  EXPECT_GE(accuracy(bag), 0.9);
  EXPECT_GE(accuracy(frames), 0.9);
}

TEST(Synthetic, BadConfig) {
  EXPECT_THROW(generate_synthetic(small(6, 1.0, 0)), BadConfig);
  EXPECT_THROW(generate_synthetic(small(10, 1.5, 0)), BadConfig);
  EXPECT_THROW(generate_synthetic(small(10, -0.1, 0)), BadConfig);
}

TEST(Split, SizesFollowRoundingRule) {
  const auto s = split(100, {0.7, 0.15, 0.15}, 1);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.val.size(), 15u);
  EXPECT_EQ(s.test.size(), 15u);
  const auto t = split(10, {0.7, 0.15, 0.15}, 1);
  EXPECT_EQ(t.train.size(), 7u);
  EXPECT_EQ(t.val.size(), 1u);
  EXPECT_EQ(t.test.size(), 2u);
  EXPECT_THROW(split(10, {0.7, 0.2, 0.2}, 1), BadRatios);
  EXPECT_THROW(split(10, {1.2, -0.1, -0.1}, 1), BadRatios);
}

TEST(Split, IsDeterministicPartition) {
  for (std::size_t n : {7u, 50u, 333u}) {
    const auto a = split(n, {0.7, 0.15, 0.15}, 9);
    const auto b = split(n, {0.7, 0.15, 0.15}, 9);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);
    std::set<std::size_t> all;
    for (const auto* part : {&a.train, &a.val, &a.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), n);
  }
  EXPECT_NE(split(50, {0.7, 0.15, 0.15}, 1).train, split(50, {0.7, 0.15, 0.15}, 2).train);
}

TEST(LabelToClass, RoundingAndRange) {
  EXPECT_EQ(label_to_class(0.0), 3u);
  EXPECT_EQ(label_to_class(-3.0), 0u);
  EXPECT_EQ(label_to_class(3.0), 6u);
  EXPECT_EQ(label_to_class(1.5), 5u);
  EXPECT_EQ(label_to_class(-1.5), 1u);
  EXPECT_EQ(label_to_class(0.49), 3u);
  EXPECT_THROW(label_to_class(3.01), OutOfRange);
  EXPECT_THROW(label_to_class(NAN), OutOfRange);
  std::size_t prev = 0;
  for (double l = -3.0; l <= 3.0; l += 0.01) {
    const auto c = label_to_class(l);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(TensorFormat, RoundTripAndErrors) {
  const auto dir = scratch("tensor");
  Tensor t = testing::random_tensor({3, 4, 2}, 10);
  for (auto& v : t.mutable_data()) v = static_cast<float>(v);
  write_tensor(dir / "t.ten", t);
  const Tensor back = read_tensor(dir / "t.ten");
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(back.values(), t.values());
  write_tensor(dir / "u.ten", back);
  EXPECT_EQ(slurp(dir / "t.ten"), slurp(dir / "u.ten"));

  const std::string bytes = encode_tensor(Tensor::from({1.0, -2.0}));
  EXPECT_EQ(bytes.substr(0, 4), "TEN1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes.size(), 4u + 1u + 4u + 8u);
  EXPECT_THROW(encode_tensor(Tensor::scalar(1.0)), FormatError);
  std::string rank0 = "TEN1";
  rank0.push_back('\0');
  EXPECT_THROW(decode_tensor(rank0), FormatError);
  EXPECT_THROW(decode_tensor(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(read_tensor(dir / "missing.ten"), MissingFile);
}

TEST(Manifest, RoundTripIsBitIdentical) {
  const auto dir = scratch("manifest");
  auto ds = generate_synthetic(small(12, 0.5, 11));
  assign_splits(ds, split(ds.size(), {0.7, 0.15, 0.15}, 11));
  save_manifest(ds, dir / "m.jsonl");
  const auto back = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].id, ds[i].id);
    EXPECT_EQ(back[i].text, ds[i].text);
    EXPECT_EQ(back[i].label, ds[i].label);
    EXPECT_EQ(back[i].split, ds[i].split);
    EXPECT_EQ(back[i].latent, ds[i].latent);
    EXPECT_EQ(back[i].audio.samples, ds[i].audio.samples);
    EXPECT_EQ(back[i].frames.values(), ds[i].frames.values());
  }
  const auto dir2 = scratch("manifest2");
  save_manifest(back, dir2 / "m.jsonl");
  EXPECT_EQ(slurp(dir / "m.jsonl"), slurp(dir2 / "m.jsonl"));
  EXPECT_EQ(slurp(dir / "frames/syn00003.ten"), slurp(dir2 / "frames/syn00003.ten"));
  EXPECT_EQ(slurp(dir / "audio/syn00003.f32"), slurp(dir2 / "audio/syn00003.f32"));
}

TEST(Manifest, MalformedLineIsCited) {
  const auto dir = scratch("malformed");
  save_manifest(generate_synthetic(small(8, 1.0, 12)), dir / "m.jsonl");
  std::string text = slurp(dir / "m.jsonl");
  // Corrupt the seventh record.
  std::size_t pos = 0;
  for (int i = 0; i < 6; ++i) pos = text.find('\n', pos) + 1;
  text.insert(pos, "{not json");
  std::ofstream(dir / "bad.jsonl") << text;
  try {
    load_manifest(dir / "bad.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 7u);
  }
  std::ofstream(dir / "missing_field.jsonl") << "{\"id\":\"x\",\"text\":\"hi\"}\n";
  EXPECT_THROW(load_manifest(dir / "missing_field.jsonl"), ParseError);
  std::ofstream(dir / "missing_file.jsonl")
      << "{\"id\":\"x\",\"audio_path\":\"nope.f32\",\"text\":\"hi\",\"frames_path\":\"nope.ten\",\"label\":0}\n";
  EXPECT_THROW(load_manifest(dir / "missing_file.jsonl"), MissingFile);
  EXPECT_THROW(load_manifest(dir / "absent.jsonl"), MissingFile);
}

}  // namespace
}  // namespace cormult::data
