#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "cormult/encoders.hpp"
#include "cormult/errors.hpp"
#include "cormult/rng.hpp"
#include "test_util.hpp"

namespace cormult {
namespace {

using text::Vocabulary;
using Tokens = std::vector<std::string>;

std::string join(const Tokens& t) {
  std::string s;
  for (const auto& x : t) s += (s.empty() ? "" : " ") + x;
  return s;
}

std::vector<std::string> seeded_corpus(std::uint64_t seed, std::size_t n) {
  const std::vector<std::string> words{"Good", "movie!", "bad,",  "(really)", "the", "A",
                                       "plot...", "\"great\"", "so-so", "it's", "?!", "Ok"};
  Rng rng(seed);
  std::vector<std::string> docs;
  for (std::size_t d = 0; d < n; ++d) {
    std::string doc;
    const std::size_t len = rng.index(12);
    for (std::size_t i = 0; i < len; ++i) {
      doc += words[rng.index(words.size())];
      doc += rng.bernoulli(0.3) ? "\t " : " ";
    }
    docs.push_back(doc);
  }
  return docs;
}

TEST(Tokenize, PinnedRules) {
  EXPECT_EQ(text::tokenize("Good movie!"), (Tokens{"good", "movie"}));
  EXPECT_EQ(text::tokenize(""), Tokens{});
  EXPECT_EQ(text::tokenize("  ?! \t it's  (SO-so) "), (Tokens{"it's", "so-so"}));
}

TEST(Tokenize, IdempotentOnSeededCorpus) {
  for (const auto& doc : seeded_corpus(1, 200)) {
    const auto once = text::tokenize(doc);
    EXPECT_EQ(text::tokenize(join(once)), once) << doc;
  }
}

TEST(BuildVocab, FrequencyOrderAndMinCount) {
  const std::vector<std::string> corpus{"a a b"};
  const auto v = text::build_vocab(corpus);
  EXPECT_EQ(v.tokens(), (Tokens{"<pad>", "<unk>", "a", "b"}));
  EXPECT_EQ(v.id("a"), 2u);
  const auto v2 = text::build_vocab(corpus, 2);
  EXPECT_EQ(v2.size(), 3u);
  EXPECT_EQ(v2.id("b"), Vocabulary::kUnk);
  EXPECT_THROW(text::build_vocab(std::vector<std::string>{}), EmptyCorpus);
}

TEST(BuildVocab, TiesBreakLexicographically) {
  const std::vector<std::string> corpus{"z y x y z w"};
  EXPECT_EQ(text::build_vocab(corpus).tokens(), (Tokens{"<pad>", "<unk>", "y", "z", "w", "x"}));
}

TEST(BuildVocab, ShuffledCorpusGivesSameVocab) {
  auto corpus = seeded_corpus(2, 100);
  const auto ref = text::build_vocab(corpus);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(corpus.begin(), corpus.end(), rng.engine());
    EXPECT_EQ(text::build_vocab(corpus), ref);
  }
  // Dense ids.
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(ref.id(ref.token(i)), i);
}

TEST(Encode, PadTruncateAndUnknown) {
  const std::vector<std::string> corpus{"a a b c"};
  const auto v = text::build_vocab(corpus);
  const auto empty = text::encode(Tokens{}, v, 5);
  EXPECT_EQ(empty.ids, std::vector<std::size_t>(5, Vocabulary::kPad));
  EXPECT_EQ(empty.true_length, 0u);
  EXPECT_EQ(text::encode(Tokens{"zzz"}, v, 2).ids, (std::vector<std::size_t>{Vocabulary::kUnk, 0}));
  const auto long_seq = text::encode(Tokens{"a", "b", "c", "a", "b"}, v, 2);
  EXPECT_EQ(long_seq.ids, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(long_seq.true_length, 2u);
}

TEST(Encode, FixedLengthAndRoundTrip) {
  const auto corpus = seeded_corpus(4, 50);
  const auto v = text::build_vocab(corpus);
  for (const auto& doc : corpus) {
    const auto toks = text::tokenize(doc);
    for (std::size_t s : {1u, 4u, 32u}) {
      const auto seq = text::encode(toks, v, s);
      EXPECT_EQ(seq.ids.size(), s);
      for (std::size_t i = seq.true_length; i < s; ++i) EXPECT_EQ(seq.ids[i], Vocabulary::kPad);
      for (auto id : seq.ids) EXPECT_LT(id, v.size());
      if (toks.size() <= s) {
        EXPECT_EQ(text::decode(seq, v), toks);
      }
    }
  }
}

TEST(PoolFrames, HandCasesAndRules) {
  const Tensor x = Tensor::from({4, 1}, {1, 2, 3, 4});
  testing::expect_values(vision::pool_frames(x, 2), {1.5, 3.5}, 1e-15);
  EXPECT_TRUE(vision::pool_frames(x, 4).same_values(x));
  // Last window absorbs the remainder: 5 -> 2 is [1,2] and [3,4,5].
  testing::expect_values(vision::pool_frames(Tensor::from({5, 1}, {1, 2, 3, 4, 5}), 2), {1.5, 4.0}, 1e-15);
  // Too few frames: last frame repeated.
  testing::expect_values(vision::pool_frames(Tensor::from({2, 1}, {7, 9}), 4), {7, 9, 9, 9}, 0.0);
}

TEST(PoolFrames, ConstantStaysConstantAndMeanIsPreserved) {
  const Tensor c({13, 3}, 2.5);
  for (std::size_t t : {1u, 4u, 13u, 20u}) {
    const Tensor p = vision::pool_frames(c, t);
    for (double v : p.values()) EXPECT_NEAR(v, 2.5, 1e-14);
  }
  const Tensor x = testing::random_tensor({12, 5}, 5);
  for (std::size_t t : {1u, 2u, 3u, 4u, 6u, 12u}) {
    const Tensor p = vision::pool_frames(x, t);
    EXPECT_EQ(p.shape(), (Shape{t, 5}));
    for (std::size_t j = 0; j < 5; ++j) {
      double a = 0.0, b = 0.0;
      for (std::size_t r = 0; r < 12; ++r) a += x.at({r, j}) / 12.0;
      for (std::size_t r = 0; r < t; ++r) b += p.at({r, j}) / static_cast<double>(t);
      EXPECT_NEAR(a, b, 1e-12);
    }
  }
  EXPECT_THROW(vision::pool_frames(Tensor::zeros({3}), 2), ShapeMismatch);
}

}  // namespace
}  // namespace cormult
