#include "cormult/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "cormult/errors.hpp"
#include "cormult/nn.hpp"
#include "cormult/ops.hpp"

namespace cormult::text {
namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t lo = i, hi = j;
    while (lo < hi && is_punct(static_cast<unsigned char>(text[lo]))) ++lo;
    while (hi > lo && is_punct(static_cast<unsigned char>(text[hi - 1]))) --hi;
    if (lo < hi) {
      std::string tok(text.substr(lo, hi - lo));
      for (auto& c : tok) {
        if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() : Vocabulary({std::string(kPadToken), std::string(kUnkToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw FormatError("vocabulary needs PAD and UNK entries");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw FormatError("duplicate token '" + tokens_[i] + "'");
  }
}

std::size_t Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw OutOfRange("token id " + std::to_string(id));
  return tokens_[id];
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_count) {
  if (corpus.empty()) throw EmptyCorpus("no documents");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus) {
    for (auto& tok : tokenize(doc)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && tok != kPadToken && tok != kUnkToken) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken)};
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

TokenSequence encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t s) {
  if (s == 0) throw BadConfig("sequence length must be at least 1");
  TokenSequence seq;
  seq.true_length = std::min(tokens.size(), s);
  seq.ids.assign(s, Vocabulary::kPad);
  for (std::size_t i = 0; i < seq.true_length; ++i) seq.ids[i] = vocab.id(tokens[i]);
  return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < seq.true_length; ++i) out.push_back(vocab.token(seq.ids[i]));
  return out;
}

}  // namespace cormult::text

namespace cormult::vision {

Tensor pool_frames(const Tensor& x, std::size_t target) {
  if (x.rank() != 2) throw ShapeMismatch("frame features must be [f, i], got " + shape_str(x.shape()));
  if (target == 0) throw BadConfig("target frame count must be at least 1");
  if (x.dim(0) == target) return x;
  return ops::matmul(nn::window_pool_matrix(x.dim(0), target), x);
}

}  // namespace cormult::vision
