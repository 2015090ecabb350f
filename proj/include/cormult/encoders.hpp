#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cormult/tensor.hpp"

namespace cormult::text {

// Lowercases ASCII letters, splits on whitespace and strips leading and
// trailing ASCII punctuation; tokens left empty are dropped.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary();
  // tokens[0] and tokens[1] must be the PAD and UNK spellings.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  // UNK for anything not in the vocabulary.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

// Ids by descending count, ties lexicographic. Throws EmptyCorpus.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_count = 1);

struct TokenSequence {
  std::vector<std::size_t> ids;  // exactly s entries
  std::size_t true_length = 0;
};

TokenSequence encode(std::span<const std::string> tokens, const Vocabulary& vocab,
                     std::size_t s = 32);
// Tokens of the non-PAD prefix.
std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace cormult::text

namespace cormult::vision {

// Mean-pools frames x[f, i] into exactly target rows; see window_pool_matrix.
Tensor pool_frames(const Tensor& x, std::size_t target);

}  // namespace cormult::vision
