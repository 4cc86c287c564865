#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "expsolve/types.hpp"

namespace expsolve {

/// Byte-level BPE over whitespace-separated words with an end-of-word marker.
///
/// Ids: 0 = <pad>, 1 = <oov>, then the base alphabet in byte order, then
/// each new symbol in merge order. Merges never cross word boundaries.
class TokenizerModel {
 public:
  static constexpr TokenId kPadId = 0;
  static constexpr TokenId kOovId = 1;
  static constexpr std::string_view kEndOfWord = "</w>";
  /// 2^12 merge-and-alphabet symbols plus <pad> and <oov>.
  static constexpr Index kDefaultVocab = (Index{1} << 12) + 2;

  using Merge = std::pair<std::string, std::string>;

  /// Greedy highest-count pair merges until the vocabulary (with <pad>/<oov>)
  /// reaches target_vocab; ties go to the lexicographically smallest pair.
  /// Stops early when no pair is left; vocab_size() then reports what was reached.
  static TokenizerModel train(const std::vector<std::string>& documents, Index target_vocab);

  /// Ids of every word in text; bytes never seen in training map to <oov>.
  /// Const and free of shared mutable state, so documents may be encoded
  /// concurrently.
  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<std::vector<TokenId>> encode_documents(const std::vector<std::string>& docs) const;
  /// Symbols of one whitespace-free word after applying the merges.
  std::vector<std::string> segment_word(std::string_view word) const;

  Index vocab_size() const { return static_cast<Index>(symbols_.size()); }
  TokenId pad_id() const { return kPadId; }
  TokenId oov_id() const { return kOovId; }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  /// kOovId when the symbol is not in the vocabulary.
  TokenId id_of(const std::string& symbol) const;

  /// Text format: "expsolve-bpe <vocab>", "alphabet <n>" + n symbol lines,
  /// "merges <m>" + m lines "left right". Bytes <= 0x20, 0x7f and '\' are
  /// written as \xHH.
  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static TokenizerModel load(std::istream& in);
  static TokenizerModel load(const std::filesystem::path& path);

 private:
  void rebuild_vocab();

  std::vector<std::string> alphabet_;
  std::vector<Merge> merges_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> ids_;
  std::unordered_map<std::string, std::size_t> merge_rank_;  // key: left + '\0' + right
};

/// Splits on ASCII whitespace.
std::vector<std::string_view> split_words(std::string_view text);

}  // namespace expsolve
