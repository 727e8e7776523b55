#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vbridge/lexicon.hpp"

namespace vbridge {

struct Merge {
  Token left;
  Token right;

  // The merged token inherits the continuation flag of its left piece.
  Token merged() const { return Token(left.surface + right.surface, left.continuation); }
  friend bool operator==(const Merge&, const Merge&) = default;
};

/// Learned BPE merge list. Merges are applied greedily in rank order.
class SegmentationModel {
 public:
  static constexpr std::string_view kHeader = "#version vocab-bridge-bpe-1";

  SegmentationModel() = default;
  explicit SegmentationModel(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  std::optional<std::size_t> rank(const Token& left, const Token& right) const;

  // Segments a word. Every piece after the first is a continuation piece; the
  // first piece carries `continuation`.
  std::vector<Token> segment(std::string_view word, bool continuation = false) const;
  std::vector<Token> segment(const Token& token) const {
    return segment(token.surface, token.continuation);
  }

  // Model holding only the first `n` merges.
  SegmentationModel prefix(std::size_t n) const;

  void save(const std::filesystem::path& path) const;
  static SegmentationModel load(const std::filesystem::path& path);

  friend bool operator==(const SegmentationModel& a, const SegmentationModel& b) {
    return a.merges_ == b.merges_;
  }

 private:
  static std::string key(const Token& left, const Token& right) {
    return left.rendered() + ' ' + right.rendered();
  }

  std::vector<Merge> merges_;
  std::unordered_map<std::string, std::size_t> rank_;
};

// Greedy highest-frequency pair merging over the word-frequency table. Ties go
// to the smallest (left, right) pair under Token ordering (surface first, then
// non-continuation before continuation). Stops early once no pair occurs at
// least twice.
SegmentationModel learn_bpe(const Corpus& corpus, std::size_t num_merges);

std::vector<Token> segment_word(const SegmentationModel& model, std::string_view word);

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// Token sequence of a sentence plus the token range of each source word.
struct Segmented {
  std::vector<Token> tokens;
  std::vector<Span> spans;

  std::size_t num_words() const { return spans.size(); }
  friend bool operator==(const Segmented&, const Segmented&) = default;
};

Segmented segment_sentence(const SegmentationModel& model, const std::vector<std::string>& words);
Segmented segment_sentence(const SegmentationModel& model, std::string_view sentence);

// Segments every sentence, memoizing repeated words.
std::vector<Segmented> segment_corpus(const SegmentationModel& model, const Corpus& corpus);

// Maps tokens to vocabulary ids; throws on tokens outside the vocabulary.
std::vector<TokenId> to_ids(const Vocabulary& vocab, const std::vector<Token>& tokens);

}  // namespace vbridge
