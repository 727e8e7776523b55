#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vbridge/lexicon.hpp"
#include "vbridge/segmentation.hpp"

namespace vbridge {

/// Positional relation between a query token w and a similar token w'.
/// Subword*: w' is a piece of w at that position. Hyper*: w' contains w, with
/// w at that position inside w'.
enum class Relation : std::uint8_t {
  SubwordPrefix = 0,
  SubwordInfix,
  SubwordSuffix,
  HyperPrefix,
  HyperInfix,
  HyperSuffix,
};
inline constexpr std::size_t kNumRelations = 6;

std::string_view to_string(Relation r);
std::optional<Relation> relation_from_string(std::string_view s);

struct SimilarEntry {
  Token token;
  TokenId id = -1;  // id in the source vocabulary
  Relation relation = Relation::SubwordPrefix;

  friend bool operator==(const SimilarEntry&, const SimilarEntry&) = default;
};

/// Morphologically similar source tokens of a query.
struct SimilarSet {
  Token query;
  std::vector<SimilarEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

/// Maps every surface substring (in code points, up to max_length) of the
/// vocabulary to the ids of tokens whose surface contains it.
class SubstringIndex {
 public:
  static constexpr std::size_t kDefaultMaxLength = 12;

  explicit SubstringIndex(const Vocabulary& vocab, std::size_t max_length = kDefaultMaxLength);

  // Ids (ascending) of tokens whose surface contains `s`. Queries longer than
  // max_length scan the vocabulary.
  std::vector<TokenId> lookup(std::string_view s) const;
  std::size_t max_length() const { return max_length_; }

 private:
  const Vocabulary* vocab_;
  std::size_t max_length_;
  std::unordered_map<std::string, std::vector<TokenId>> postings_;
};

struct MorphConfig {
  std::size_t max_hyperwords = 64;  // 0 disables the cap
  std::size_t index_max_length = SubstringIndex::kDefaultMaxLength;
};

// Pieces of w under the source segmenter that are source-vocabulary tokens.
// A single-piece segmentation contributes nothing.
std::vector<SimilarEntry> subwords_of(const Token& w, const SegmentationModel& segmenter,
                                      const Vocabulary& vocab);

// Source tokens whose surface strictly contains w's surface, classified by
// the first admissible occurrence. A non-continuation w only matches at the
// start of a non-continuation w'; a continuation w never matches at position
// 0 of a non-continuation w'. Capped to the `max_hyperwords` most frequent.
std::vector<SimilarEntry> hyperwords_of(const Token& w, const Vocabulary& vocab,
                                        const SubstringIndex& index,
                                        std::size_t max_hyperwords = 64);

// Relation of w inside hyperword candidate w', if admissible.
std::optional<Relation> hyper_relation(const Token& w, const Token& candidate);

// Union of subwords and hyperwords; falls back to character pieces of w that
// are in the vocabulary. May be empty.
SimilarSet similar_set(const Token& w, const SegmentationModel& segmenter, const Vocabulary& vocab,
                       const SubstringIndex& index, const MorphConfig& config = {});

/// Owns the substring index for one source vocabulary.
class SimilarSetBuilder {
 public:
  SimilarSetBuilder(const SegmentationModel& segmenter, const Vocabulary& vocab,
                    MorphConfig config = {});

  SimilarSet operator()(const Token& w) const {
    return similar_set(w, *segmenter_, *vocab_, index_, config_);
  }
  const Vocabulary& vocab() const { return *vocab_; }

 private:
  const SegmentationModel* segmenter_;
  const Vocabulary* vocab_;
  MorphConfig config_;
  SubstringIndex index_;
};

// `<query>\t<entry>\t<relation>` per entry.
void write_similar_sets(std::ostream& out, std::span<const SimilarSet> sets);

}  // namespace vbridge
