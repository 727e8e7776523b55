#include "vbridge/morphset.hpp"

#include <algorithm>
#include <set>

namespace vbridge {

namespace {

constexpr std::array<std::string_view, kNumRelations> kRelationNames = {
    "SubwordPrefix", "SubwordInfix", "SubwordSuffix", "HyperPrefix", "HyperInfix", "HyperSuffix",
};

Relation subword_relation(std::size_t index, std::size_t count) {
  if (index == 0) return Relation::SubwordPrefix;
  if (index + 1 == count) return Relation::SubwordSuffix;
  return Relation::SubwordInfix;
}

// Subword entries for the given pieces; pieces outside the vocabulary are skipped.
std::vector<SimilarEntry> piece_entries(const std::vector<Token>& pieces, const Vocabulary& vocab) {
  std::vector<SimilarEntry> out;
  if (pieces.size() < 2) return out;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (auto id = vocab.find(pieces[i])) {
      out.push_back({pieces[i], *id, subword_relation(i, pieces.size())});
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(Relation r) { return kRelationNames[static_cast<std::size_t>(r)]; }

std::optional<Relation> relation_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNumRelations; ++i) {
    if (kRelationNames[i] == s) return static_cast<Relation>(i);
  }
  return std::nullopt;
}

SubstringIndex::SubstringIndex(const Vocabulary& vocab, std::size_t max_length)
    : vocab_(&vocab), max_length_(max_length) {
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const std::string& surface = vocab.tokens()[id].surface;
    auto offsets = code_point_offsets(surface);
    std::size_t n = offsets.size() - 1;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j <= n && j - i <= max_length_; ++j) {
        auto& ids = postings_[surface.substr(offsets[i], offsets[j] - offsets[i])];
        if (ids.empty() || ids.back() != static_cast<TokenId>(id)) ids.push_back(static_cast<TokenId>(id));
      }
    }
  }
}

std::vector<TokenId> SubstringIndex::lookup(std::string_view s) const {
  if (code_point_count(s) > max_length_) {
    std::vector<TokenId> ids;
    for (std::size_t id = 0; id < vocab_->size(); ++id) {
      if (vocab_->tokens()[id].surface.find(s) != std::string::npos) ids.push_back(static_cast<TokenId>(id));
    }
    return ids;
  }
  auto it = postings_.find(std::string(s));
  if (it == postings_.end()) return {};
  return it->second;
}

std::vector<SimilarEntry> subwords_of(const Token& w, const SegmentationModel& segmenter,
                                      const Vocabulary& vocab) {
  return piece_entries(segmenter.segment(w), vocab);
}

std::optional<Relation> hyper_relation(const Token& w, const Token& candidate) {
  const std::string& needle = w.surface;
  const std::string& hay = candidate.surface;
  if (hay.size() <= needle.size()) return std::nullopt;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    bool admissible = w.continuation ? !(pos == 0 && !candidate.continuation)
                                     : (pos == 0 && !candidate.continuation);
    if (!admissible) continue;
    if (pos == 0) return Relation::HyperPrefix;
    if (pos + needle.size() == hay.size()) return Relation::HyperSuffix;
    return Relation::HyperInfix;
  }
  return std::nullopt;
}

std::vector<SimilarEntry> hyperwords_of(const Token& w, const Vocabulary& vocab,
                                        const SubstringIndex& index, std::size_t max_hyperwords) {
  std::vector<SimilarEntry> out;
  for (TokenId id : index.lookup(w.surface)) {
    const Token& candidate = vocab.token(id);
    if (auto rel = hyper_relation(w, candidate)) out.push_back({candidate, id, *rel});
  }
  if (max_hyperwords != 0 && out.size() > max_hyperwords) {
    std::stable_sort(out.begin(), out.end(), [&](const SimilarEntry& a, const SimilarEntry& b) {
      return vocab.freq(a.id) > vocab.freq(b.id);
    });
    out.resize(max_hyperwords);
    std::sort(out.begin(), out.end(), [](const SimilarEntry& a, const SimilarEntry& b) { return a.id < b.id; });
  }
  return out;
}

SimilarSet similar_set(const Token& w, const SegmentationModel& segmenter, const Vocabulary& vocab,
                       const SubstringIndex& index, const MorphConfig& config) {
  SimilarSet set{w, {}};
  std::set<std::pair<TokenId, Relation>> seen;
  auto add = [&](std::vector<SimilarEntry> entries) {
    for (auto& e : entries) {
      if (e.token == w) continue;
      if (seen.emplace(e.id, e.relation).second) set.entries.push_back(std::move(e));
    }
  };
  add(subwords_of(w, segmenter, vocab));
  add(hyperwords_of(w, vocab, index, config.max_hyperwords));
  if (set.empty()) add(piece_entries(SegmentationModel().segment(w), vocab));
  return set;
}

SimilarSetBuilder::SimilarSetBuilder(const SegmentationModel& segmenter, const Vocabulary& vocab,
                                     MorphConfig config)
    : segmenter_(&segmenter), vocab_(&vocab), config_(config), index_(vocab, config.index_max_length) {}

void write_similar_sets(std::ostream& out, std::span<const SimilarSet> sets) {
  for (const auto& set : sets) {
    for (const auto& e : set.entries) {
      out << set.query.rendered() << '\t' << e.token.rendered() << '\t' << to_string(e.relation) << '\n';
    }
  }
}

}  // namespace vbridge
