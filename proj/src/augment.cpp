#include "vbridge/augment.hpp"

#include <algorithm>
#include <numeric>

namespace vbridge {

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string(name) + " must be in [0, 1]");
}

bool coin(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

}  // namespace

Token merge_tokens(std::span<const Token> pieces) {
  if (pieces.empty()) throw Error("nothing to merge");
  Token merged = pieces.front();
  for (std::size_t i = 1; i < pieces.size(); ++i) merged.surface += pieces[i].surface;
  return merged;
}

std::vector<Token> split_token(const Token& token, std::span<const std::size_t> cuts) {
  auto offsets = code_point_offsets(token.surface);
  const std::size_t length = offsets.size() - 1;
  std::vector<Token> pieces;
  std::size_t start = 0;
  for (std::size_t k = 0; k <= cuts.size(); ++k) {
    std::size_t stop = k < cuts.size() ? cuts[k] : length;
    if (stop <= start || stop > length || (k < cuts.size() && stop == length)) {
      throw Error("invalid split offsets for " + token.rendered());
    }
    pieces.emplace_back(token.surface.substr(offsets[start], offsets[stop] - offsets[start]),
                        k == 0 ? token.continuation : true);
    start = stop;
  }
  return pieces;
}

Segmented random_merge(const Segmented& input, Rng& rng, double p_merge) {
  check_probability(p_merge, "p_merge");
  Segmented out;
  out.spans.reserve(input.spans.size());
  for (const Span& span : input.spans) {
    std::span<const Token> word(input.tokens.data() + span.begin, span.size());
    std::size_t begin = out.tokens.size();
    if (word.size() >= 2 && coin(rng, p_merge)) {
      std::size_t start = std::uniform_int_distribution<std::size_t>(0, word.size() - 2)(rng);
      std::size_t len = std::uniform_int_distribution<std::size_t>(2, word.size() - start)(rng);
      out.tokens.insert(out.tokens.end(), word.begin(), word.begin() + static_cast<long>(start));
      out.tokens.push_back(merge_tokens(word.subspan(start, len)));
      out.tokens.insert(out.tokens.end(), word.begin() + static_cast<long>(start + len), word.end());
    } else {
      out.tokens.insert(out.tokens.end(), word.begin(), word.end());
    }
    out.spans.push_back({begin, out.tokens.size()});
  }
  return out;
}

Segmented random_split(const Segmented& input, Rng& rng, double p_split, int max_pieces) {
  check_probability(p_split, "p_split");
  if (max_pieces < 2) throw Error("max_pieces must be at least 2");
  Segmented out;
  out.spans.reserve(input.spans.size());
  for (const Span& span : input.spans) {
    std::size_t begin = out.tokens.size();
    for (std::size_t i = span.begin; i < span.end; ++i) {
      const Token& token = input.tokens[i];
      std::size_t length = code_point_count(token.surface);
      if (length >= 2 && coin(rng, p_split)) {
        std::size_t most = std::min<std::size_t>(static_cast<std::size_t>(max_pieces), length);
        std::size_t pieces = std::uniform_int_distribution<std::size_t>(2, most)(rng);
        // Choose pieces-1 distinct cut offsets from 1..length-1.
        std::vector<std::size_t> offsets(length - 1);
        std::iota(offsets.begin(), offsets.end(), 1);
        for (std::size_t k = 0; k + 1 < pieces; ++k) {
          std::size_t j = std::uniform_int_distribution<std::size_t>(k, offsets.size() - 1)(rng);
          std::swap(offsets[k], offsets[j]);
        }
        offsets.resize(pieces - 1);
        std::sort(offsets.begin(), offsets.end());
        for (auto& piece : split_token(token, offsets)) out.tokens.push_back(std::move(piece));
      } else {
        out.tokens.push_back(token);
      }
    }
    out.spans.push_back({begin, out.tokens.size()});
  }
  return out;
}

AugmentedPair make_pair(const Segmented& s_p, const Vocabulary& vocab, Rng& rng, const AugmentConfig& config) {
  AugmentedPair pair;
  pair.s_p = s_p;
  pair.s_prime = random_split(random_merge(s_p, rng, config.p_merge), rng, config.p_split, config.max_pieces);
  for (std::size_t i = 0; i < pair.s_prime.tokens.size(); ++i) {
    if (!vocab.contains(pair.s_prime.tokens[i])) pair.unseen.push_back(i);
  }
  return pair;
}

AugmentedPair make_pair(const std::vector<std::string>& words, const SegmentationModel& segmenter,
                        const Vocabulary& vocab, Rng& rng, const AugmentConfig& config) {
  return make_pair(segment_sentence(segmenter, words), vocab, rng, config);
}

std::vector<std::string> word_strings(const Segmented& s) {
  std::vector<std::string> words;
  words.reserve(s.spans.size());
  for (const Span& span : s.spans) {
    std::string w;
    for (std::size_t i = span.begin; i < span.end; ++i) w += s.tokens[i].surface;
    words.push_back(std::move(w));
  }
  return words;
}

}  // namespace vbridge
