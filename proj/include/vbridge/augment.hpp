#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vbridge/lexicon.hpp"
#include "vbridge/segmentation.hpp"

namespace vbridge {

struct AugmentConfig {
  double p_merge = 0.15;
  double p_split = 0.15;
  int max_pieces = 3;
};

/// A sentence under the pretraining segmentation (s_p) and after random
/// split/merge edits (s_prime). `unseen` lists s_prime positions whose token is
/// outside the pretraining vocabulary.
struct AugmentedPair {
  Segmented s_p;
  Segmented s_prime;
  std::vector<std::size_t> unseen;
};

// Concatenates consecutive pieces; the result keeps the first piece's flag.
Token merge_tokens(std::span<const Token> pieces);
// Cuts a token at the given code-point offsets (strictly increasing, inside
// (0, length)). Pieces after the first are continuation tokens.
std::vector<Token> split_token(const Token& token, std::span<const std::size_t> cuts);

// Per word of >= 2 pieces, with probability p_merge, fuses a random run of
// >= 2 consecutive pieces into one token.
Segmented random_merge(const Segmented& input, Rng& rng, double p_merge);
// Per token of >= 2 code points, with probability p_split, cuts it into
// 2..max_pieces pieces at distinct random offsets.
Segmented random_split(const Segmented& input, Rng& rng, double p_split, int max_pieces);

AugmentedPair make_pair(const std::vector<std::string>& words, const SegmentationModel& segmenter,
                        const Vocabulary& vocab, Rng& rng, const AugmentConfig& config = {});
// Same, starting from an existing vanilla segmentation.
AugmentedPair make_pair(const Segmented& s_p, const Vocabulary& vocab, Rng& rng,
                        const AugmentConfig& config = {});

// Marker-stripped characters of each word.
std::vector<std::string> word_strings(const Segmented& s);

}  // namespace vbridge
