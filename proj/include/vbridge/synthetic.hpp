#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vbridge/lexicon.hpp"

namespace vbridge {

struct SyntheticConfig {
  int num_topics = 10;
  int stems_per_topic = 12;
  double zipf_exponent = 1.0;
  double on_topic = 0.85;  // probability a content word comes from the sentence topic
  // Probability that a content word carries a suffix, per domain.
  double upstream_suffix_rate = 0.15;
  double downstream_suffix_rate = 0.75;
  int min_words = 5;
  int max_words = 12;
  std::uint64_t seed = 2024;
};

/// A toy morphological language. Content words are a stem, optionally
/// followed by a suffix; each suffix class (including "no suffix") is
/// announced by its own marker word, and stems cluster into topics shared
/// within a sentence. Suffixes use letters that never occur in stems, so
/// morpheme boundaries stay visible to BPE.
///
/// The domains differ in two ways: suffixed forms are rare upstream and
/// common downstream, and stems are drawn with opposite frequency rankings.
/// Words that are frequent downstream are therefore rare upstream, while
/// their stems and suffixes are still well attested there.
class SyntheticLanguage {
 public:
  explicit SyntheticLanguage(SyntheticConfig config = {});

  Corpus upstream(std::size_t sentences, std::uint64_t seed) const;
  Corpus downstream(std::size_t sentences, std::uint64_t seed) const;

  const std::vector<std::vector<std::string>>& stems() const { return stems_; }
  static const std::vector<std::string>& suffixes();

 private:
  Corpus generate(std::size_t sentences, std::uint64_t seed, bool downstream) const;

  SyntheticConfig config_;
  std::vector<std::vector<std::string>> stems_;  // per topic, in upstream rank order
  std::vector<std::string> markers_;             // [0] bare stem, then one per suffix
  std::vector<std::string> fillers_;
  std::vector<double> zipf_cdf_;
};

}  // namespace vbridge
