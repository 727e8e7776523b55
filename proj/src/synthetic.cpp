#include "vbridge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace vbridge {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

char pick(std::string_view letters, Rng& rng) {
  return letters[std::uniform_int_distribution<std::size_t>(0, letters.size() - 1)(rng)];
}

}  // namespace

// Built from letters absent from stems and function words.
const std::vector<std::string>& SyntheticLanguage::suffixes() {
  static const std::vector<std::string> kSuffixes = {"xy", "wyh", "jyx", "cw", "hyq"};
  return kSuffixes;
}

SyntheticLanguage::SyntheticLanguage(SyntheticConfig config) : config_(config) {
  if (config_.num_topics <= 0 || config_.stems_per_topic <= 0) throw Error("synthetic language needs stems");
  if (config_.min_words <= 0 || config_.max_words < config_.min_words) throw Error("bad sentence length range");
  Rng rng(config_.seed);
  std::set<std::string> used;
  // Function words are vowel-initial; stems are consonant-initial.
  auto function_word = [&] {
    std::string w;
    do {
      w = {pick(kVowels, rng), pick(kConsonants, rng)};
      if (std::uniform_int_distribution<int>(0, 1)(rng)) w.push_back(pick(kVowels, rng));
    } while (!used.insert(w).second);
    return w;
  };
  for (std::size_t i = 0; i <= suffixes().size(); ++i) markers_.push_back(function_word());
  for (int i = 0; i < 6; ++i) fillers_.push_back(function_word());

  std::uniform_int_distribution<int> syllables(1, 2);
  stems_.resize(static_cast<std::size_t>(config_.num_topics));
  for (auto& topic : stems_) {
    for (int s = 0; s < config_.stems_per_topic; ++s) {
      std::string stem;
      do {
        stem.clear();
        for (int k = syllables(rng); k > 0; --k) {
          stem.push_back(pick(kConsonants, rng));
          stem.push_back(pick(kVowels, rng));
        }
        stem.push_back(pick(kConsonants, rng));
      } while (!used.insert(stem).second);
      topic.push_back(std::move(stem));
    }
  }
  double total = 0;
  for (int r = 1; r <= config_.stems_per_topic; ++r) {
    total += std::pow(static_cast<double>(r), -config_.zipf_exponent);
    zipf_cdf_.push_back(total);
  }
  for (auto& x : zipf_cdf_) x /= total;
}

Corpus SyntheticLanguage::generate(std::size_t sentences, std::uint64_t seed, bool downstream) const {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> length(config_.min_words, config_.max_words);
  std::uniform_int_distribution<std::size_t> topic_pick(0, stems_.size() - 1);
  std::uniform_int_distribution<std::size_t> suffix_pick(0, suffixes().size() - 1);
  std::uniform_int_distribution<std::size_t> filler_pick(0, fillers_.size() - 1);
  const auto n_stems = static_cast<std::size_t>(config_.stems_per_topic);
  const double suffix_rate = downstream ? config_.downstream_suffix_rate : config_.upstream_suffix_rate;

  auto pick_stem = [&](std::size_t topic) -> const std::string& {
    double u = unit(rng);
    auto rank = static_cast<std::size_t>(std::lower_bound(zipf_cdf_.begin(), zipf_cdf_.end(), u) - zipf_cdf_.begin());
    rank = std::min(rank, n_stems - 1);
    if (downstream) rank = n_stems - 1 - rank;
    return stems_[topic][rank];
  };

  std::vector<std::string> lines;
  lines.reserve(sentences);
  for (std::size_t s = 0; s < sentences; ++s) {
    std::size_t topic = topic_pick(rng);
    int target = length(rng);
    std::string line;
    int words = 0;
    auto emit = [&](const std::string& w) {
      if (!line.empty()) line.push_back(' ');
      line += w;
      ++words;
    };
    while (words < target) {
      if (unit(rng) < 0.15) {
        emit(fillers_[filler_pick(rng)]);
        continue;
      }
      std::size_t cls = unit(rng) < suffix_rate ? 1 + suffix_pick(rng) : 0;
      emit(markers_[cls]);
      std::size_t t = unit(rng) < config_.on_topic ? topic : topic_pick(rng);
      emit(cls == 0 ? pick_stem(t) : pick_stem(t) + suffixes()[cls - 1]);
    }
    lines.push_back(std::move(line));
  }
  return Corpus::from_lines(lines);
}

Corpus SyntheticLanguage::upstream(std::size_t sentences, std::uint64_t seed) const {
  return generate(sentences, seed, false);
}

Corpus SyntheticLanguage::downstream(std::size_t sentences, std::uint64_t seed) const {
  return generate(sentences, seed, true);
}

}  // namespace vbridge
