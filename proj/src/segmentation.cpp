#include "vbridge/segmentation.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

namespace vbridge {

SegmentationModel::SegmentationModel(std::vector<Merge> merges) : merges_(std::move(merges)) {
  rank_.reserve(merges_.size());
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    merges_[i].left.validate();
    merges_[i].right.validate();
    if (!merges_[i].right.continuation) {
      throw Error("merge right piece must be a continuation token: " + merges_[i].right.rendered());
    }
    if (!rank_.emplace(key(merges_[i].left, merges_[i].right), i).second) {
      throw Error("duplicate merge " + merges_[i].left.rendered() + " " + merges_[i].right.rendered());
    }
  }
}

std::optional<std::size_t> SegmentationModel::rank(const Token& left, const Token& right) const {
  auto it = rank_.find(key(left, right));
  if (it == rank_.end()) return std::nullopt;
  return it->second;
}

std::vector<Token> SegmentationModel::segment(std::string_view word, bool continuation) const {
  std::vector<Token> pieces;
  auto offsets = code_point_offsets(word);
  pieces.reserve(offsets.size());
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    pieces.emplace_back(std::string(word.substr(offsets[i], offsets[i + 1] - offsets[i])),
                        i == 0 ? continuation : true);
  }
  if (rank_.empty()) return pieces;

  while (pieces.size() > 1) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
      auto r = rank(pieces[i], pieces[i + 1]);
      if (r && *r < best) best = *r;
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;
    const Merge& m = merges_[best];
    std::vector<Token> next;
    next.reserve(pieces.size());
    for (std::size_t i = 0; i < pieces.size();) {
      if (i + 1 < pieces.size() && pieces[i] == m.left && pieces[i + 1] == m.right) {
        next.push_back(m.merged());
        i += 2;
      } else {
        next.push_back(std::move(pieces[i]));
        ++i;
      }
    }
    pieces = std::move(next);
  }
  return pieces;
}

SegmentationModel SegmentationModel::prefix(std::size_t n) const {
  n = std::min(n, merges_.size());
  return SegmentationModel(std::vector<Merge>(merges_.begin(), merges_.begin() + static_cast<long>(n)));
}

void SegmentationModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << kHeader << '\n';
  for (const auto& m : merges_) out << m.left.rendered() << ' ' << m.right.rendered() << '\n';
}

SegmentationModel SegmentationModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw ParseError("expected header '" + std::string(kHeader) + "'", 1);
  }
  std::vector<Merge> merges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string left, right, extra;
    if (!(fields >> left >> right) || (fields >> extra)) {
      throw ParseError("expected '<left> <right>'", lineno);
    }
    merges.push_back({Token::parse(left), Token::parse(right)});
  }
  return SegmentationModel(std::move(merges));
}

// ---------------------------------------------------------------------------

namespace {

using PairKey = std::uint64_t;

PairKey pair_key(int left, int right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}
int key_left(PairKey k) { return static_cast<int>(k >> 32); }
int key_right(PairKey k) { return static_cast<int>(k & 0xffffffffu); }

class BpeLearner {
 public:
  explicit BpeLearner(const Corpus& corpus) : queue_(CandidateLess{&symbols_}) {
    std::map<std::string, std::int64_t> word_freq;
    for (const auto& sentence : corpus.sentences) {
      for (const auto& word : sentence) ++word_freq[word];
    }
    for (const auto& [word, freq] : word_freq) {
      std::vector<int> pieces;
      auto offsets = code_point_offsets(word);
      for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
        pieces.push_back(intern(Token(word.substr(offsets[i], offsets[i + 1] - offsets[i]), i != 0)));
      }
      words_.push_back(std::move(pieces));
      freqs_.push_back(freq);
    }
    for (std::size_t w = 0; w < words_.size(); ++w) add_pairs(static_cast<int>(w), +1);
  }

  std::vector<Merge> run(std::size_t num_merges) {
    std::vector<Merge> merges;
    while (merges.size() < num_merges && !queue_.empty()) {
      auto [count, best] = *queue_.begin();
      if (count < 2) break;
      int left = key_left(best), right = key_right(best);
      merges.push_back({symbols_[static_cast<std::size_t>(left)], symbols_[static_cast<std::size_t>(right)]});
      int merged = intern(merges.back().merged());

      auto affected_set = where_[best];
      std::vector<int> affected(affected_set.begin(), affected_set.end());
      for (int w : affected) {
        add_pairs(w, -1);
        auto& pieces = words_[static_cast<std::size_t>(w)];
        std::vector<int> next;
        next.reserve(pieces.size());
        for (std::size_t i = 0; i < pieces.size();) {
          if (i + 1 < pieces.size() && pieces[i] == left && pieces[i + 1] == right) {
            next.push_back(merged);
            i += 2;
          } else {
            next.push_back(pieces[i]);
            ++i;
          }
        }
        pieces = std::move(next);
        add_pairs(w, +1);
      }
      where_.erase(best);
    }
    return merges;
  }

 private:
  struct CandidateLess {
    const std::vector<Token>* symbols;
    bool operator()(const std::pair<std::int64_t, PairKey>& a,
                    const std::pair<std::int64_t, PairKey>& b) const {
      if (a.first != b.first) return a.first > b.first;
      if (a.second == b.second) return false;
      const auto& s = *symbols;
      const Token& al = s[static_cast<std::size_t>(key_left(a.second))];
      const Token& bl = s[static_cast<std::size_t>(key_left(b.second))];
      if (al != bl) return al < bl;
      return s[static_cast<std::size_t>(key_right(a.second))] <
             s[static_cast<std::size_t>(key_right(b.second))];
    }
  };

  int intern(const Token& t) {
    auto [it, inserted] = ids_.emplace(t, static_cast<int>(symbols_.size()));
    if (inserted) symbols_.push_back(t);
    return it->second;
  }

  void add_pairs(int w, int sign) {
    const auto& pieces = words_[static_cast<std::size_t>(w)];
    std::int64_t delta = sign * freqs_[static_cast<std::size_t>(w)];
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
      PairKey k = pair_key(pieces[i], pieces[i + 1]);
      auto it = counts_.find(k);
      std::int64_t old = it == counts_.end() ? 0 : it->second;
      if (old > 0) queue_.erase({old, k});
      std::int64_t now = old + delta;
      if (now > 0) {
        counts_[k] = now;
        queue_.insert({now, k});
      } else if (it != counts_.end()) {
        counts_.erase(it);
      }
      if (sign > 0) where_[k].insert(w);
    }
  }

  std::vector<Token> symbols_;
  std::unordered_map<Token, int, TokenHash> ids_;
  std::vector<std::vector<int>> words_;
  std::vector<std::int64_t> freqs_;
  std::unordered_map<PairKey, std::int64_t> counts_;
  std::unordered_map<PairKey, std::unordered_set<int>> where_;
  std::set<std::pair<std::int64_t, PairKey>, CandidateLess> queue_;
};

}  // namespace

SegmentationModel learn_bpe(const Corpus& corpus, std::size_t num_merges) {
  if (corpus.empty()) throw Error("empty corpus");
  BpeLearner learner(corpus);
  return SegmentationModel(learner.run(num_merges));
}

std::vector<Token> segment_word(const SegmentationModel& model, std::string_view word) {
  return model.segment(word, false);
}

Segmented segment_sentence(const SegmentationModel& model, const std::vector<std::string>& words) {
  Segmented out;
  out.spans.reserve(words.size());
  for (const auto& word : words) {
    auto pieces = model.segment(word);
    Span span{out.tokens.size(), out.tokens.size() + pieces.size()};
    for (auto& p : pieces) out.tokens.push_back(std::move(p));
    out.spans.push_back(span);
  }
  return out;
}

Segmented segment_sentence(const SegmentationModel& model, std::string_view sentence) {
  std::istringstream in{std::string(sentence)};
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(std::move(w));
  return segment_sentence(model, words);
}

std::vector<Segmented> segment_corpus(const SegmentationModel& model, const Corpus& corpus) {
  std::unordered_map<std::string, std::vector<Token>> cache;
  std::vector<Segmented> out;
  out.reserve(corpus.size());
  for (const auto& sentence : corpus.sentences) {
    Segmented seg;
    for (const auto& word : sentence) {
      auto it = cache.find(word);
      if (it == cache.end()) it = cache.emplace(word, model.segment(word)).first;
      Span span{seg.tokens.size(), seg.tokens.size() + it->second.size()};
      seg.tokens.insert(seg.tokens.end(), it->second.begin(), it->second.end());
      seg.spans.push_back(span);
    }
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<TokenId> to_ids(const Vocabulary& vocab, const std::vector<Token>& tokens) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto id = vocab.find(t);
    if (!id) throw Error("token not in vocabulary: " + t.rendered());
    ids.push_back(*id);
  }
  return ids;
}

}  // namespace vbridge
