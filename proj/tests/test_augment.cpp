#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace vbridge;

namespace {

Segmented sentence_of(const std::vector<std::vector<std::string>>& words) {
  Segmented s;
  for (const auto& w : words) {
    std::size_t begin = s.tokens.size();
    for (const auto& r : w) s.tokens.push_back(Token::parse(r));
    s.spans.push_back({begin, s.tokens.size()});
  }
  return s;
}

}  // namespace

TEST(Merge, ConcatenatesPieces) {
  std::vector<Token> pieces{Token("ima"), Token("gine", true)};
  EXPECT_EQ(merge_tokens(pieces), Token("imagine"));
  std::vector<Token> inner{Token("x", true), Token("y", true)};
  EXPECT_EQ(merge_tokens(inner), Token("xy", true));
  EXPECT_THROW(merge_tokens(std::span<const Token>{}), Error);
}

TEST(Split, CutsAtOffsets) {
  std::vector<std::size_t> cuts{4};
  EXPECT_EQ(split_token(Token("nothing"), cuts), (std::vector<Token>{Token("noth"), Token("ing", true)}));
  std::vector<std::size_t> multi{1, 2};
  EXPECT_EQ(split_token(Token("\xc3\xa9t\xc3\xa9", true), multi),
            (std::vector<Token>{Token("\xc3\xa9", true), Token("t", true), Token("\xc3\xa9", true)}));
}

TEST(Split, RejectsBadOffsets) {
  for (std::vector<std::size_t> cuts : {std::vector<std::size_t>{0}, {7}, {3, 3}, {4, 2}}) {
    EXPECT_THROW(split_token(Token("nothing"), cuts), Error);
  }
}

TEST(RandomEdits, ZeroProbabilityIsIdentity) {
  auto s = sentence_of({{"ima", "##gine"}, {"nothing"}, {"a", "##b", "##c"}});
  Rng rng(1);
  EXPECT_EQ(random_merge(s, rng, 0.0), s);
  EXPECT_EQ(random_split(s, rng, 0.0, 3), s);
}

TEST(RandomEdits, CertainMergeFusesWords) {
  auto s = sentence_of({{"ima", "##gine"}});
  Rng rng(2);
  EXPECT_EQ(random_merge(s, rng, 1.0), sentence_of({{"imagine"}}));
}

TEST(RandomEdits, SplitRespectsMaxPieces) {
  auto s = sentence_of({{"abcdefghij"}, {"klmnopq", "##rstu"}});
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    auto out = random_split(s, rng, 1.0, 3);
    EXPECT_GE(out.spans[0].size(), 2u);
    EXPECT_LE(out.spans[0].size(), 3u);
    EXPECT_LE(out.spans[1].size(), 6u);
    EXPECT_EQ(word_strings(out), word_strings(s));
  }
}

TEST(RandomEdits, InvalidArgumentsThrow) {
  auto s = sentence_of({{"ab"}});
  Rng rng(1);
  EXPECT_THROW(random_merge(s, rng, 1.5), Error);
  EXPECT_THROW(random_split(s, rng, -0.1, 3), Error);
  EXPECT_THROW(random_split(s, rng, 0.5, 1), Error);
}

TEST(Pair, ZeroRatesKeepVanillaSegmentation) {
  SyntheticLanguage lang;
  auto corpus = lang.upstream(200, 1);
  auto bpe = learn_bpe(corpus, 200);
  auto vocab = build_vocabulary(corpus, bpe);
  Rng rng(5);
  AugmentConfig none{0.0, 0.0, 3};
  for (const auto& words : corpus.sentences) {
    auto pair = make_pair(words, bpe, vocab, rng, none);
    EXPECT_EQ(pair.s_prime, pair.s_p);
    EXPECT_TRUE(pair.unseen.empty());
  }
}

TEST(Pair, FuzzPreservesCharactersAndRoutesOnlyUnseen) {
  SyntheticLanguage lang;
  auto corpus = lang.upstream(2000, 4);
  auto bpe = learn_bpe(corpus, 400);
  auto vocab = build_vocabulary(corpus, bpe);
  Rng rng(6);
  AugmentConfig heavy{0.5, 0.5, 3};
  std::size_t unseen_total = 0;
  for (const auto& words : corpus.sentences) {
    auto pair = make_pair(words, bpe, vocab, rng, heavy);
    EXPECT_EQ(word_strings(pair.s_prime), words);
    EXPECT_EQ(word_strings(pair.s_p), words);
    ASSERT_EQ(pair.s_prime.num_words(), words.size());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < pair.s_prime.tokens.size(); ++i) {
      bool listed = cursor < pair.unseen.size() && pair.unseen[cursor] == i;
      EXPECT_EQ(listed, !vocab.contains(pair.s_prime.tokens[i]));
      cursor += listed;
    }
    EXPECT_EQ(cursor, pair.unseen.size());
    unseen_total += pair.unseen.size();
  }
  EXPECT_GT(unseen_total, 0u);
}

TEST(Pair, SeededDeterminism) {
  SyntheticLanguage lang;
  auto corpus = lang.upstream(100, 4);
  auto bpe = learn_bpe(corpus, 100);
  auto vocab = build_vocabulary(corpus, bpe);
  Rng a(9), b(9);
  for (const auto& words : corpus.sentences) {
    auto p = make_pair(words, bpe, vocab, a);
    auto q = make_pair(words, bpe, vocab, b);
    EXPECT_EQ(p.s_prime, q.s_prime);
    EXPECT_EQ(p.unseen, q.unseen);
  }
}

TEST(Pair, MergeThatLandsInVocabularyIsNotUnseen) {
  Vocabulary vocab({{Token("ima"), 1}, {Token("gine", true), 1}, {Token("imagine"), 1}});
  Rng rng(1);
  auto pair = make_pair(sentence_of({{"ima", "##gine"}}), vocab, rng, AugmentConfig{1.0, 0.0, 3});
  EXPECT_EQ(pair.s_prime.tokens, (std::vector<Token>{Token("imagine")}));
  EXPECT_TRUE(pair.unseen.empty());
}
