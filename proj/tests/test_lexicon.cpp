#include <gtest/gtest.h>

#include <map>

#include "test_util.hpp"

using namespace vbridge;
using vbridge::testing::TempDir;

TEST(Token, ContinuationFlagIsPartOfIdentity) {
  EXPECT_NE(Token("er"), Token("er", true));
  EXPECT_EQ(Token::parse("##er"), Token("er", true));
  EXPECT_EQ(Token::parse("er"), Token("er"));
  EXPECT_EQ(Token("cycle", true).rendered(), "##cycle");
}

TEST(Token, ValidateRejectsEmptyAndWhitespace) {
  EXPECT_THROW(Token("").validate(), Error);
  EXPECT_THROW(Token("a b").validate(), Error);
  EXPECT_NO_THROW(Token("ab", true).validate());
}

TEST(Utf8, CountsCodePoints) {
  EXPECT_EQ(code_point_count("abc"), 3u);
  EXPECT_EQ(code_point_count("\xc3\xa9t\xc3\xa9"), 3u);  // été
  auto offsets = code_point_offsets("\xc3\xa9t");
  EXPECT_EQ(offsets, (std::vector<std::size_t>{0, 2, 3}));
}

TEST(Utf8, NfcComposes) {
  EXPECT_EQ(normalize_nfc("e\xcc\x81"), "\xc3\xa9");
  auto corpus = Corpus::from_lines({"caf" "e\xcc\x81"});
  EXPECT_EQ(corpus.sentences[0][0], "caf\xc3\xa9");
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Corpus, DropsBlankLines) {
  auto corpus = Corpus::from_lines({"a b", "", "   ", "c"});
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus.sentences[0], (std::vector<std::string>{"a", "b"}));
}

TEST(Vocabulary, CharacterLevelCounts) {
  auto vocab = build_vocabulary(Corpus::from_lines({"aa aa"}), SegmentationModel{});
  ASSERT_EQ(vocab.size(), 2u);
  EXPECT_EQ(vocab.freq(*vocab.find(Token("a"))), 2);
  EXPECT_EQ(vocab.freq(*vocab.find(Token("a", true))), 2);
}

TEST(Vocabulary, EmptyCorpusThrows) {
  try {
    build_vocabulary(Corpus{}, SegmentationModel{});
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty corpus");
  }
}

TEST(Vocabulary, ByteIdenticalFilesAcrossRuns) {
  TempDir dir;
  SyntheticLanguage lang;
  auto corpus = lang.upstream(500, 3);
  for (const char* name : {"a.vocab", "b.vocab"}) {
    build_vocabulary(corpus, learn_bpe(corpus, 100)).save(dir / name);
  }
  auto a = vbridge::testing::read_file(dir / "a.vocab");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(sha256_hex(a), sha256_hex(vbridge::testing::read_file(dir / "b.vocab")));
}

TEST(Vocabulary, SizeMatchesIndependentRecount) {
  Rng rng(5);
  std::vector<std::string> lines;
  for (int s = 0; s < 100; ++s) {
    std::string line;
    for (int w = 0; w < 10; ++w) line += vbridge::testing::random_word(rng, "abcdefg", 1, 8) + " ";
    lines.push_back(line);
  }
  auto corpus = Corpus::from_lines(lines);
  auto bpe = learn_bpe(corpus, 500);
  auto vocab = build_vocabulary(corpus, bpe);

  std::map<std::string, std::int64_t> recount;
  for (const auto& sentence : corpus.sentences) {
    for (const auto& word : sentence) {
      for (const auto& t : bpe.segment(word)) ++recount[t.rendered()];
    }
  }
  ASSERT_EQ(vocab.size(), recount.size());
  for (const auto& [rendered, n] : recount) {
    auto id = vocab.find(Token::parse(rendered));
    ASSERT_TRUE(id) << rendered;
    EXPECT_EQ(vocab.freq(*id), n) << rendered;
  }
}

TEST(Vocabulary, OrderedByFrequencyThenRendered) {
  std::unordered_map<Token, std::int64_t, TokenHash> counts{
      {Token("b"), 2}, {Token("a"), 2}, {Token("c"), 5}, {Token("a", true), 2}};
  auto vocab = Vocabulary::from_counts(counts);
  std::vector<std::string> order;
  for (const auto& t : vocab.tokens()) order.push_back(t.rendered());
  EXPECT_EQ(order, (std::vector<std::string>{"c", "##a", "a", "b"}));
}

TEST(Vocabulary, DuplicateTokenThrows) {
  EXPECT_THROW(Vocabulary({{Token("a"), 1}, {Token("a"), 2}}), Error);
  EXPECT_NO_THROW(Vocabulary({{Token("a"), 1}, {Token("a", true), 2}}));
}

TEST(Vocabulary, FileRoundTrip) {
  TempDir dir;
  Vocabulary v({{Token("motor"), 7}, {Token("cycle", true), 3}, {Token("\xc3\xa9"), 0}});
  v.save(dir / "v.vocab");
  EXPECT_EQ(vbridge::testing::read_file(dir / "v.vocab"), "motor\t7\n##cycle\t3\n\xc3\xa9\t0\n");
  EXPECT_EQ(Vocabulary::load(dir / "v.vocab"), v);
}

TEST(Vocabulary, MalformedLineReportsLine) {
  TempDir dir;
  vbridge::testing::write_file(dir / "v.vocab", "a\t1\nb 2\n");
  try {
    Vocabulary::load(dir / "v.vocab");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Embeddings, ParsesTextFormat) {
  TempDir dir;
  vbridge::testing::write_file(dir / "e.vec", "2 3\na 1 0 0\n##b 0 1 0\n");
  auto m = load_embeddings(dir / "e.vec");
  ASSERT_EQ(m.size(), 2);
  ASSERT_EQ(m.dim(), 3);
  EXPECT_EQ(m.vocab().token(1), Token("b", true));
  EXPECT_EQ(m.rows()(1, 1), 1.0);
  EXPECT_EQ(m.rows().sum(), 2.0);
}

TEST(Embeddings, ShortRowIsParseErrorAtThatLine) {
  TempDir dir;
  vbridge::testing::write_file(dir / "e.vec", "2 3\na 1 0 0\n##b 0 1\n");
  try {
    load_embeddings(dir / "e.vec");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Embeddings, RoundTripWithinTolerance) {
  TempDir dir;
  std::vector<std::pair<Token, std::int64_t>> entries;
  for (int i = 0; i < 100; ++i) entries.emplace_back(Token("t" + std::to_string(i), i % 2 == 1), i);
  auto vocab = std::make_shared<const Vocabulary>(entries);
  Eigen::MatrixXd rows = Eigen::MatrixXd::Random(100, 16);
  save_embeddings(EmbeddingMatrix(vocab, rows), dir / "e.vec");
  auto back = load_embeddings(dir / "e.vec", vocab);
  EXPECT_LT((back.rows() - rows).cwiseAbs().maxCoeff(), 1e-7);
  auto plain = load_embeddings(dir / "e.vec");
  EXPECT_EQ(plain.vocab().tokens(), vocab->tokens());
}

TEST(Embeddings, VocabularyOrderMismatchThrows) {
  TempDir dir;
  vbridge::testing::write_file(dir / "e.vec", "2 1\na 1\nb 2\n");
  auto vocab = std::make_shared<const Vocabulary>(std::vector<std::pair<Token, std::int64_t>>{{Token("b"), 1}, {Token("a"), 1}});
  EXPECT_THROW(load_embeddings(dir / "e.vec", vocab), Error);
}

TEST(Embeddings, RejectsNonFiniteRows) {
  auto vocab = std::make_shared<const Vocabulary>(std::vector<std::pair<Token, std::int64_t>>{{Token("a"), 1}});
  Eigen::MatrixXd rows(1, 2);
  rows << 1.0, std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(EmbeddingMatrix(vocab, rows), Error);
}
