#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace vbridge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. line() is 1-based.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

using Rng = std::mt19937_64;
using TokenId = std::int32_t;

// ---------------------------------------------------------------------------
// UTF-8 helpers. All lengths and offsets used by segmentation are counted in
// code points, not bytes.

// Byte offsets of each code point start, plus a final entry equal to s.size().
std::vector<std::size_t> code_point_offsets(std::string_view s);
std::size_t code_point_count(std::string_view s);
// Unicode NFC normalization.
std::string normalize_nfc(std::string_view s);

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// A vocabulary unit. Continuation tokens may only occur word-internally and
/// render with a "##" prefix.
struct Token {
  std::string surface;
  bool continuation = false;

  Token() = default;
  explicit Token(std::string s, bool cont = false) : surface(std::move(s)), continuation(cont) {}

  std::string rendered() const { return continuation ? "##" + surface : surface; }
  static Token parse(std::string_view rendered);
  // Throws if the surface is empty or contains whitespace.
  void validate() const;

  friend bool operator==(const Token&, const Token&) = default;
  friend auto operator<=>(const Token&, const Token&) = default;
};

struct TokenHash {
  std::size_t operator()(const Token& t) const noexcept {
    return std::hash<std::string>{}(t.surface) ^ (t.continuation ? 0x9e3779b97f4a7c15ULL : 0);
  }
};

std::string render(const std::vector<Token>& tokens);

/// Ordered token set with frequencies and a dense id mapping.
class Vocabulary {
 public:
  Vocabulary() = default;
  // Keeps the given order. Throws on duplicate tokens.
  explicit Vocabulary(std::vector<std::pair<Token, std::int64_t>> entries);

  // Sorted by descending frequency, ties broken by rendered form.
  static Vocabulary from_counts(const std::unordered_map<Token, std::int64_t, TokenHash>& counts);

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const Token& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::int64_t freq(TokenId id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  const std::vector<Token>& tokens() const { return tokens_; }
  std::optional<TokenId> find(const Token& t) const;
  bool contains(const Token& t) const { return ids_.count(t) != 0; }

  // `<rendered-token>\t<frequency>\n` per entry.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.freqs_ == b.freqs_;
  }

 private:
  std::vector<Token> tokens_;
  std::vector<std::int64_t> freqs_;
  std::unordered_map<Token, TokenId, TokenHash> ids_;
};

/// V x d embedding rows aligned with a vocabulary.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::shared_ptr<const Vocabulary> vocab, Eigen::MatrixXd rows);

  const Vocabulary& vocab() const { return *vocab_; }
  const std::shared_ptr<const Vocabulary>& vocab_ptr() const { return vocab_; }
  Eigen::Index dim() const { return rows_.cols(); }
  Eigen::Index size() const { return rows_.rows(); }
  const Eigen::MatrixXd& rows() const { return rows_; }
  auto row(TokenId id) const { return rows_.row(id); }

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  Eigen::MatrixXd rows_;
};

// Embedding text file: `<V> <d>` header, then `<rendered-token> <f1> ... <fd>`.
// Floats are written with 9 significant digits.
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
// The vocabulary is read from the file itself (frequencies 0).
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
// Rows must list exactly the tokens of `vocab` in id order.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                std::shared_ptr<const Vocabulary> vocab);

/// Whitespace-tokenized, NFC-normalized sentences.
struct Corpus {
  std::vector<std::vector<std::string>> sentences;

  // Blank lines are dropped.
  static Corpus from_lines(const std::vector<std::string>& lines);
  static Corpus load(const std::filesystem::path& path);
  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
};

class SegmentationModel;

// Vocabulary of exactly the tokens `segmenter` emits on `corpus`.
Vocabulary build_vocabulary(const Corpus& corpus, const SegmentationModel& segmenter);

}  // namespace vbridge
