#include "vbridge/lexicon.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "vbridge/segmentation.hpp"

namespace vbridge {

ParseError::ParseError(const std::string& what, std::size_t line)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::vector<std::size_t> code_point_offsets(std::string_view s) {
  std::vector<std::size_t> offsets;
  offsets.reserve(s.size() + 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    // Skip UTF-8 continuation bytes (10xxxxxx).
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(s.size());
  return offsets;
}

std::size_t code_point_count(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

std::string normalize_nfc(std::string_view s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = nfc->normalize(in, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  std::string result;
  out.toUTF8String(result);
  return result;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

// ---------------------------------------------------------------------------

namespace {

bool has_whitespace(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  });
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string field;
  while (in >> field) out.push_back(std::move(field));
  return out;
}

std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

Token Token::parse(std::string_view rendered) {
  if (rendered.size() > 2 && rendered.substr(0, 2) == "##") {
    return Token(std::string(rendered.substr(2)), true);
  }
  return Token(std::string(rendered), false);
}

void Token::validate() const {
  if (surface.empty()) throw Error("token surface is empty");
  if (has_whitespace(surface)) throw Error("token surface contains whitespace: '" + surface + "'");
}

std::string render(const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i].rendered();
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::pair<Token, std::int64_t>> entries) {
  tokens_.reserve(entries.size());
  freqs_.reserve(entries.size());
  for (auto& [token, freq] : entries) {
    token.validate();
    if (freq < 0) throw Error("negative frequency for " + token.rendered());
    auto id = static_cast<TokenId>(tokens_.size());
    if (!ids_.emplace(token, id).second) throw Error("duplicate token " + token.rendered());
    tokens_.push_back(std::move(token));
    freqs_.push_back(freq);
  }
}

Vocabulary Vocabulary::from_counts(const std::unordered_map<Token, std::int64_t, TokenHash>& counts) {
  std::vector<std::pair<std::string, std::pair<Token, std::int64_t>>> keyed;
  keyed.reserve(counts.size());
  for (const auto& [token, freq] : counts) keyed.push_back({token.rendered(), {token, freq}});
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.second.second != b.second.second) return a.second.second > b.second.second;
    return a.first < b.first;
  });
  std::vector<std::pair<Token, std::int64_t>> entries;
  entries.reserve(keyed.size());
  for (auto& k : keyed) entries.push_back(std::move(k.second));
  return Vocabulary(std::move(entries));
}

std::optional<TokenId> Vocabulary::find(const Token& t) const {
  auto it = ids_.find(t);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out += tokens_[i].rendered();
    out.push_back('\t');
    out += std::to_string(freqs_[i]);
    out.push_back('\n');
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::pair<Token, std::int64_t>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected <token>\\t<frequency>", lineno);
    std::int64_t freq = 0;
    try {
      std::size_t used = 0;
      freq = std::stoll(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("bad frequency", lineno);
    }
    try {
      entries.emplace_back(Token::parse(line.substr(0, tab)), freq);
      entries.back().first.validate();
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return Vocabulary(std::move(entries));
}

// ---------------------------------------------------------------------------

EmbeddingMatrix::EmbeddingMatrix(std::shared_ptr<const Vocabulary> vocab, Eigen::MatrixXd rows)
    : vocab_(std::move(vocab)), rows_(std::move(rows)) {
  if (!vocab_) throw Error("embedding matrix without vocabulary");
  if (static_cast<std::size_t>(rows_.rows()) != vocab_->size()) {
    throw Error("embedding rows (" + std::to_string(rows_.rows()) + ") != vocabulary size (" +
                std::to_string(vocab_->size()) + ")");
  }
  if (rows_.cols() <= 0) throw Error("embedding dimension must be positive");
  if (!rows_.allFinite()) throw Error("embedding matrix contains non-finite values");
}

void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << matrix.size() << ' ' << matrix.dim() << '\n';
  const auto& rows = matrix.rows();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    out << matrix.vocab().token(static_cast<TokenId>(i)).rendered();
    for (Eigen::Index j = 0; j < rows.cols(); ++j) out << ' ' << format_float(rows(i, j));
    out << '\n';
  }
}

namespace {

struct RawEmbeddings {
  std::vector<Token> tokens;
  Eigen::MatrixXd rows;
};

RawEmbeddings read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  auto header = split_ws(line);
  long long count = 0, dim = 0;
  try {
    if (header.size() != 2) throw std::invalid_argument("fields");
    count = std::stoll(header[0]);
    dim = std::stoll(header[1]);
  } catch (const std::exception&) {
    throw ParseError("header must be '<V> <d>'", 1);
  }
  if (count < 0 || dim <= 0) throw ParseError("header must have V >= 0 and d > 0", 1);

  RawEmbeddings raw;
  raw.rows.resize(count, dim);
  raw.tokens.reserve(static_cast<std::size_t>(count));
  std::size_t lineno = 1;
  for (long long i = 0; i < count; ++i) {
    ++lineno;
    if (!std::getline(in, line)) throw ParseError("expected " + std::to_string(count) + " rows", lineno);
    auto fields = split_ws(line);
    if (fields.empty()) throw ParseError("empty row", lineno);
    if (static_cast<long long>(fields.size()) - 1 != dim) {
      throw ParseError("row has " + std::to_string(fields.size() - 1) + " values, header says " +
                           std::to_string(dim),
                       lineno);
    }
    raw.tokens.push_back(Token::parse(fields[0]));
    for (long long j = 0; j < dim; ++j) {
      try {
        std::size_t used = 0;
        raw.rows(i, j) = std::stod(fields[static_cast<std::size_t>(j + 1)], &used);
        if (used != fields[static_cast<std::size_t>(j + 1)].size()) throw std::invalid_argument("x");
      } catch (const std::exception&) {
        throw ParseError("bad float '" + fields[static_cast<std::size_t>(j + 1)] + "'", lineno);
      }
      if (!std::isfinite(raw.rows(i, j))) throw ParseError("non-finite value", lineno);
    }
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (!split_ws(line).empty()) throw ParseError("more rows than header declares", lineno);
  }
  return raw;
}

}  // namespace

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  auto raw = read_embedding_file(path);
  std::vector<std::pair<Token, std::int64_t>> entries;
  entries.reserve(raw.tokens.size());
  for (auto& t : raw.tokens) entries.emplace_back(std::move(t), 0);
  return EmbeddingMatrix(std::make_shared<const Vocabulary>(std::move(entries)), std::move(raw.rows));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                std::shared_ptr<const Vocabulary> vocab) {
  auto raw = read_embedding_file(path);
  if (raw.tokens.size() != vocab->size()) {
    throw Error("embedding file has " + std::to_string(raw.tokens.size()) +
                " rows but vocabulary has " + std::to_string(vocab->size()));
  }
  for (std::size_t i = 0; i < raw.tokens.size(); ++i) {
    if (raw.tokens[i] != vocab->token(static_cast<TokenId>(i))) {
      throw ParseError("token " + raw.tokens[i].rendered() + " does not match vocabulary entry " +
                           vocab->token(static_cast<TokenId>(i)).rendered(),
                       i + 2);
    }
  }
  return EmbeddingMatrix(std::move(vocab), std::move(raw.rows));
}

// ---------------------------------------------------------------------------

Corpus Corpus::from_lines(const std::vector<std::string>& lines) {
  Corpus corpus;
  for (const auto& line : lines) {
    auto words = split_ws(normalize_nfc(line));
    if (!words.empty()) corpus.sentences.push_back(std::move(words));
  }
  return corpus;
}

Corpus Corpus::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  return from_lines(lines);
}

Vocabulary build_vocabulary(const Corpus& corpus, const SegmentationModel& segmenter) {
  if (corpus.empty()) throw Error("empty corpus");
  std::unordered_map<std::string, std::int64_t> word_counts;
  for (const auto& sentence : corpus.sentences) {
    for (const auto& word : sentence) ++word_counts[word];
  }
  std::unordered_map<Token, std::int64_t, TokenHash> counts;
  for (const auto& [word, n] : word_counts) {
    for (auto& piece : segmenter.segment(word)) counts[piece] += n;
  }
  return Vocabulary::from_counts(counts);
}

}  // namespace vbridge
