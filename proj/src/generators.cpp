#include "vbridge/generators.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace vbridge {

std::string_view to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::Avg: return "AVG";
    case GeneratorKind::Att: return "ATT";
    case GeneratorKind::Patt: return "PATT";
  }
  return "?";
}

GeneratorKind generator_kind_from_string(std::string_view s) {
  if (s == "AVG" || s == "avg") return GeneratorKind::Avg;
  if (s == "ATT" || s == "att") return GeneratorKind::Att;
  if (s == "PATT" || s == "patt") return GeneratorKind::Patt;
  throw Error("unknown generator kind '" + std::string(s) + "' (expected AVG, ATT or PATT)");
}

Candidates<double> gather(const SimilarSet& set, const EmbeddingMatrix& embeddings) {
  Candidates<double> c;
  c.rows.resize(static_cast<Eigen::Index>(set.size()), embeddings.dim());
  c.relations.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& e = set.entries[i];
    if (e.id < 0 || static_cast<std::size_t>(e.id) >= embeddings.vocab().size() ||
        embeddings.vocab().token(e.id) != e.token) {
      throw Error("similar-set entry " + e.token.rendered() + " is not in the embedding vocabulary");
    }
    c.rows.row(static_cast<Eigen::Index>(i)) = embeddings.row(e.id);
    c.relations.push_back(e.relation);
  }
  return c;
}

namespace {

void write_row(std::ostream& out, const Eigen::RowVectorXd& row) {
  char buf[32];
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    std::snprintf(buf, sizeof(buf), "%.9g", row(j));
    if (j) out << ' ';
    out << buf;
  }
  out << '\n';
}

Eigen::RowVectorXd read_row(std::istream& in, Eigen::Index d, std::size_t lineno) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing parameter row", lineno);
  std::istringstream fields(line);
  Eigen::RowVectorXd row(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(fields >> row(j))) throw ParseError("expected " + std::to_string(d) + " values", lineno);
  }
  std::string extra;
  if (fields >> extra) throw ParseError("too many values", lineno);
  if (!row.allFinite()) throw ParseError("non-finite parameter", lineno);
  return row;
}

}  // namespace

void save_generator(const GeneratorParams<double>& params, const std::filesystem::path& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_string(params.kind) << ' ' << params.dim << ' '
      << (params.verbatim_prefactor ? "verbatim" : "plain") << '\n';
  if (params.kind == GeneratorKind::Att) write_row(out, params.w.transpose());
  if (params.kind == GeneratorKind::Patt) {
    for (Eigen::Index r = 0; r < params.w_r.rows(); ++r) write_row(out, params.w_r.row(r));
  }
}

GeneratorParams<double> load_generator(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  std::istringstream header(line);
  std::string kind_name, prefactor = "verbatim";
  long long dim = 0;
  if (!(header >> kind_name >> dim) || dim <= 0) throw ParseError("header must be '<kind> <d>'", 1);
  header >> prefactor;
  if (prefactor != "verbatim" && prefactor != "plain") throw ParseError("unknown prefactor policy", 1);

  GeneratorKind kind;
  try {
    kind = generator_kind_from_string(kind_name);
  } catch (const Error& e) {
    throw ParseError(e.what(), 1);
  }
  auto params = GeneratorParams<double>::zeros(kind, dim, prefactor == "verbatim");
  if (kind == GeneratorKind::Att) params.w = read_row(in, dim, 2).transpose();
  if (kind == GeneratorKind::Patt) {
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(kNumRelations); ++r) {
      params.w_r.row(r) = read_row(in, dim, static_cast<std::size_t>(r) + 2);
    }
  }
  params.validate();
  return params;
}

}  // namespace vbridge
