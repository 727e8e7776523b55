#include "vbridge/transplant.hpp"

namespace vbridge {

namespace {

// Seed derived from the token text so a token's fallback row does not depend
// on which other tokens needed one.
std::uint64_t token_seed(std::uint64_t seed, const Token& token) {
  std::string hex = sha256_hex(token.rendered());
  return seed ^ std::stoull(hex.substr(0, 16), nullptr, 16);
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Copied: return "copied";
    case Provenance::Generated: return "generated";
    case Provenance::Fallback: return "fallback";
  }
  return "?";
}

MismatchReport mismatch_report(const Vocabulary& source, const Vocabulary& target) {
  MismatchReport report;
  for (const Token& t : target.tokens()) {
    if (source.contains(t)) {
      ++report.shared;
    } else {
      ++report.unseen;
      report.unseen_tokens.push_back(t);
    }
  }
  return report;
}

TransplantResult transplant(const EmbeddingMatrix& source, const SegmentationModel& source_segmenter,
                            std::shared_ptr<const Vocabulary> target, const GeneratorParams<double>& generator,
                            const TransplantOptions& options) {
  if (!target) throw Error("no target vocabulary");
  if (options.generate) {
    generator.validate();
    if (generator.dim != source.dim()) {
      throw Error("dimension mismatch: generator d=" + std::to_string(generator.dim) +
                  ", source embeddings d=" + std::to_string(source.dim()));
    }
  }
  const Vocabulary& src = source.vocab();
  SimilarSetBuilder builder(source_segmenter, src, options.morph);

  Eigen::MatrixXd rows(static_cast<Eigen::Index>(target->size()), source.dim());
  std::vector<Provenance> provenance(target->size(), Provenance::Copied);
  for (std::size_t i = 0; i < target->size(); ++i) {
    const Token& token = target->tokens()[i];
    auto row = rows.row(static_cast<Eigen::Index>(i));
    if (auto id = src.find(token)) {
      row = source.row(*id);
      continue;
    }
    if (options.generate) {
      SimilarSet set = builder(token);
      if (!set.empty()) {
        row = generate(generator, gather(set, source)).transpose();
        provenance[i] = Provenance::Generated;
        continue;
      }
    }
    Rng rng(token_seed(options.seed, token));
    std::normal_distribution<double> dist(0.0, options.fallback_stddev);
    for (Eigen::Index j = 0; j < row.size(); ++j) row(j) = dist(rng);
    provenance[i] = Provenance::Fallback;
  }
  return {EmbeddingMatrix(std::move(target), std::move(rows)), std::move(provenance)};
}

void write_provenance(std::ostream& out, const Vocabulary& target, std::span<const Provenance> provenance) {
  if (provenance.size() != target.size()) throw Error("provenance does not cover the target vocabulary");
  for (std::size_t i = 0; i < target.size(); ++i) {
    out << target.tokens()[i].rendered() << '\t' << to_string(provenance[i]) << '\n';
  }
}

}  // namespace vbridge
