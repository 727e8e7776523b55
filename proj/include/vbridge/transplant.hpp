#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string_view>
#include <vector>

#include "vbridge/generators.hpp"
#include "vbridge/lexicon.hpp"
#include "vbridge/morphset.hpp"
#include "vbridge/segmentation.hpp"

namespace vbridge {

struct MismatchReport {
  std::size_t shared = 0;
  std::size_t unseen = 0;
  std::vector<Token> unseen_tokens;  // in target id order
};

// Partitions target tokens into shared (same surface and continuation flag in
// the source) and unseen.
MismatchReport mismatch_report(const Vocabulary& source, const Vocabulary& target);

enum class Provenance : std::uint8_t { Copied, Generated, Fallback };
std::string_view to_string(Provenance p);

struct TransplantOptions {
  std::uint64_t seed = 13;
  double fallback_stddev = 0.02;
  MorphConfig morph;
  // When false every unseen row is drawn from the fallback distribution
  // (the random-init baseline).
  bool generate = true;
};

struct TransplantResult {
  EmbeddingMatrix matrix;
  std::vector<Provenance> provenance;  // per target id
};

// Shared rows are copied bitwise from the source; unseen rows come from the
// generator applied to their similar sets, or from a seeded N(0, sd^2) draw
// when the similar set is empty.
TransplantResult transplant(const EmbeddingMatrix& source, const SegmentationModel& source_segmenter,
                            std::shared_ptr<const Vocabulary> target, const GeneratorParams<double>& generator,
                            const TransplantOptions& options = {});

// `<token>\t<copied|generated|fallback>` per target token.
void write_provenance(std::ostream& out, const Vocabulary& target, std::span<const Provenance> provenance);

}  // namespace vbridge
