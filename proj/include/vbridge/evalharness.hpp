#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vbridge/kd_trainer.hpp"
#include "vbridge/neuralcore.hpp"
#include "vbridge/synthetic.hpp"
#include "vbridge/transplant.hpp"

namespace vbridge {

struct SweepRow {
  std::size_t merges = 0;
  std::size_t vocab_size = 0;
  double mean_tokens = 0;  // per sentence
};

// BPE is learned once with the largest count; smaller counts use its prefix.
// merge_counts must be ascending.
std::vector<SweepRow> seq_length_sweep(const Corpus& corpus, std::span<const std::size_t> merge_counts);
void write_sweep_table(std::ostream& out, std::span<const SweepRow> rows);

// ---------------------------------------------------------------------------

struct ProbeConfig {
  int steps = 100;
  int batch_size = 16;
  AdamConfig adam{.learning_rate = 1e-3, .warmup_steps = 10, .clip_norm = 1.0};
  std::uint64_t seed = 99;       // finetuning batches and masks
  std::uint64_t eval_seed = 5;   // held-out masks
  int eval_every = 50;           // 0: only before and after finetuning
};

struct ProbeInit {
  std::string label;
  EmbeddingMatrix embeddings;
};

struct ProbeCurve {
  std::string label;
  std::string backbone_hash;  // of the initial model, before finetuning
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<std::pair<int, double>> curve;  // (finetuning step, held-out loss)
};

// Model for a new vocabulary: backbone copied from `pretrained`, embedding
// table from `init`. The output bias is copied for tokens the pretrained
// vocabulary knows and set to the mean pretrained bias otherwise.
PretrainedModel target_model(const PretrainedModel& pretrained, const EmbeddingMatrix& init);

// Finetunes one copy of the pretrained backbone per init with identical
// batches and masks. All inits must share one vocabulary (same tokens, same
// order) and the backbone's d. Token ids refer to that vocabulary.
std::vector<ProbeCurve> downstream_probe(const PretrainedModel& pretrained, std::span<const ProbeInit> inits,
                                         const std::vector<std::vector<TokenId>>& train,
                                         const std::vector<std::vector<TokenId>>& held_out,
                                         const ProbeConfig& config);
void write_probe_table(std::ostream& out, std::span<const ProbeCurve> curves);

// ---------------------------------------------------------------------------

struct ConvergenceRow {
  int generator_step = 0;
  double initial_loss = 0;  // the probe loss: held-out loss before finetuning
  double final_loss = 0;    // after ProbeConfig::steps finetuning steps
};

std::vector<ConvergenceRow> convergence_curve(
    const PretrainedModel& pretrained, const SegmentationModel& source_segmenter,
    std::shared_ptr<const Vocabulary> target,
    std::span<const std::pair<int, GeneratorParams<double>>> checkpoints,
    const std::vector<std::vector<TokenId>>& train, const std::vector<std::vector<TokenId>>& held_out,
    const ProbeConfig& probe, const TransplantOptions& transplant_options = {});
void write_convergence_table(std::ostream& out, std::span<const ConvergenceRow> rows);

// ---------------------------------------------------------------------------

struct Neighbor {
  TokenId id = 0;
  Token token;
  double similarity = 0;
};

// k most cosine-similar tokens, excluding the query; ties go to the lower id.
// Zero rows have similarity 0 to everything.
std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& embeddings, const Token& query, std::size_t k);

// ---------------------------------------------------------------------------

struct BenchmarkConfig {
  SyntheticConfig language;
  std::size_t upstream_sentences = 20000;
  std::size_t downstream_sentences = 5000;
  std::uint64_t upstream_seed = 11;
  std::uint64_t downstream_seed = 12;
  std::size_t upstream_merges = 400;
  std::size_t downstream_merges = 800;
  double downstream_held_out_fraction = 0.2;
  PretrainConfig pretrain;
  TrainConfig generator = default_generator();
  bool train_att = true;
  bool train_patt_verbatim = true;  // extra "patt-verbatim" init with the 1/|S| prefactor
  int convergence_points = 4;  // generator checkpoints besides step 0
  ProbeConfig probe;
  TransplantOptions transplant;

  // 500 steps, prefactor dropped.
  static TrainConfig default_generator() {
    TrainConfig c;
    c.steps = 500;
    c.verbatim_prefactor = false;
    return c;
  }
};

struct BenchmarkResult {
  PretrainReport pretrain;
  MismatchReport mismatch;
  std::size_t source_vocab_size = 0;
  std::size_t generated = 0;  // unseen rows with a non-empty similar set
  std::vector<ProbeCurve> probes;  // random, avg, [att,] patt[, patt-verbatim]
  std::vector<ConvergenceRow> convergence;
  std::vector<LossRecord> patt_curve;
  double pretrain_seconds = 0;
  double generator_seconds = 0;
  double probe_seconds = 0;

  const ProbeCurve& probe(std::string_view label) const;
};

// Synthetic shift benchmark: pretrain on the upstream corpus, learn a
// downstream vocabulary, train generators on upstream text, transplant and
// probe on held-out downstream text.
BenchmarkResult run_benchmark(const BenchmarkConfig& config, std::ostream* log = nullptr);

}  // namespace vbridge
