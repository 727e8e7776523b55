#pragma once

// A small pre-LN transformer encoder trained with a masked-token objective.
// It stands in for the pretrained model: it owns the embedding table E, exposes
// final-layer hidden states for arbitrary input rows (so generated embeddings
// can be injected), and computes the masked-LM loss with a softmax tied to E.
//
// Sequences are processed one at a time as n x d row matrices; batches are
// formed by accumulating gradients in a fixed order.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vbridge/lexicon.hpp"

namespace vbridge {

struct EncoderConfig {
  Eigen::Index dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  Eigen::Index ffn_dim = 256;
  Eigen::Index max_seq_len = 128;
  double mask_fraction = 0.15;
  std::uint64_t seed = 1;
  double init_stddev = 0.02;

  void validate() const;
};

struct LayerWeights {
  Eigen::MatrixXd ln1_gain, ln1_bias;              // 1 x d
  Eigen::MatrixXd q_proj, k_proj, v_proj, out_proj;  // d x d
  Eigen::MatrixXd q_bias, k_bias, v_bias, out_bias;  // 1 x d
  Eigen::MatrixXd ln2_gain, ln2_bias;              // 1 x d
  Eigen::MatrixXd ffn_in, ffn_in_bias;             // d x f, 1 x f
  Eigen::MatrixXd ffn_out, ffn_out_bias;           // f x d, 1 x d

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "ln1_gain", self.ln1_gain);
    f(prefix + "ln1_bias", self.ln1_bias);
    f(prefix + "q_proj", self.q_proj);
    f(prefix + "q_bias", self.q_bias);
    f(prefix + "k_proj", self.k_proj);
    f(prefix + "k_bias", self.k_bias);
    f(prefix + "v_proj", self.v_proj);
    f(prefix + "v_bias", self.v_bias);
    f(prefix + "out_proj", self.out_proj);
    f(prefix + "out_bias", self.out_bias);
    f(prefix + "ln2_gain", self.ln2_gain);
    f(prefix + "ln2_bias", self.ln2_bias);
    f(prefix + "ffn_in", self.ffn_in);
    f(prefix + "ffn_in_bias", self.ffn_in_bias);
    f(prefix + "ffn_out", self.ffn_out);
    f(prefix + "ffn_out_bias", self.ffn_out_bias);
  }
};

struct EncoderWeights {
  Eigen::MatrixXd embedding;       // V x d, tied with the output projection
  Eigen::MatrixXd position;        // max_seq_len x d
  Eigen::MatrixXd mask_embedding;  // 1 x d
  std::vector<LayerWeights> layers;
  Eigen::MatrixXd final_gain, final_bias;  // 1 x d
  Eigen::MatrixXd output_bias;             // 1 x V

  static constexpr std::string_view kEmbedding = "embedding";
  static constexpr std::string_view kOutputBias = "output_bias";

  // Visits (name, matrix) in a fixed order. The order defines the checkpoint
  // layout and the optimizer slot assignment.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  static EncoderWeights init(const EncoderConfig& config, std::size_t vocab_size, Rng& rng);
  EncoderWeights zeros_like() const;
  Eigen::Index parameter_count() const;

  // Vocabulary-specific parameters (embedding table and output bias) are not
  // part of the backbone.
  static bool is_backbone(std::string_view name) { return name != kEmbedding && name != kOutputBias; }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f(std::string(kEmbedding), self.embedding);
    f(std::string("position"), self.position);
    f(std::string("mask_embedding"), self.mask_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      LayerWeights::visit(self.layers[l], "layer" + std::to_string(l) + ".", f);
    }
    f(std::string("final_gain"), self.final_gain);
    f(std::string("final_bias"), self.final_bias);
    f(std::string(kOutputBias), self.output_bias);
  }
};

/// Encoder plus the vocabulary its embedding table is aligned with.
struct PretrainedModel {
  EncoderConfig config;
  std::shared_ptr<const Vocabulary> vocab;
  EncoderWeights weights;

  EmbeddingMatrix embedding_matrix() const { return EmbeddingMatrix(vocab, weights.embedding); }
  void validate() const;
};

// SHA-256 over the backbone parameters (see EncoderWeights::is_backbone).
std::string backbone_hash(const EncoderWeights& weights);
bool backbone_equal(const EncoderWeights& a, const EncoderWeights& b);

// ---------------------------------------------------------------------------

/// One forward pass with the activations needed for backward.
class EncoderPass {
 public:
  // `inputs` holds one embedding row per position; position i uses the i-th
  // positional row.
  EncoderPass(const EncoderWeights& weights, const EncoderConfig& config, Eigen::MatrixXd inputs);

  const Eigen::MatrixXd& hidden() const { return hidden_; }

  // Backpropagates d loss / d hidden. Parameter gradients are accumulated into
  // `grads` when it is non-null. Returns d loss / d inputs.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& d_hidden, EncoderWeights* grads) const;

 private:
  struct NormCache {
    Eigen::MatrixXd normalized;
    Eigen::VectorXd inv_std;
  };
  struct LayerCache {
    NormCache ln1, ln2;
    Eigen::MatrixXd h1, q, k, v, heads, h2, ffn_pre, ffn_act;
    std::vector<Eigen::MatrixXd> attention;  // per head, n x n
  };

  const EncoderWeights* weights_;
  EncoderConfig config_;
  std::vector<LayerCache> caches_;
  NormCache final_;
  Eigen::MatrixXd hidden_;
};

Eigen::MatrixXd forward_hidden(const PretrainedModel& model, const Eigen::MatrixXd& rows);

// Rows of the embedding table for `ids`.
Eigen::MatrixXd embed(const EncoderWeights& weights, std::span<const TokenId> ids);

// Mean cross-entropy of the tied-softmax prediction at `positions` against
// `targets`. When `d_hidden` / `grads` are non-null the gradients, multiplied
// by grad_scale, are written to d_hidden (same shape as hidden) and
// accumulated into grads.
double mlm_head(const EncoderWeights& weights, const Eigen::MatrixXd& hidden,
                std::span<const Eigen::Index> positions, std::span<const TokenId> targets,
                Eigen::MatrixXd* d_hidden = nullptr, EncoderWeights* grads = nullptr,
                double grad_scale = 1.0);

double mlm_loss(const PretrainedModel& model, const Eigen::MatrixXd& masked_rows,
                std::span<const Eigen::Index> positions, std::span<const TokenId> targets);

// ---------------------------------------------------------------------------

enum class MaskAction : std::uint8_t { MaskRow, RandomRow, Keep };

struct MaskPlan {
  std::vector<Eigen::Index> positions;
  std::vector<TokenId> targets;
  std::vector<MaskAction> actions;
  std::vector<TokenId> replacements;  // used by RandomRow
};

// Chooses max(1, round(fraction * eligible)) positions among entries with
// ids[i] >= 0. Each chosen position is replaced by the mask row (80%), a random
// token row (10%) or kept (10%); with `mask_row_only` always the mask row.
MaskPlan plan_masks(std::span<const TokenId> ids, double fraction, std::size_t vocab_size, Rng& rng,
                    bool mask_row_only = false);
void apply_masks(const MaskPlan& plan, const EncoderWeights& weights, Eigen::MatrixXd& rows);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_steps = 0;    // linear warm-up from 0
  double clip_norm = 0.0;  // global gradient-norm clipping; 0 disables
};

struct ParamSlot {
  double* value;
  const double* grad;
  Eigen::Index size;
};

/// Adam with linear warm-up. Slots must be passed in the same order on every
/// step.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(std::span<const ParamSlot> slots);
  long steps() const { return step_; }
  double learning_rate() const;

 private:
  AdamConfig config_;
  long step_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

/// Masked-LM trainer for a model it does not own.
class MlmTrainer {
 public:
  MlmTrainer(PretrainedModel& model, AdamConfig adam, std::uint64_t seed, bool freeze_backbone = false);

  // One optimizer step over `batch`; returns the mean training loss.
  double step(std::span<const std::vector<TokenId>> batch);

 private:
  PretrainedModel* model_;
  Adam adam_;
  Rng rng_;
  bool freeze_backbone_;
};

// Held-out masked-LM loss with mask-row-only masks drawn from `seed`, so
// different models see identical masks.
double evaluate_mlm(const PretrainedModel& model, std::span<const std::vector<TokenId>> sentences,
                    std::uint64_t seed);

struct PretrainConfig {
  EncoderConfig encoder;
  AdamConfig adam{.learning_rate = 1e-3, .warmup_steps = 200, .clip_norm = 1.0};
  int steps = 2000;
  int batch_size = 16;
  double held_out_fraction = 0.05;
  int log_every = 100;
};

struct PretrainReport {
  double initial_held_out_loss = 0;
  double final_held_out_loss = 0;
  std::vector<std::pair<int, double>> train_curve;  // (step, batch loss)
};

// Sentences longer than max_seq_len are truncated. With fewer than two
// sentences the held-out split is the training set.
PretrainedModel pretrain(const std::vector<std::vector<TokenId>>& sentences,
                         std::shared_ptr<const Vocabulary> vocab, const PretrainConfig& config,
                         PretrainReport* report = nullptr);

// Checkpoint directory: `manifest.txt`, `vocab.tsv` and one little-endian
// float32 blob per parameter, in visit order.
void save_checkpoint(const PretrainedModel& model, const std::filesystem::path& dir);
PretrainedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace vbridge
