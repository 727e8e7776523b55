#pragma once

// Generator training against a frozen pretrained encoder. For each sentence
// the vanilla segmentation s_p and an augmented segmentation s' are encoded;
// unseen tokens of s' take their input rows from the generator. The objective
// is
//
//   L = L_p(s') + lambda * L_d(s_p, s'),
//   L_d = (1/|s|) sum_words || mean_h_p(word) - mean_h'(word) ||^2,
//
// where L_p is the masked-LM loss on s' (masks only on seen tokens) and the
// L_d passes are unmasked. Only the generator parameters receive updates.

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "vbridge/augment.hpp"
#include "vbridge/generators.hpp"
#include "vbridge/morphset.hpp"
#include "vbridge/neuralcore.hpp"

namespace vbridge {

struct TrainConfig {
  double lambda = 0.5;
  int steps = 2000;
  int batch_size = 8;
  AdamConfig adam{.learning_rate = 5e-3, .warmup_steps = 50};
  std::uint64_t seed = 7;
  GeneratorKind kind = GeneratorKind::Patt;
  bool verbatim_prefactor = true;
  AugmentConfig augment;
  MorphConfig morph;
  int checkpoint_every = 0;  // 0: only step 0 and the final step
  double fallback_stddev = 0.02;

  void validate() const;
};

Eigen::VectorXd word_repr(const Eigen::MatrixXd& hidden, Span span);

// Squared-distance distillation loss over aligned words. When d_hidden_prime
// is non-null it receives d L_d / d hidden_prime.
double kd_loss(const Eigen::MatrixXd& hidden_p, std::span<const Span> spans_p,
               const Eigen::MatrixXd& hidden_prime, std::span<const Span> spans_prime,
               Eigen::MatrixXd* d_hidden_prime = nullptr);

inline double total_loss(double lp, double ld, double lambda) { return lp + lambda * ld; }

/// One augmented sentence with everything the objective needs precomputed.
struct KdExample {
  AugmentedPair pair;
  std::vector<TokenId> prime_ids;  // -1 at unseen positions
  Eigen::MatrixXd base_rows;       // s' rows; generated positions are overwritten
  std::vector<std::shared_ptr<const Candidates<double>>> candidates;  // per s' position
  MaskPlan mask;                   // over seen positions of s'
  Eigen::MatrixXd hidden_p;        // encoder output on s_p
};

/// Similar sets and candidate rows for unseen tokens, memoized.
class CandidateCache {
 public:
  CandidateCache(const SegmentationModel& segmenter, const PretrainedModel& model, MorphConfig morph);
  // Null when the similar set is empty.
  std::shared_ptr<const Candidates<double>> get(const Token& token);

 private:
  SimilarSetBuilder builder_;
  EmbeddingMatrix embeddings_;
  std::unordered_map<Token, std::shared_ptr<const Candidates<double>>, TokenHash> cache_;
};

KdExample prepare_example(const PretrainedModel& model, AugmentedPair pair, CandidateCache& cache, Rng& rng,
                          double fallback_stddev = 0.02);

struct KdLosses {
  double lp = 0;
  double ld = 0;
  double total = 0;
};

// Evaluates the objective for one example. When `grads` is non-null the
// parameter gradients (times grad_scale) are accumulated into it; it must be
// shaped like `params`.
KdLosses kd_objective(const PretrainedModel& model, const KdExample& example,
                      const GeneratorParams<double>& params, double lambda,
                      GeneratorGradients<double>* grads = nullptr, double grad_scale = 1.0);

struct LossRecord {
  int step;
  double lp, ld, total;
};

struct TrainResult {
  GeneratorParams<double> params;
  std::vector<LossRecord> curve;
  std::vector<std::pair<int, GeneratorParams<double>>> checkpoints;  // includes step 0
};

// The model is only read; its parameters are bitwise unchanged afterwards.
TrainResult train_generator(const PretrainedModel& model, const SegmentationModel& segmenter,
                            const std::vector<Segmented>& corpus, const TrainConfig& config);

// `<step>\t<L_p>\t<L_d>\t<L_total>` per record.
void write_loss_curve(std::ostream& out, std::span<const LossRecord> curve);

}  // namespace vbridge
