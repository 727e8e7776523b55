#include "vbridge/kd_trainer.hpp"

#include <cmath>
#include <cstdio>

namespace vbridge {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw Error("lambda must be non-negative");
  if (steps <= 0) throw Error("steps must be positive");
  if (batch_size <= 0) throw Error("batch_size must be positive");
  if (kind == GeneratorKind::Avg) throw Error("non-trainable generator");
}

Eigen::VectorXd word_repr(const Eigen::MatrixXd& hidden, Span span) {
  if (span.size() == 0) throw Error("empty word span");
  if (span.end > static_cast<std::size_t>(hidden.rows())) throw Error("word span out of range");
  return hidden.middleRows(static_cast<Eigen::Index>(span.begin), static_cast<Eigen::Index>(span.size()))
      .colwise()
      .mean()
      .transpose();
}

double kd_loss(const Eigen::MatrixXd& hidden_p, std::span<const Span> spans_p,
               const Eigen::MatrixXd& hidden_prime, std::span<const Span> spans_prime,
               Eigen::MatrixXd* d_hidden_prime) {
  if (spans_p.size() != spans_prime.size()) throw Error("word count mismatch between s_p and s'");
  if (d_hidden_prime) d_hidden_prime->setZero(hidden_prime.rows(), hidden_prime.cols());
  if (spans_p.empty()) return 0.0;
  const double inv_words = 1.0 / static_cast<double>(spans_p.size());
  double loss = 0.0;
  for (std::size_t w = 0; w < spans_p.size(); ++w) {
    Eigen::VectorXd diff = word_repr(hidden_p, spans_p[w]) - word_repr(hidden_prime, spans_prime[w]);
    loss += diff.squaredNorm();
    if (d_hidden_prime) {
      // d/dh' of ||h_p - mean(h')||^2 spreads -2 diff evenly over the span.
      const Span s = spans_prime[w];
      Eigen::RowVectorXd g = (-2.0 * inv_words / static_cast<double>(s.size())) * diff.transpose();
      for (std::size_t i = s.begin; i < s.end; ++i) d_hidden_prime->row(static_cast<Eigen::Index>(i)) += g;
    }
  }
  return loss * inv_words;
}

// ---------------------------------------------------------------------------

CandidateCache::CandidateCache(const SegmentationModel& segmenter, const PretrainedModel& model,
                               MorphConfig morph)
    : builder_(segmenter, *model.vocab, morph), embeddings_(model.embedding_matrix()) {}

std::shared_ptr<const Candidates<double>> CandidateCache::get(const Token& token) {
  auto it = cache_.find(token);
  if (it != cache_.end()) return it->second;
  SimilarSet set = builder_(token);
  std::shared_ptr<const Candidates<double>> c;
  if (!set.empty()) c = std::make_shared<const Candidates<double>>(gather(set, embeddings_));
  cache_.emplace(token, c);
  return c;
}

KdExample prepare_example(const PretrainedModel& model, AugmentedPair pair, CandidateCache& cache, Rng& rng,
                          double fallback_stddev) {
  KdExample ex;
  ex.pair = std::move(pair);
  const auto& tokens = ex.pair.s_prime.tokens;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n > model.config.max_seq_len || ex.pair.s_p.tokens.size() > static_cast<std::size_t>(model.config.max_seq_len)) {
    throw Error("sentence exceeds max_seq_len");
  }
  ex.prime_ids.assign(tokens.size(), -1);
  ex.candidates.assign(tokens.size(), nullptr);
  ex.base_rows = Eigen::MatrixXd::Zero(n, model.config.dim);
  std::normal_distribution<double> fallback(0.0, fallback_stddev);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (auto id = model.vocab->find(tokens[i])) {
      ex.prime_ids[i] = *id;
      ex.base_rows.row(static_cast<Eigen::Index>(i)) = model.weights.embedding.row(*id);
    } else if (auto c = cache.get(tokens[i])) {
      ex.candidates[i] = std::move(c);
    } else {
      for (Eigen::Index j = 0; j < model.config.dim; ++j) ex.base_rows(static_cast<Eigen::Index>(i), j) = fallback(rng);
    }
  }
  ex.mask = plan_masks(ex.prime_ids, model.config.mask_fraction, model.vocab->size(), rng);
  auto p_ids = to_ids(*model.vocab, ex.pair.s_p.tokens);
  ex.hidden_p = forward_hidden(model, embed(model.weights, p_ids));
  return ex;
}

KdLosses kd_objective(const PretrainedModel& model, const KdExample& example,
                      const GeneratorParams<double>& params, double lambda, GeneratorGradients<double>* grads,
                      double grad_scale) {
  Eigen::MatrixXd rows = example.base_rows;
  for (std::size_t i = 0; i < example.candidates.size(); ++i) {
    if (example.candidates[i]) {
      rows.row(static_cast<Eigen::Index>(i)) = generate(params, *example.candidates[i]).transpose();
    }
  }
  const auto& w = model.weights;
  const auto& cfg = model.config;
  KdLosses losses;
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(rows.rows(), rows.cols());

  if (!example.mask.positions.empty()) {
    Eigen::MatrixXd masked = rows;
    apply_masks(example.mask, w, masked);
    EncoderPass pass(w, cfg, std::move(masked));
    Eigen::MatrixXd d_hidden;
    losses.lp = mlm_head(w, pass.hidden(), example.mask.positions, example.mask.targets,
                         grads ? &d_hidden : nullptr, nullptr);
    if (grads) upstream += pass.backward(d_hidden, nullptr);
  }
  {
    EncoderPass pass(w, cfg, rows);
    Eigen::MatrixXd d_hidden;
    losses.ld = kd_loss(example.hidden_p, example.pair.s_p.spans, pass.hidden(), example.pair.s_prime.spans,
                        grads ? &d_hidden : nullptr);
    if (grads && lambda != 0.0) upstream += lambda * pass.backward(d_hidden, nullptr);
  }
  losses.total = total_loss(losses.lp, losses.ld, lambda);

  if (grads) {
    for (std::size_t i = 0; i < example.candidates.size(); ++i) {
      if (!example.candidates[i]) continue;
      Eigen::VectorXd up = grad_scale * upstream.row(static_cast<Eigen::Index>(i)).transpose();
      auto g = backward(params, *example.candidates[i], up);
      if (params.kind == GeneratorKind::Att) grads->w += g.w;
      if (params.kind == GeneratorKind::Patt) grads->w_r += g.w_r;
    }
  }
  return losses;
}

TrainResult train_generator(const PretrainedModel& model, const SegmentationModel& segmenter,
                            const std::vector<Segmented>& corpus, const TrainConfig& config) {
  config.validate();
  model.validate();
  std::vector<const Segmented*> usable;
  for (const auto& s : corpus) {
    if (!s.tokens.empty() && s.tokens.size() <= static_cast<std::size_t>(model.config.max_seq_len)) {
      usable.push_back(&s);
    }
  }
  if (usable.empty()) throw Error("empty corpus");

  Rng rng(config.seed);
  TrainResult result;
  result.params = GeneratorParams<double>::initialized(config.kind, model.config.dim, rng, config.verbatim_prefactor);
  result.checkpoints.emplace_back(0, result.params);
  CandidateCache cache(segmenter, model, config.morph);
  Adam adam(config.adam);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  const double scale = 1.0 / static_cast<double>(config.batch_size);

  for (int step = 1; step <= config.steps; ++step) {
    auto grads = GeneratorParams<double>::zeros(config.kind, model.config.dim);
    GeneratorGradients<double> g{grads.w, grads.w_r, {}};
    LossRecord record{step, 0, 0, 0};
    for (int b = 0; b < config.batch_size; ++b) {
      const Segmented& s = *usable[pick(rng)];
      auto pair = make_pair(s, *model.vocab, rng, config.augment);
      if (pair.s_prime.tokens.size() > static_cast<std::size_t>(model.config.max_seq_len)) {
        pair.s_prime = pair.s_p;
        pair.unseen.clear();
      }
      KdExample ex = prepare_example(model, std::move(pair), cache, rng, config.fallback_stddev);
      KdLosses l = kd_objective(model, ex, result.params, config.lambda, &g, scale);
      record.lp += l.lp * scale;
      record.ld += l.ld * scale;
      record.total += l.total * scale;
    }
    if (!std::isfinite(record.total)) {
      throw Error("generator training diverged (non-finite loss) at step " + std::to_string(step));
    }
    result.curve.push_back(record);

    std::vector<ParamSlot> slots;
    if (config.kind == GeneratorKind::Att) slots.push_back({result.params.w.data(), g.w.data(), g.w.size()});
    if (config.kind == GeneratorKind::Patt) slots.push_back({result.params.w_r.data(), g.w_r.data(), g.w_r.size()});
    adam.step(slots);

    if ((config.checkpoint_every > 0 && step % config.checkpoint_every == 0) || step == config.steps) {
      if (result.checkpoints.back().first != step) result.checkpoints.emplace_back(step, result.params);
    }
  }
  return result;
}

void write_loss_curve(std::ostream& out, std::span<const LossRecord> curve) {
  char buf[128];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%d\t%.9g\t%.9g\t%.9g\n", r.step, r.lp, r.ld, r.total);
    out << buf;
  }
}

}  // namespace vbridge
