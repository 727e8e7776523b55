#include "vbridge/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <optional>

namespace vbridge {

namespace {

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::vector<TokenId>> truncated(const std::vector<std::vector<TokenId>>& sentences, Eigen::Index max_len) {
  std::vector<std::vector<TokenId>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    if (s.empty()) continue;
    out.emplace_back(s.begin(), s.begin() + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(s.size()), max_len));
  }
  return out;
}

}  // namespace

std::vector<SweepRow> seq_length_sweep(const Corpus& corpus, std::span<const std::size_t> merge_counts) {
  if (!std::is_sorted(merge_counts.begin(), merge_counts.end())) throw Error("merge_counts must be ascending");
  std::vector<SweepRow> rows;
  if (merge_counts.empty()) return rows;
  const SegmentationModel full = learn_bpe(corpus, merge_counts.back());
  for (std::size_t n : merge_counts) {
    SegmentationModel model = full.prefix(std::min(n, full.size()));
    auto segmented = segment_corpus(model, corpus);
    std::size_t tokens = 0;
    for (const auto& s : segmented) tokens += s.tokens.size();
    rows.push_back({n, build_vocabulary(corpus, model).size(),
                    static_cast<double>(tokens) / static_cast<double>(segmented.size())});
  }
  return rows;
}

void write_sweep_table(std::ostream& out, std::span<const SweepRow> rows) {
  out << "merges\tvocab_size\tmean_tokens_per_sentence\n";
  for (const auto& r : rows) out << r.merges << '\t' << r.vocab_size << '\t' << fmt(r.mean_tokens) << '\n';
}

// ---------------------------------------------------------------------------

PretrainedModel target_model(const PretrainedModel& pretrained, const EmbeddingMatrix& init) {
  if (init.dim() != pretrained.config.dim) {
    throw Error("dimension mismatch: init d=" + std::to_string(init.dim()) +
                ", model d=" + std::to_string(pretrained.config.dim));
  }
  PretrainedModel model{pretrained.config, init.vocab_ptr(), pretrained.weights};
  model.weights.embedding = init.rows();
  const Vocabulary& src = *pretrained.vocab;
  const double mean_bias = pretrained.weights.output_bias.mean();
  model.weights.output_bias.resize(1, static_cast<Eigen::Index>(init.vocab().size()));
  for (std::size_t i = 0; i < init.vocab().size(); ++i) {
    auto id = src.find(init.vocab().tokens()[i]);
    model.weights.output_bias(0, static_cast<Eigen::Index>(i)) = id ? pretrained.weights.output_bias(0, *id) : mean_bias;
  }
  return model;
}

std::vector<ProbeCurve> downstream_probe(const PretrainedModel& pretrained, std::span<const ProbeInit> inits,
                                         const std::vector<std::vector<TokenId>>& train,
                                         const std::vector<std::vector<TokenId>>& held_out,
                                         const ProbeConfig& config) {
  if (inits.empty()) return {};
  for (const auto& init : inits) {
    if (!(init.embeddings.vocab() == inits.front().embeddings.vocab())) {
      throw Error("vocabulary mismatch across inits: " + init.label + " vs " + inits.front().label);
    }
  }
  const auto max_len = pretrained.config.max_seq_len;
  const auto train_set = truncated(train, max_len);
  const auto eval_set = truncated(held_out, max_len);
  if (eval_set.empty()) throw Error("empty held-out corpus");
  if (config.steps > 0 && train_set.empty()) throw Error("empty training corpus");

  // Batch order is drawn once so every init sees the same batches.
  std::vector<std::vector<std::size_t>> batches(static_cast<std::size_t>(std::max(config.steps, 0)));
  if (!train_set.empty()) {
    Rng rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    for (auto& b : batches) {
      for (int i = 0; i < config.batch_size; ++i) b.push_back(pick(rng));
    }
  }

  std::vector<ProbeCurve> curves;
  for (const auto& init : inits) {
    PretrainedModel model = target_model(pretrained, init.embeddings);
    ProbeCurve curve;
    curve.label = init.label;
    curve.backbone_hash = backbone_hash(model.weights);
    curve.initial_loss = evaluate_mlm(model, eval_set, config.eval_seed);
    curve.curve.emplace_back(0, curve.initial_loss);
    MlmTrainer trainer(model, config.adam, config.seed);
    std::vector<std::vector<TokenId>> batch;
    for (int step = 1; step <= config.steps; ++step) {
      batch.clear();
      for (std::size_t i : batches[static_cast<std::size_t>(step - 1)]) batch.push_back(train_set[i]);
      trainer.step(batch);
      if ((config.eval_every > 0 && step % config.eval_every == 0) || step == config.steps) {
        curve.curve.emplace_back(step, evaluate_mlm(model, eval_set, config.eval_seed));
      }
    }
    curve.final_loss = curve.curve.back().second;
    curves.push_back(std::move(curve));
  }
  return curves;
}

void write_probe_table(std::ostream& out, std::span<const ProbeCurve> curves) {
  out << "init\tstep\theld_out_loss\n";
  for (const auto& c : curves) {
    for (const auto& [step, loss] : c.curve) out << c.label << '\t' << step << '\t' << fmt(loss) << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<ConvergenceRow> convergence_curve(
    const PretrainedModel& pretrained, const SegmentationModel& source_segmenter,
    std::shared_ptr<const Vocabulary> target,
    std::span<const std::pair<int, GeneratorParams<double>>> checkpoints,
    const std::vector<std::vector<TokenId>>& train, const std::vector<std::vector<TokenId>>& held_out,
    const ProbeConfig& probe, const TransplantOptions& transplant_options) {
  std::vector<ConvergenceRow> rows;
  const EmbeddingMatrix source = pretrained.embedding_matrix();
  for (const auto& [step, params] : checkpoints) {
    if (!rows.empty() && step <= rows.back().generator_step) throw Error("checkpoint steps must be increasing");
    auto result = transplant(source, source_segmenter, target, params, transplant_options);
    ProbeInit init{"step" + std::to_string(step), std::move(result.matrix)};
    auto curve = downstream_probe(pretrained, std::span(&init, 1), train, held_out, probe);
    rows.push_back({step, curve.front().initial_loss, curve.front().final_loss});
  }
  return rows;
}

void write_convergence_table(std::ostream& out, std::span<const ConvergenceRow> rows) {
  out << "generator_step\tprobe_loss\tloss_after_finetuning\n";
  for (const auto& r : rows) {
    out << r.generator_step << '\t' << fmt(r.initial_loss) << '\t' << fmt(r.final_loss) << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& embeddings, const Token& query, std::size_t k) {
  const Vocabulary& vocab = embeddings.vocab();
  auto qid = vocab.find(query);
  if (!qid) throw Error("token not in vocabulary: " + query.rendered());
  if (k >= vocab.size()) throw Error("k must be smaller than the vocabulary size");
  const Eigen::VectorXd norms = embeddings.rows().rowwise().norm();
  const Eigen::VectorXd dots = embeddings.rows() * embeddings.row(*qid).transpose();
  const double qn = norms(*qid);
  std::vector<Neighbor> all;
  all.reserve(vocab.size() - 1);
  for (TokenId i = 0; i < static_cast<TokenId>(vocab.size()); ++i) {
    if (i == *qid) continue;
    double denom = qn * norms(i);
    all.push_back({i, vocab.token(i), denom > 0 ? dots(i) / denom : 0.0});
  }
  auto better = [](const Neighbor& a, const Neighbor& b) {
    return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

// ---------------------------------------------------------------------------

const ProbeCurve& BenchmarkResult::probe(std::string_view label) const {
  for (const auto& p : probes) {
    if (p.label == label) return p;
  }
  throw Error("no probe labelled " + std::string(label));
}

BenchmarkResult run_benchmark(const BenchmarkConfig& config, std::ostream* log) {
  auto say = [&](const std::string& msg) {
    if (log) *log << msg << std::endl;
  };
  BenchmarkResult result;
  SyntheticLanguage language(config.language);
  const Corpus upstream = language.upstream(config.upstream_sentences, config.upstream_seed);
  const Corpus downstream = language.downstream(config.downstream_sentences, config.downstream_seed);

  // Upstream side: vocabulary and pretrained encoder.
  auto t0 = std::chrono::steady_clock::now();
  const SegmentationModel up_bpe = learn_bpe(upstream, config.upstream_merges);
  auto up_vocab = std::make_shared<const Vocabulary>(build_vocabulary(upstream, up_bpe));
  const auto up_segmented = segment_corpus(up_bpe, upstream);
  std::vector<std::vector<TokenId>> up_ids;
  up_ids.reserve(up_segmented.size());
  for (const auto& s : up_segmented) up_ids.push_back(to_ids(*up_vocab, s.tokens));
  result.source_vocab_size = up_vocab->size();
  say("upstream vocabulary: " + std::to_string(up_vocab->size()) + " tokens");
  const PretrainedModel model = pretrain(up_ids, up_vocab, config.pretrain, &result.pretrain);
  result.pretrain_seconds = seconds_since(t0);
  say("pretrained: held-out loss " + fmt(result.pretrain.initial_held_out_loss) + " -> " +
      fmt(result.pretrain.final_held_out_loss) + " (" + fmt(result.pretrain_seconds) + " s)");

  // Downstream side: its own vocabulary, split into finetuning and held-out text.
  const SegmentationModel down_bpe = learn_bpe(downstream, config.downstream_merges);
  auto down_vocab = std::make_shared<const Vocabulary>(build_vocabulary(downstream, down_bpe));
  result.mismatch = mismatch_report(*up_vocab, *down_vocab);
  say("downstream vocabulary: " + std::to_string(down_vocab->size()) + " tokens, " +
      std::to_string(result.mismatch.unseen) + " unseen");
  std::vector<std::vector<TokenId>> down_train, down_eval;
  {
    const auto segmented = segment_corpus(down_bpe, downstream);
    const auto n_eval = static_cast<std::size_t>(config.downstream_held_out_fraction *
                                                 static_cast<double>(segmented.size()));
    for (std::size_t i = 0; i < segmented.size(); ++i) {
      (i < segmented.size() - n_eval ? down_train : down_eval).push_back(to_ids(*down_vocab, segmented[i].tokens));
    }
  }

  // Generators, trained on upstream text against the frozen model.
  t0 = std::chrono::steady_clock::now();
  TrainConfig patt_cfg = config.generator;
  patt_cfg.kind = GeneratorKind::Patt;
  if (config.convergence_points > 0) patt_cfg.checkpoint_every = std::max(1, patt_cfg.steps / config.convergence_points);
  const TrainResult patt = train_generator(model, up_bpe, up_segmented, patt_cfg);
  result.patt_curve = patt.curve;
  say("PATT generator: L_total " + fmt(patt.curve.front().total) + " -> " + fmt(patt.curve.back().total));
  std::optional<TrainResult> att;
  if (config.train_att) {
    TrainConfig att_cfg = config.generator;
    att_cfg.kind = GeneratorKind::Att;
    att_cfg.checkpoint_every = 0;
    att = train_generator(model, up_bpe, up_segmented, att_cfg);
    say("ATT generator: L_total " + fmt(att->curve.front().total) + " -> " + fmt(att->curve.back().total));
  }
  std::optional<TrainResult> patt_verbatim;
  if (config.train_patt_verbatim) {
    TrainConfig v_cfg = config.generator;
    v_cfg.kind = GeneratorKind::Patt;
    v_cfg.verbatim_prefactor = true;
    v_cfg.checkpoint_every = 0;
    patt_verbatim = train_generator(model, up_bpe, up_segmented, v_cfg);
  }
  result.generator_seconds = seconds_since(t0);

  // Transplant and probe.
  t0 = std::chrono::steady_clock::now();
  const EmbeddingMatrix source = model.embedding_matrix();
  std::vector<ProbeInit> inits;
  TransplantOptions random_opts = config.transplant;
  random_opts.generate = false;
  inits.push_back({"random", transplant(source, up_bpe, down_vocab, GeneratorParams<double>::avg(model.config.dim),
                                        random_opts).matrix});
  {
    auto avg = transplant(source, up_bpe, down_vocab, GeneratorParams<double>::avg(model.config.dim), config.transplant);
    result.generated = static_cast<std::size_t>(
        std::count(avg.provenance.begin(), avg.provenance.end(), Provenance::Generated));
    inits.push_back({"avg", std::move(avg.matrix)});
  }
  if (att) inits.push_back({"att", transplant(source, up_bpe, down_vocab, att->params, config.transplant).matrix});
  inits.push_back({"patt", transplant(source, up_bpe, down_vocab, patt.params, config.transplant).matrix});
  if (patt_verbatim) {
    inits.push_back(
        {"patt-verbatim", transplant(source, up_bpe, down_vocab, patt_verbatim->params, config.transplant).matrix});
  }
  result.probes = downstream_probe(model, inits, down_train, down_eval, config.probe);
  for (const auto& p : result.probes) {
    say("probe " + p.label + ": initial " + fmt(p.initial_loss) + ", after " + std::to_string(config.probe.steps) +
        " steps " + fmt(p.final_loss));
  }

  ProbeConfig conv_probe = config.probe;
  conv_probe.steps = 0;
  result.convergence = convergence_curve(model, up_bpe, down_vocab, patt.checkpoints, down_train, down_eval,
                                         conv_probe, config.transplant);
  result.probe_seconds = seconds_since(t0);
  return result;
}

}  // namespace vbridge
