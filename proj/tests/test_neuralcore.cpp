#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace vbridge;
using Eigen::MatrixXd;

namespace {

std::shared_ptr<const Vocabulary> letters(int n) {
  std::vector<std::pair<Token, std::int64_t>> entries;
  for (int i = 0; i < n; ++i) entries.emplace_back(Token(std::string(1, static_cast<char>('a' + i))), n - i);
  return std::make_shared<const Vocabulary>(entries);
}

PretrainedModel tiny_model(int vocab_size, double stddev = 0.3, std::uint64_t seed = 3) {
  PretrainedModel m;
  m.config.dim = 16;
  m.config.num_layers = 1;
  m.config.num_heads = 2;
  m.config.ffn_dim = 32;
  m.config.max_seq_len = 12;
  m.config.init_stddev = stddev;
  m.vocab = letters(vocab_size);
  Rng rng(seed);
  m.weights = EncoderWeights::init(m.config, m.vocab->size(), rng);
  return m;
}

double rel_err(double a, double b) {
  double scale = std::max({std::abs(a), std::abs(b), 1e-7});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.num_layers = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Encoder, InitIsSeededAndShaped) {
  auto a = tiny_model(7), b = tiny_model(7);
  EXPECT_TRUE(backbone_equal(a.weights, b.weights));
  EXPECT_EQ(a.weights.embedding, b.weights.embedding);
  EXPECT_EQ(a.weights.embedding.rows(), 7);
  EXPECT_EQ(a.weights.output_bias.cols(), 7);
  EXPECT_NO_THROW(a.validate());
  auto c = tiny_model(7, 0.3, 4);
  EXPECT_FALSE(backbone_equal(a.weights, c.weights));
}

TEST(Encoder, IdenticalInputsIdenticalOutputs) {
  auto m = tiny_model(5);
  MatrixXd x = MatrixXd::Random(6, 16);
  EXPECT_EQ(forward_hidden(m, x), forward_hidden(m, x));
}

TEST(Encoder, OverlengthInputThrows) {
  auto m = tiny_model(5);
  EXPECT_THROW(forward_hidden(m, MatrixXd::Random(13, 16)), Error);
  EXPECT_THROW(forward_hidden(m, MatrixXd::Random(3, 8)), Error);
}

TEST(MlmHead, UniformLogitsGiveLogV) {
  auto m = tiny_model(9);
  m.weights.embedding.setZero();
  m.weights.output_bias.setZero();
  MatrixXd hidden = MatrixXd::Random(4, 16);
  std::vector<Eigen::Index> pos{0, 2};
  std::vector<TokenId> tgt{3, 8};
  EXPECT_NEAR(mlm_head(m.weights, hidden, pos, tgt), std::log(9.0), 1e-12);
}

TEST(MlmHead, SaturatedMarginGivesNearZeroLoss) {
  auto m = tiny_model(3);
  m.weights.embedding.setZero();
  m.weights.embedding(0, 0) = 1;
  m.weights.embedding(1, 1) = 1;
  m.weights.embedding(2, 2) = 1;
  m.weights.output_bias.setZero();
  MatrixXd hidden = MatrixXd::Zero(1, 16);
  hidden(0, 1) = 20;
  std::vector<Eigen::Index> pos{0};
  std::vector<TokenId> tgt{1};
  EXPECT_LT(mlm_head(m.weights, hidden, pos, tgt), 1e-8);
}

TEST(MlmHead, TargetOutsideVocabularyThrows) {
  auto m = tiny_model(3);
  MatrixXd hidden = MatrixXd::Random(2, 16);
  std::vector<Eigen::Index> pos{0};
  std::vector<TokenId> bad{3};
  EXPECT_THROW(mlm_head(m.weights, hidden, pos, bad), Error);
}

TEST(MlmHead, HiddenGradientMatchesFiniteDifferences) {
  auto m = tiny_model(6);
  MatrixXd hidden = MatrixXd::Random(4, 16);
  std::vector<Eigen::Index> pos{1, 3};
  std::vector<TokenId> tgt{2, 5};
  MatrixXd d;
  mlm_head(m.weights, hidden, pos, tgt, &d);
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < hidden.size(); ++k) {
    MatrixXd p = hidden, q = hidden;
    p.data()[k] += h;
    q.data()[k] -= h;
    double num = (mlm_head(m.weights, p, pos, tgt) - mlm_head(m.weights, q, pos, tgt)) / (2 * h);
    EXPECT_NEAR(d.data()[k], num, 1e-8);
  }
}

TEST(Encoder, InputGradientMatchesFiniteDifferences) {
  auto m = tiny_model(8);
  MatrixXd x = MatrixXd::Random(5, 16);
  std::vector<Eigen::Index> pos{0, 3};
  std::vector<TokenId> tgt{1, 6};
  auto loss = [&](const MatrixXd& in) { return mlm_loss(m, in, pos, tgt); };
  EncoderPass pass(m.weights, m.config, x);
  MatrixXd d_hidden;
  mlm_head(m.weights, pass.hidden(), pos, tgt, &d_hidden);
  MatrixXd d_x = pass.backward(d_hidden, nullptr);
  const double h = 1e-5;
  double worst = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    MatrixXd p = x, q = x;
    p.data()[k] += h;
    q.data()[k] -= h;
    worst = std::max(worst, rel_err(d_x.data()[k], (loss(p) - loss(q)) / (2 * h)));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Encoder, ParameterGradientsMatchFiniteDifferences) {
  auto m = tiny_model(8);
  std::vector<TokenId> ids{1, 4, 2, 7, 0};
  MatrixXd x = embed(m.weights, ids);
  std::vector<Eigen::Index> pos{1, 4};
  std::vector<TokenId> tgt{4, 0};
  auto loss = [&] { return mlm_head(m.weights, forward_hidden(m, embed(m.weights, ids)), pos, tgt); };

  EncoderWeights grads = m.weights.zeros_like();
  EncoderPass pass(m.weights, m.config, x);
  MatrixXd d_hidden;
  mlm_head(m.weights, pass.hidden(), pos, tgt, &d_hidden, &grads);
  MatrixXd d_x = pass.backward(d_hidden, &grads);
  for (std::size_t i = 0; i < ids.size(); ++i) grads.embedding.row(ids[i]) += d_x.row(static_cast<Eigen::Index>(i));

  std::vector<std::pair<std::string, MatrixXd*>> params, grad_mats;
  m.weights.visit([&](const std::string& name, MatrixXd& w) { params.emplace_back(name, &w); });
  grads.visit([&](const std::string& name, MatrixXd& g) { grad_mats.emplace_back(name, &g); });
  Rng rng(2);
  const double h = 1e-5;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].first == "mask_embedding") continue;  // unused without masking
    MatrixXd& w = *params[p].second;
    std::uniform_int_distribution<Eigen::Index> pick(0, w.size() - 1);
    for (int s = 0; s < 4; ++s) {
      Eigen::Index k = pick(rng);
      double keep = w.data()[k];
      w.data()[k] = keep + h;
      double fp = loss();
      w.data()[k] = keep - h;
      double fm = loss();
      w.data()[k] = keep;
      double num = (fp - fm) / (2 * h);
      double ana = grad_mats[p].second->data()[k];
      EXPECT_LT(std::abs(ana - num), 1e-6 + 1e-3 * std::abs(num)) << params[p].first << "[" << k << "]";
    }
  }
}

TEST(Masks, CountAndEligibility) {
  std::vector<TokenId> ids{3, -1, 4, 5, -1, 6, 7, 8, 9, 2, 1, 0, 3, 4, 5, 6, 7, 8, 9, 1, 2, 3};
  Rng rng(1);
  auto plan = plan_masks(ids, 0.15, 10, rng);
  EXPECT_EQ(plan.positions.size(), 3u);  // round(0.15 * 20)
  for (std::size_t i = 0; i < plan.positions.size(); ++i) {
    EXPECT_GE(ids[static_cast<std::size_t>(plan.positions[i])], 0);
    EXPECT_EQ(plan.targets[i], ids[static_cast<std::size_t>(plan.positions[i])]);
  }
  std::vector<TokenId> one{-1, 5};
  EXPECT_EQ(plan_masks(one, 0.15, 10, rng).positions, (std::vector<Eigen::Index>{1}));
  std::vector<TokenId> none{-1, -1};
  EXPECT_TRUE(plan_masks(none, 0.15, 10, rng).positions.empty());
}

TEST(Masks, ActionMix) {
  std::vector<TokenId> ids(100, 1);
  Rng rng(4);
  std::array<int, 3> counts{};
  for (int i = 0; i < 200; ++i) {
    for (auto a : plan_masks(ids, 0.5, 10, rng).actions) ++counts[static_cast<std::size_t>(a)];
  }
  double total = counts[0] + counts[1] + counts[2];
  EXPECT_NEAR(counts[0] / total, 0.8, 0.02);
  EXPECT_NEAR(counts[1] / total, 0.1, 0.02);
  EXPECT_NEAR(counts[2] / total, 0.1, 0.02);
  for (auto a : plan_masks(ids, 0.5, 10, rng, true).actions) EXPECT_EQ(a, MaskAction::MaskRow);
}

TEST(Adam, MinimizesQuadratic) {
  Eigen::VectorXd x = Eigen::VectorXd::Constant(3, 5.0), g(3);
  Adam adam({.learning_rate = 0.1, .warmup_steps = 5});
  for (int i = 0; i < 500; ++i) {
    g = 2 * x;
    ParamSlot slot{x.data(), g.data(), 3};
    adam.step(std::span<const ParamSlot>(&slot, 1));
  }
  EXPECT_LT(x.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(Adam, WarmupIsLinear) {
  Adam adam({.learning_rate = 1.0, .warmup_steps = 4});
  double x = 0, g = 1;
  ParamSlot slot{&x, &g, 1};
  adam.step(std::span<const ParamSlot>(&slot, 1));
  EXPECT_DOUBLE_EQ(adam.learning_rate(), 0.5);
}

TEST(Trainer, FrozenBackboneIsBitwiseUnchanged) {
  auto m = tiny_model(8, 0.05);
  auto before = m.weights;
  MlmTrainer trainer(m, {.learning_rate = 1e-2}, 1, true);
  std::vector<std::vector<TokenId>> batch{{1, 2, 3, 4, 5, 6}, {7, 6, 5, 4}};
  for (int i = 0; i < 5; ++i) trainer.step(batch);
  EXPECT_TRUE(backbone_equal(before, m.weights));
  EXPECT_EQ(backbone_hash(before), backbone_hash(m.weights));
  EXPECT_NE(before.embedding, m.weights.embedding);
}

TEST(Trainer, BackboneHashIgnoresEmbedding) {
  auto m = tiny_model(5);
  auto h = backbone_hash(m.weights);
  m.weights.embedding.setRandom();
  m.weights.output_bias.setRandom();
  EXPECT_EQ(backbone_hash(m.weights), h);
  m.weights.final_gain(0, 0) += 1e-9;
  EXPECT_NE(backbone_hash(m.weights), h);
}

TEST(Pretrain, MemorizesOneSentence) {
  auto vocab = letters(12);
  std::vector<std::vector<TokenId>> data{{0, 3, 5, 7, 9, 11, 2, 4}};
  PretrainConfig cfg;
  cfg.encoder.dim = 16;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.ffn_dim = 32;
  cfg.steps = 200;
  cfg.batch_size = 4;
  cfg.adam.warmup_steps = 10;
  cfg.adam.learning_rate = 3e-3;
  PretrainReport report;
  pretrain(data, vocab, cfg, &report);
  EXPECT_LT(report.final_held_out_loss, report.initial_held_out_loss);
}

TEST(Pretrain, SeededRunsGiveIdenticalCheckpoints) {
  vbridge::testing::TempDir dir;
  SyntheticLanguage lang;
  auto corpus = lang.upstream(200, 1);
  auto bpe = learn_bpe(corpus, 100);
  auto vocab = std::make_shared<const Vocabulary>(build_vocabulary(corpus, bpe));
  auto ids = vbridge::testing::to_id_corpus(corpus, bpe, *vocab);
  PretrainConfig cfg;
  cfg.encoder.dim = 16;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.ffn_dim = 32;
  cfg.steps = 20;
  for (const char* name : {"a", "b"}) save_checkpoint(pretrain(ids, vocab, cfg), dir / name);
  for (const auto& f : std::filesystem::directory_iterator(dir / "a")) {
    EXPECT_EQ(sha256_file(f.path()), sha256_file(dir / "b" / f.path().filename())) << f.path();
  }
}

TEST(Checkpoint, RoundTripAtFloatPrecision) {
  vbridge::testing::TempDir dir;
  auto m = tiny_model(6);
  save_checkpoint(m, dir.path());
  auto back = load_checkpoint(dir.path());
  EXPECT_EQ(*back.vocab, *m.vocab);
  EXPECT_EQ(back.config.dim, 16);
  EXPECT_EQ(back.config.num_heads, 2);
  std::vector<const MatrixXd*> a, b;
  m.weights.visit([&](const std::string&, const MatrixXd& w) { a.push_back(&w); });
  back.weights.visit([&](const std::string&, const MatrixXd& w) { b.push_back(&w); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(b[i]->cast<float>(), a[i]->cast<float>());
  }
  std::filesystem::remove(dir / "final_gain.f32");
  EXPECT_THROW(load_checkpoint(dir.path()), Error);
}

TEST(Pretrain, SyntheticCorpusLossDropsByThirty) {
  SyntheticLanguage lang;
  auto corpus = lang.upstream(5000, 3);
  auto bpe = learn_bpe(corpus, 400);
  auto vocab = std::make_shared<const Vocabulary>(build_vocabulary(corpus, bpe));
  PretrainConfig cfg;
  cfg.steps = 600;
  PretrainReport report;
  pretrain(vbridge::testing::to_id_corpus(corpus, bpe, *vocab), vocab, cfg, &report);
  std::cout << "held-out loss " << report.initial_held_out_loss << " -> " << report.final_held_out_loss << "\n";
  EXPECT_LE(report.final_held_out_loss, 0.7 * report.initial_held_out_loss);
}

TEST(Evaluate, SeedFixesMasks) {
  auto m = tiny_model(8);
  std::vector<std::vector<TokenId>> data{{1, 2, 3, 4, 5, 6, 7}, {0, 1, 2}};
  EXPECT_EQ(evaluate_mlm(m, data, 5), evaluate_mlm(m, data, 5));
}
