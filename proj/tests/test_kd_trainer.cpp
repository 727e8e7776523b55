#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "test_util.hpp"

using namespace vbridge;
using Eigen::MatrixXd;
using vbridge::testing::SmallWorld;

namespace {

std::vector<Segmented> segmented_upstream(std::size_t n) {
  const auto& w = SmallWorld::get();
  auto all = segment_corpus(w.bpe, w.upstream);
  all.resize(std::min(n, all.size()));
  return all;
}

double mean_total(std::span<const LossRecord> records) {
  double s = 0;
  for (const auto& r : records) s += r.total;
  return s / static_cast<double>(records.size());
}

}  // namespace

TEST(WordRepr, SpanMeans) {
  MatrixXd h = MatrixXd::Random(5, 8);
  EXPECT_EQ(word_repr(h, {2, 3}), Eigen::VectorXd(h.row(2).transpose()));
  MatrixXd same(2, 3);
  same << 1, 2, 3, 1, 2, 3;
  EXPECT_EQ(word_repr(same, {0, 2}), Eigen::Vector3d(1, 2, 3));
  Eigen::VectorXd loop = Eigen::VectorXd::Zero(8);
  for (int i = 1; i < 4; ++i) {
    for (int j = 0; j < 8; ++j) loop(j) += h(i, j) / 3.0;
  }
  EXPECT_LT((word_repr(h, {1, 4}) - loop).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(word_repr(h, {2, 2}), Error);
  EXPECT_THROW(word_repr(h, {4, 6}), Error);
}

TEST(KdLoss, ZeroForIdenticalStates) {
  MatrixXd h = MatrixXd::Random(4, 6);
  std::vector<Span> spans{{0, 1}, {1, 4}};
  EXPECT_EQ(kd_loss(h, spans, h, spans), 0.0);
}

TEST(KdLoss, HandComputedValue) {
  MatrixXd hp(1, 2), hq(1, 2);
  hp << 1, 0;
  hq << 0, 1;
  std::vector<Span> one{{0, 1}};
  EXPECT_DOUBLE_EQ(kd_loss(hp, one, hq, one), 2.0);
}

TEST(KdLoss, WordCountMismatchThrows) {
  MatrixXd h = MatrixXd::Random(3, 2);
  std::vector<Span> a{{0, 1}, {1, 3}}, b{{0, 3}};
  EXPECT_THROW(kd_loss(h, a, h, b), Error);
}

TEST(KdLoss, GradientMatchesFiniteDifferences) {
  MatrixXd hp = MatrixXd::Random(3, 4), hq = MatrixXd::Random(5, 4);
  std::vector<Span> sp{{0, 1}, {1, 3}}, sq{{0, 2}, {2, 5}};
  MatrixXd d;
  kd_loss(hp, sp, hq, sq, &d);
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < hq.size(); ++k) {
    MatrixXd a = hq, b = hq;
    a.data()[k] += h;
    b.data()[k] -= h;
    EXPECT_NEAR(d.data()[k], (kd_loss(hp, sp, a, sq) - kd_loss(hp, sp, b, sq)) / (2 * h), 1e-8);
  }
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_EQ(total_loss(1.0, 2.0, 0.5), 2.0);
  EXPECT_EQ(total_loss(1.25, 9.0, 0.0), 1.25);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.kind = GeneratorKind::Avg;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "non-trainable generator");
  }
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.steps = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  const auto& world = SmallWorld::get();
  auto corpus = segmented_upstream(200);
  CandidateCache cache(world.bpe, world.model, {});
  Rng rng(3);
  const double h = 1e-5;
  int checked = 0;
  for (const auto& s : corpus) {
    if (checked >= 12) break;
    auto pair = make_pair(s, *world.vocab, rng, AugmentConfig{0.5, 0.5, 3});
    KdExample ex = prepare_example(world.model, std::move(pair), cache, rng);
    if (std::none_of(ex.candidates.begin(), ex.candidates.end(), [](const auto& c) { return c != nullptr; })) continue;
    auto kind = checked % 2 ? GeneratorKind::Att : GeneratorKind::Patt;
    auto params = GeneratorParams<double>::initialized(kind, world.model.config.dim, rng, checked % 4 < 2, 0.5);
    auto zero = GeneratorParams<double>::zeros(kind, params.dim);
    GeneratorGradients<double> g{zero.w, zero.w_r, {}};
    kd_objective(world.model, ex, params, 0.5, &g);
    double* p = kind == GeneratorKind::Att ? params.w.data() : params.w_r.data();
    const double* a = kind == GeneratorKind::Att ? g.w.data() : g.w_r.data();
    Eigen::Index n = kind == GeneratorKind::Att ? params.w.size() : params.w_r.size();
    for (Eigen::Index k = 0; k < n; k += 3) {
      double keep = p[k];
      p[k] = keep + h;
      double fp = kd_objective(world.model, ex, params, 0.5).total;
      p[k] = keep - h;
      double fm = kd_objective(world.model, ex, params, 0.5).total;
      p[k] = keep;
      double num = (fp - fm) / (2 * h);
      EXPECT_LT(std::abs(a[k] - num), 1e-9 + 1e-4 * std::max(std::abs(a[k]), std::abs(num)));
    }
    ++checked;
  }
  EXPECT_EQ(checked, 12);
}

TEST(Objective, NoAugmentationGivesZeroDistillationLoss) {
  const auto& world = SmallWorld::get();
  CandidateCache cache(world.bpe, world.model, {});
  Rng rng(1);
  auto params = GeneratorParams<double>::initialized(GeneratorKind::Patt, world.model.config.dim, rng);
  for (const auto& s : segmented_upstream(100)) {
    KdExample ex = prepare_example(world.model, make_pair(s, *world.vocab, rng, {0.0, 0.0, 3}), cache, rng);
    EXPECT_EQ(kd_objective(world.model, ex, params, 0.5).ld, 0.0);
  }
}

TEST(Objective, TableRowRoutingGivesZeroDistillationLoss) {
  // Every position goes through the generator with a singleton set holding
  // the token's own table row.
  const auto& world = SmallWorld::get();
  CandidateCache cache(world.bpe, world.model, {});
  Rng rng(2);
  auto avg = GeneratorParams<double>::avg(world.model.config.dim);
  for (const auto& s : segmented_upstream(50)) {
    KdExample ex = prepare_example(world.model, make_pair(s, *world.vocab, rng, {0.0, 0.0, 3}), cache, rng);
    for (std::size_t i = 0; i < ex.prime_ids.size(); ++i) {
      auto c = std::make_shared<Candidates<double>>();
      c->rows = world.model.weights.embedding.row(ex.prime_ids[i]);
      c->relations = {Relation::SubwordPrefix};
      ex.candidates[i] = c;
      ex.base_rows.row(static_cast<Eigen::Index>(i)).setZero();
    }
    EXPECT_EQ(kd_objective(world.model, ex, avg, 0.5).ld, 0.0);
  }
}

TEST(Train, AvgKindIsRejected) {
  const auto& world = SmallWorld::get();
  TrainConfig cfg;
  cfg.kind = GeneratorKind::Avg;
  EXPECT_THROW(train_generator(world.model, world.bpe, segmented_upstream(10), cfg), Error);
}

TEST(Train, ZeroAugmentationKeepsDistillationAtZero) {
  const auto& world = SmallWorld::get();
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.augment = {0.0, 0.0, 3};
  auto result = train_generator(world.model, world.bpe, segmented_upstream(300), cfg);
  for (const auto& r : result.curve) EXPECT_EQ(r.ld, 0.0);
  // Without unseen tokens the generator never receives a gradient.
  EXPECT_EQ(result.params.w_r, result.checkpoints.front().second.w_r);
}

TEST(Train, FrozenBackboneAndDeterminism) {
  const auto& world = SmallWorld::get();
  PretrainedModel copy = world.model;
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.checkpoint_every = 10;
  auto corpus = segmented_upstream(500);
  auto a = train_generator(copy, world.bpe, corpus, cfg);
  auto b = train_generator(copy, world.bpe, corpus, cfg);
  EXPECT_TRUE(backbone_equal(copy.weights, world.model.weights));
  EXPECT_EQ(copy.weights.embedding, world.model.weights.embedding);
  EXPECT_EQ(copy.weights.output_bias, world.model.weights.output_bias);
  EXPECT_EQ(a.params.w_r, b.params.w_r);
  ASSERT_EQ(a.checkpoints.size(), 5u);
  EXPECT_EQ(a.checkpoints[2].first, 20);
  EXPECT_EQ(a.curve.size(), 40u);
}

TEST(Train, CombinedLossDecreases) {
  const auto& world = SmallWorld::get();
  TrainConfig cfg;
  cfg.steps = 2000;
  auto result = train_generator(world.model, world.bpe, segmented_upstream(3000), cfg);
  std::span<const LossRecord> curve(result.curve);
  double first = mean_total(curve.first(100)), last = mean_total(curve.last(100));
  std::cout << "mean L_total first 100: " << first << ", last 100: " << last << "\n";
  EXPECT_LT(last, first);
}

TEST(LossCurve, Format) {
  std::vector<LossRecord> curve{{1, 2.5, 0.25, 2.625}};
  std::ostringstream out;
  write_loss_curve(out, curve);
  EXPECT_EQ(out.str(), "1\t2.5\t0.25\t2.625\n");
}
