#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "iosda/datahub.hpp"
#include "iosda/gradcheck.hpp"
#include "iosda/meosda.hpp"

using namespace iosda;
namespace fs = std::filesystem;

namespace {

// Makes head `m` emit `logits` for every input: zero output weights, bias = logits.
void force_head_logits(MeosdaState& s, std::size_t m, const std::vector<double>& logits) {
  auto& last = s.heads[m].params.layers.back();
  for (double& w : last.weight.data()) w = 0.0;
  last.bias = RealMatrix(1, logits.size(), logits);
}

void force_head_probs(MeosdaState& s, std::size_t m, const std::vector<double>& p) {
  std::vector<double> l;
  for (double v : p) l.push_back(std::log(v));
  force_head_logits(s, m, l);
}

MeosdaState tiny_state(std::size_t heads, std::uint64_t seed = 0) {
  Rng rng(seed);
  std::vector<std::uint32_t> doms;
  for (std::size_t h = 0; h < heads; ++h) doms.push_back(static_cast<std::uint32_t>(h + 1));
  return MeosdaState::create(tiny_meosda_config(), doms, rng);
}

TrainingView labeled(std::uint32_t dom, std::size_t n, const MeosdaConfig& c, Rng& rng) {
  TrainingView v{dom, detail::random_matrix(n, c.feat_dim, rng), {}};
  for (std::size_t i = 0; i < n; ++i) v.labels.push_back(ClassLabel::from_slot(i % (c.num_known + 1), c.num_known));
  return v;
}

double boundary(double p, double t = 0.5) { return -t * std::log(p) - (1 - t) * std::log(1 - p); }

// Logits over three slots that put probability p on the last one.
RealMatrix logits_with_unknown(double p) { return RealMatrix::from_rows({{0.0, 0.0, std::log(2 * p / (1 - p))}}); }

}  // namespace

TEST(PredictHead, ForcedLogits) {
  auto s = tiny_state(1);
  Rng rng(1);
  const RealMatrix x = detail::random_matrix(3, s.config.feat_dim, rng);
  force_head_logits(s, 0, {0.0, 0.0, 0.0});
  const RealMatrix u = predict_head(s, 0, x);
  for (double p : u.data()) EXPECT_NEAR(p, 1.0 / 3, 1e-15);
  force_head_logits(s, 0, {std::log(2.0), 0.0, 0.0});
  const RealMatrix p = predict_head(s, 0, x);
  EXPECT_NEAR(p.row(0)[0], 0.5, 1e-15);
  EXPECT_NEAR(p.row(0)[1], 0.25, 1e-15);
  EXPECT_NEAR(p.row(0)[2], 0.25, 1e-15);
  EXPECT_THROW(predict_head(s, 1, x), DimensionError);
}

TEST(PredictHead, RowsAreDistributions) {
  const auto s = tiny_state(2, 4);
  Rng rng(2);
  const RealMatrix x = detail::random_matrix(50, s.config.feat_dim, rng, 10.0);
  for (const auto& probs : head_probabilities(s, x))
    for (std::size_t r = 0; r < probs.rows(); ++r) EXPECT_NO_THROW(ProbVector::from_row(probs.row(r)));
}

TEST(SourceCeLoss, Examples) {
  auto s = tiny_state(1);
  Rng rng(3);
  const TrainingView v = labeled(1, 6, s.config, rng);
  force_head_logits(s, 0, {0.0, 0.0, 0.0});
  EXPECT_NEAR(source_ce_loss(s, 0, v), std::log(3.0), 1e-12);
  TrainingView zeros{1, v.features, std::vector<ClassLabel>(6, ClassLabel::known(0))};
  force_head_logits(s, 0, {60.0, 0.0, 0.0});
  EXPECT_NEAR(source_ce_loss(s, 0, zeros), 0.0, 1e-12);
  TrainingView hidden{1, v.features, std::vector<ClassLabel>(6, ClassLabel::hidden())};
  EXPECT_THROW(source_ce_loss(s, 0, hidden), DataError);
}

TEST(OpenAdvLoss, Examples) {
  auto s = tiny_state(1);
  Rng rng(4);
  const RealMatrix x = detail::random_matrix(5, s.config.feat_dim, rng);
  force_head_probs(s, 0, {0.25, 0.25, 0.5});
  EXPECT_NEAR(open_adv_loss(s, 0, x), std::log(2.0), 1e-12);
  force_head_probs(s, 0, {0.5, 0.25, 0.25});
  EXPECT_NEAR(open_adv_loss(s, 0, x), 0.8369882167858358, 1e-12);
}

TEST(OpenAdvLoss, MinimumIsLn2AtHalf) {
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double v = open_boundary_loss(logits_with_unknown(p), 2).value;
    EXPECT_NEAR(v, boundary(p), 1e-9);
    EXPECT_GE(v, std::log(2.0) - 1e-9);
    if (i != 500) {
      EXPECT_GT(v, std::log(2.0) + 1e-9);
    }
    EXPECT_NEAR(v, open_boundary_loss(logits_with_unknown(1 - p), 2).value, 1e-9);
  }
  EXPECT_NEAR(open_boundary_loss(logits_with_unknown(0.5), 2).value, std::log(2.0), 1e-9);
}

TEST(MeosdaGradient, ReversedBoundaryGradientIsNegatedPlainGradient) {
  MeosdaConfig c = tiny_meosda_config();
  Rng rng(5);
  auto s = MeosdaState::create(c, std::vector<std::uint32_t>{1, 2}, rng);
  // Empty sources: the extractor only receives the boundary term.
  const std::vector<TrainingView> empty{{1, RealMatrix(0, c.feat_dim), {}}, {2, RealMatrix(0, c.feat_dim), {}}};
  const RealMatrix target = detail::random_matrix(6, c.feat_dim, rng);
  const auto g = meosda_gradient(s, empty, target);

  GradCheckResult res{"plain"};
  // Numeric gradient of +w·ADV; the reversed analytic gradient is its negation.
  std::vector<double> negated;
  g.extractor.for_each_trainable([&](const RealMatrix& m) {
    for (double v : m.data()) negated.push_back(-v);
  });
  std::vector<RealMatrix*> p;
  s.extractor.params.for_each_trainable([&](RealMatrix& m) { p.push_back(&m); });
  std::size_t off = 0;
  for (auto* m : p) {
    std::vector<double> slice(negated.begin() + off, negated.begin() + off + m->size());
    fd_compare(m->data(), slice,
               [&] { return c.adv_weight * meosda_gradient(s, empty, target).report.total_adv(); }, {}, res);
    off += m->size();
  }
  EXPECT_TRUE(res.pass()) << res.max_rel_err;

  // Doubling λ doubles the reversed extractor gradient; heads are unaffected.
  s.config.reversal_lambda = 2.0;
  const auto g2 = meosda_gradient(s, empty, target);
  std::vector<const RealMatrix*> a, b;
  g.extractor.for_each_trainable([&](const RealMatrix& m) { a.push_back(&m); });
  g2.extractor.for_each_trainable([&](const RealMatrix& m) { b.push_back(&m); });
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t]->size(); ++i) EXPECT_NEAR(b[t]->data()[i], 2.0 * a[t]->data()[i], 1e-12);
  EXPECT_EQ(g2.heads[0], g.heads[0]);
}

TEST(MeosdaGradient, HeadsOnlySeeTheirOwnSource) {
  MeosdaConfig c = tiny_meosda_config();
  c.adv_weight = 0.0;
  Rng rng(6);
  auto s = MeosdaState::create(c, std::vector<std::uint32_t>{1, 2, 3}, rng);
  const std::vector<TrainingView> src{{1, RealMatrix(0, c.feat_dim), {}}, labeled(2, 7, c, rng),
                                      {3, RealMatrix(0, c.feat_dim), {}}};
  const auto g = meosda_gradient(s, src, detail::random_matrix(4, c.feat_dim, rng));
  EXPECT_EQ(g.heads[0], ParamSet::zeros_like(s.heads[0].params));
  EXPECT_EQ(g.heads[2], ParamSet::zeros_like(s.heads[2].params));
  EXPECT_NE(g.heads[1], ParamSet::zeros_like(s.heads[1].params));
  EXPECT_EQ(g.report.ce[0], 0.0);
  EXPECT_GT(g.report.ce[1], 0.0);
}

TEST(MeosdaGradient, SourceCountMustMatchHeads) {
  auto s = tiny_state(2);
  Rng rng(7);
  const std::vector<TrainingView> one{labeled(1, 3, s.config, rng)};
  EXPECT_THROW(meosda_gradient(s, one, RealMatrix(0, s.config.feat_dim)), DimensionError);
}

TEST(TrainStep, NoBoundaryTermEqualsPureCrossEntropy) {
  MeosdaConfig c = tiny_meosda_config();
  c.adv_weight = 0.0;
  c.reversal_lambda = 0.0;
  Rng data(8);
  const std::vector<TrainingView> src{labeled(1, 8, c, data), labeled(2, 8, c, data)};
  const RealMatrix target = detail::random_matrix(8, c.feat_dim, data);
  Rng r1(9), r2(9);
  auto a = MeosdaState::create(c, std::vector<std::uint32_t>{1, 2}, r1);
  auto b = MeosdaState::create(c, std::vector<std::uint32_t>{1, 2}, r2);
  for (int step = 0; step < 10; ++step) {
    const auto ra = train_step(a, src, target);
    const auto rb = train_step(b, src, RealMatrix(0, c.feat_dim));
    EXPECT_EQ(ra.ce, rb.ce);
  }
  EXPECT_EQ(a.extractor.params, b.extractor.params);
  for (std::size_t m = 0; m < 2; ++m) EXPECT_EQ(a.heads[m].params, b.heads[m].params);
}

TEST(PseudoLabel, ThresholdExamples) {
  auto s = tiny_state(1);
  Rng rng(10);
  const RealMatrix x = detail::random_matrix(4, s.config.feat_dim, rng);
  force_head_probs(s, 0, {0.97, 0.02, 0.01});
  auto pl = pseudo_label(s, 2, x, 0.95);
  ASSERT_EQ(pl.accepted.size(), 4u);
  EXPECT_EQ(pl.accepted[0].label, ClassLabel::known(0));
  EXPECT_NEAR(pl.accepted[0].confidence, 0.97, 1e-12);
  EXPECT_EQ(pl.features.rows(), 4u);
  force_head_probs(s, 0, {0.94, 0.05, 0.01});
  pl = pseudo_label(s, 2, x, 0.95);
  EXPECT_TRUE(pl.accepted.empty());
  EXPECT_EQ(pl.rejected_count, 4u);
  force_head_probs(s, 0, {0.01, 0.01, 0.98});
  pl = pseudo_label(s, 2, x, 0.95);
  ASSERT_EQ(pl.accepted.size(), 4u);
  EXPECT_EQ(pl.accepted[0].label, ClassLabel::open());
  EXPECT_EQ(pl.as_view().labels.size(), 4u);
  EXPECT_THROW(pseudo_label(s, 2, x, 0.0), ConfigError);
  EXPECT_THROW(pseudo_label(s, 2, x, 1.0), ConfigError);
}

TEST(PseudoLabel, AcceptedSetShrinksAsThresholdRises) {
  const auto s = tiny_state(2, 11);
  Rng rng(12);
  const RealMatrix x = detail::random_matrix(300, s.config.feat_dim, rng, 3.0);
  std::vector<std::size_t> prev;
  for (std::size_t i = 0; i < 300; ++i) prev.push_back(i);
  for (double th = 0.35; th < 1.0; th += 0.05) {
    const auto pl = pseudo_label(s, 3, x, th);
    std::vector<std::size_t> cur;
    for (const auto& a : pl.accepted) {
      EXPECT_GE(a.confidence, th);
      cur.push_back(a.index);
    }
    EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    EXPECT_EQ(cur.size() + pl.rejected_count, 300u);
    prev = cur;
  }
}

TEST(Fit, SourceAndTargetContracts) {
  MeosdaConfig c = tiny_meosda_config();
  c.epochs = 2;
  c.batch_size = 4;
  Rng rng(13);
  const TrainingView tgt{3, detail::random_matrix(10, c.feat_dim, rng), std::vector<ClassLabel>(10, ClassLabel::hidden())};
  const TrainingView none{1, RealMatrix(0, c.feat_dim), {}};
  const auto s = fit(c, {none, labeled(2, 9, c, rng)}, tgt, 1);
  EXPECT_EQ(s.num_heads(), 2u);
  EXPECT_EQ(s.head_domains, (std::vector<std::uint32_t>{1, 2}));
  EXPECT_THROW(fit(c, {none, none}, tgt, 1), DataError);
  EXPECT_THROW(fit(c, {}, tgt, 1), DataError);
  TrainingView visible = tgt;
  visible.labels.assign(10, ClassLabel::known(0));
  EXPECT_THROW(fit(c, {labeled(1, 5, c, rng)}, visible, 1), DataError);
}

TEST(Fit, DeterministicPerSeed) {
  MeosdaConfig c = tiny_meosda_config();
  c.epochs = 3;
  c.batch_size = 4;
  Rng rng(14);
  const std::vector<TrainingView> src{labeled(1, 9, c, rng)};
  const TrainingView tgt{2, detail::random_matrix(10, c.feat_dim, rng), std::vector<ClassLabel>(10, ClassLabel::hidden())};
  std::vector<MeosdaLossReport> ra, rb;
  const auto a = fit(c, src, tgt, 77, [&](std::size_t, const MeosdaLossReport& r) { ra.push_back(r); });
  const auto b = fit(c, src, tgt, 77, [&](std::size_t, const MeosdaLossReport& r) { rb.push_back(r); });
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(a.extractor.params, b.extractor.params);
}

TEST(Fit, BoundaryTermPushesKnownTargetSamplesTowardKnown) {
  SynthSpec spec;
  spec.samples_per_class = 100;
  const auto stream = gen_synthetic(spec, 2);
  MeosdaConfig c;
  c.feat_dim = spec.feat_dim;
  c.num_known = spec.num_known;
  c.extractor_dims = {128, 64};
  c.head_hidden = 32;
  c.epochs = 20;
  const auto s = fit(c, {stream[0].training_view()}, stream[1].training_view(), 3);
  const auto ev = stream[1].evaluation_view();
  const RealMatrix p = predict_head(s, 0, ev.features);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ev.truth.size(); ++i)
    if (ev.truth[i].is_known()) sum += p.row(i)[spec.num_known], ++n;
  EXPECT_LT(sum / static_cast<double>(n), 0.5);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  const auto s = tiny_state(3, 15);
  const fs::path dir = fs::temp_directory_path() / "iosda_tests" / "meosda_ck";
  fs::remove_all(dir);
  save_meosda(s, dir);
  const auto back = load_meosda(dir);
  EXPECT_EQ(back.head_domains, s.head_domains);
  EXPECT_EQ(back.config.leaky_slope, s.config.leaky_slope);
  Rng rng(16);
  const RealMatrix x = detail::random_matrix(7, s.config.feat_dim, rng);
  const auto a = head_probabilities(s, x), b = head_probabilities(back, x);
  for (std::size_t h = 0; h < 3; ++h) EXPECT_EQ(a[h].data(), b[h].data());
  fs::remove(dir / "meosda_head2.param");
  EXPECT_THROW(load_meosda(dir), DataError);
}
