#include <gtest/gtest.h>

#include <set>

#include "iosda/timeline.hpp"

using namespace iosda;

namespace {

TimelineConfig tiny_config(std::size_t domains) {
  TimelineConfig c;
  c.num_domains = domains;
  c.synth.samples_per_class = 20;
  c.gan.z_dim = 16;
  c.gan.gen_hidden = c.gan.disc_hidden = 32;
  c.gan.epochs = 2;
  c.meosda.extractor_dims = {32, 16};
  c.meosda.head_hidden = 8;
  c.meosda.epochs = 2;
  c.meosda.batch_size = 32;
  c.replay_per_class = 10;
  return c;
}

}  // namespace

TEST(DeriveSeed, DistinctAcrossTagsAndIndices) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 1; tag <= 5; ++tag)
    for (std::uint64_t i = 0; i < 10; ++i) EXPECT_TRUE(seen.insert(derive_seed(0, tag, i)).second);
  EXPECT_EQ(derive_seed(7, 2, 3), derive_seed(7, 2, 3));
  EXPECT_NE(derive_seed(7, 2, 3), derive_seed(8, 2, 3));
}

TEST(TimelineConfig, Validation) {
  TimelineConfig c;
  c.num_domains = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TimelineConfig{};
  c.threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TimelineConfig{};
  c.data_source = "s3";
  EXPECT_THROW(c.validate(), ConfigError);
  c = TimelineConfig{};
  c.num_domains = 9;
  EXPECT_THROW(load_stream(c), ConfigError);
}

TEST(LoadStream, PropagatesWidths) {
  TimelineConfig c = tiny_config(3);
  c.synth.feat_dim = 7;
  c.threshold = 0.9;
  const auto stream = load_stream(c);
  EXPECT_EQ(stream.size(), 3u);
  EXPECT_EQ(c.gan.feat_dim, 7u);
  EXPECT_EQ(c.meosda.feat_dim, 7u);
  EXPECT_EQ(c.meosda.threshold, 0.9);
}

TEST(Step, RejectsOutOfOrderAndEmptyDomains) {
  TimelineConfig c = tiny_config(3);
  const auto stream = load_stream(c);
  TimelineState st;
  EvaluationVault vault;
  EXPECT_THROW(step(st, stream[1], vault, c), DataError);
  DomainDataset hidden = stream[0];
  hidden.labels_visible = false;
  EXPECT_THROW(step(st, hidden, vault, c), DataError);
  DomainDataset empty;
  empty.domain_id = 1;
  EXPECT_THROW(step(st, empty, vault, c), DataError);
}

TEST(Run, HeadCountsReplaySizesAndAudits) {
  TimelineConfig c = tiny_config(4);
  c.replay_trained_only = true;
  const auto stream = load_stream(c);
  const auto res = run(c, stream);
  ASSERT_EQ(res.state.history.size(), 4u);
  EXPECT_EQ(res.state.history[0].head_count, 0u);
  for (std::size_t t = 1; t < 4; ++t) {
    const auto& h = res.state.history[t];
    EXPECT_EQ(h.head_count, t);
    ASSERT_EQ(h.replay_sizes.size(), t);
    // Domain 1 never had open samples, so its open condition is not replayed.
    EXPECT_EQ(h.replay_sizes[0], 4u * c.replay_per_class);
    EXPECT_EQ(h.pseudo_accepted + h.pseudo_rejected, stream[t].size() - res.vault.holdouts.at(t + 1).size());
  }
  EXPECT_EQ(res.state.history[0].gan_pool_size, stream[0].size());
  for (const auto& a : res.audits) EXPECT_TRUE(a.empty());
  EXPECT_TRUE(res.state.staging.empty());
  EXPECT_EQ(res.state.meosda->num_heads(), 3u);
  EXPECT_EQ(res.vault.holdouts.size(), 3u);

  // One metric row per (timestamp, seen target domain): 1 + 2 + 3.
  ASSERT_EQ(res.state.metrics.size(), 6u);
  EXPECT_EQ(res.state.metrics.back().timestamp, 4u);
  EXPECT_EQ(res.state.metrics.back().domain_id, 4u);
}

TEST(Run, ReplayingEverySlotGivesFullSets) {
  TimelineConfig c = tiny_config(3);
  c.replay_per_class = 100;
  const auto stream = load_stream(c);
  const auto res = run(c, stream);
  EXPECT_EQ(res.state.history[1].replay_sizes, (std::vector<std::size_t>{500}));
  EXPECT_EQ(res.state.history[2].replay_sizes, (std::vector<std::size_t>{500, 500}));
}

TEST(Run, DeterministicForFixedSeed) {
  TimelineConfig c = tiny_config(3);
  const auto stream = load_stream(c);
  const auto a = run(c, stream);
  const auto b = run(c, stream);
  ASSERT_EQ(a.state.metrics.size(), b.state.metrics.size());
  for (std::size_t i = 0; i < a.state.metrics.size(); ++i) {
    EXPECT_EQ(a.state.metrics[i].os, b.state.metrics[i].os);
    EXPECT_EQ(a.state.metrics[i].per_class, b.state.metrics[i].per_class);
  }
  EXPECT_EQ(a.state.meosda->extractor.params, b.state.meosda->extractor.params);
}

TEST(Run, VaultCanBeRebuiltFromTheStream) {
  TimelineConfig c = tiny_config(3);
  const auto stream = load_stream(c);
  TimelineState st;
  EvaluationVault vault;
  for (const auto& d : stream) step(st, d, vault, c);
  const auto rebuilt = rebuild_vault(c, stream, 3);
  ASSERT_EQ(rebuilt.holdouts.size(), 2u);
  for (const auto& [dom, ds] : vault.holdouts) EXPECT_EQ(rebuilt.holdouts.at(dom).samples, ds.samples);
  EXPECT_EQ(rebuild_vault(c, stream, 2).holdouts.size(), 1u);
}

TEST(RetentionAudit, FlagsLeftoverRawSamples) {
  TimelineConfig c = tiny_config(2);
  const auto stream = load_stream(c);
  TimelineState st;
  EvaluationVault vault;
  step(st, stream[0], vault, c);
  EXPECT_TRUE(retention_audit(st).empty());
  st.staging.push_back(stream[0]);
  EXPECT_EQ(retention_audit(st).size(), stream[0].size());
  st.staging.clear();
  st.gan.reset();
  EXPECT_EQ(retention_audit(st).size(), 1u);
}

TEST(Observer, SeesEveryTimestamp) {
  TimelineConfig c = tiny_config(3);
  const auto stream = load_stream(c);
  std::vector<std::pair<std::uint32_t, std::size_t>> calls;
  std::vector<std::string> lines;
  run(c, stream, [&](const TimelineState& st, const EvaluationVault&, const std::vector<HoldoutEvaluation>& e) {
    calls.emplace_back(st.timestamp, e.size());
  }, [&](const std::string& m) { lines.push_back(m); });
  EXPECT_EQ(calls, (std::vector<std::pair<std::uint32_t, std::size_t>>{{1, 0}, {2, 1}, {3, 2}}));
  EXPECT_FALSE(lines.empty());
  EXPECT_EQ(lines.front().rfind("[t1] ", 0), 0u);
}
