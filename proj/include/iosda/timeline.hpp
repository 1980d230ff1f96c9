#pragma once

// Incremental pipeline over a domain stream D_1, D_2, ...
//
//   t = 1   train a GAN on labeled D_1
//   t >= 2  replay every past domain from the previous GAN, adapt a fresh
//           multi-head model (one head per replayed domain) to the incoming
//           domain, pseudo-label the incoming domain, train a new GAN on fresh
//           replays plus the pseudo-labeled samples, then drop the incoming raw
//           samples and the previous GAN.
//
// Each incoming target domain is split on arrival; the holdout part goes to an
// EvaluationVault that lives outside TimelineState and is only ever read for
// scoring.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iosda/datahub.hpp"
#include "iosda/ensemble.hpp"
#include "iosda/errors.hpp"
#include "iosda/evalkit.hpp"
#include "iosda/mdcgan.hpp"
#include "iosda/meosda.hpp"

namespace iosda {

struct TimelineConfig {
  std::string data_source = "synthetic";  // "synthetic" or "files"
  std::vector<std::string> files;
  std::size_t num_domains = 3;
  std::size_t num_known = 4;
  SynthSpec synth{};
  double holdout_fraction = 0.2;
  double threshold = 0.95;
  std::size_t replay_per_class = 100;
  bool replay_trained_only = false;  // true: skip (class, domain) pairs the GAN never saw
  std::uint64_t seed = 0;
  GanConfig gan{};
  MeosdaConfig meosda{};

  void validate() const {
    if (data_source == "synthetic") {
      if (num_domains < 2) throw ConfigError("need at least 2 domains");
    } else if (data_source == "files") {
      if (files.size() < 2) throw ConfigError("need at least 2 feature files");
    } else {
      throw ConfigError("data.source must be 'synthetic' or 'files', got '" + data_source + "'");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in (0,1)");
    if (replay_per_class == 0) throw ConfigError("replay_per_class must be >= 1");
    gan.validate();
    meosda.validate();
  }
};

/// splitmix64 over (seed, tag, index): independent, reproducible sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::uint64_t z = seed ^ (tag * 0x9E3779B97F4A7C15ULL) ^ (index * 0xBF58476D1CE4E5B9ULL);
  for (int i = 0; i < 2; ++i) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
  }
  return z;
}

enum SeedTag : std::uint64_t { kSeedHoldout = 1, kSeedReplay = 2, kSeedMeosda = 3, kSeedGan = 4, kSeedGanReplay = 5 };

inline std::uint64_t holdout_seed(const TimelineConfig& cfg, std::uint32_t domain) {
  return derive_seed(cfg.seed, kSeedHoldout, domain);
}

/// Loads or generates the configured stream, feature widths propagated into
/// the model configs.
inline std::vector<DomainDataset> load_stream(TimelineConfig& cfg) {
  cfg.validate();
  std::vector<DomainDataset> stream;
  if (cfg.data_source == "synthetic") {
    SynthSpec spec = cfg.synth;
    spec.num_known = cfg.num_known;
    stream = gen_synthetic(spec, cfg.num_domains);
  } else {
    for (const auto& f : cfg.files) stream.push_back(load_features(f));
    for (std::size_t i = 0; i < stream.size(); ++i) {
      if (stream[i].domain_id != i + 1)
        throw DataError(cfg.files[i] + ": expected domain " + std::to_string(i + 1) + ", file holds domain " +
                        std::to_string(stream[i].domain_id));
      if (stream[i].feat_dim() != stream.front().feat_dim()) throw DataError(cfg.files[i] + ": feature width differs");
      for (const auto& s : stream[i].samples)
        if (s.truth.is_known() && s.truth.index() >= cfg.num_known)
          throw DataError(cfg.files[i] + ": known label " + s.truth.str() + " >= data.num_known");
    }
    cfg.num_domains = stream.size();
  }
  cfg.gan.feat_dim = cfg.meosda.feat_dim = stream.front().feat_dim();
  cfg.gan.num_known = cfg.meosda.num_known = cfg.num_known;
  cfg.meosda.threshold = cfg.threshold;
  if (cfg.num_domains > cfg.gan.max_domains)
    throw ConfigError("stream has " + std::to_string(cfg.num_domains) + " domains but mdcgan.max_domains is " +
                      std::to_string(cfg.gan.max_domains));
  return stream;
}

/// Hides the labels of a target domain and splits it into (train, holdout).
inline std::pair<DomainDataset, DomainDataset> split_incoming(const DomainDataset& incoming, const TimelineConfig& cfg) {
  DomainDataset target = incoming;
  target.labels_visible = false;
  return split_holdout(target, cfg.holdout_fraction, holdout_seed(cfg, incoming.domain_id));
}

struct EvaluationVault {
  std::map<std::uint32_t, DomainDataset> holdouts;
};

/// The vault a run holds after `timestamp`, re-derived from the stream.
inline EvaluationVault rebuild_vault(const TimelineConfig& cfg, const std::vector<DomainDataset>& stream,
                                     std::uint32_t timestamp) {
  EvaluationVault v;
  for (const auto& ds : stream)
    if (ds.domain_id >= 2 && ds.domain_id <= timestamp) v.holdouts[ds.domain_id] = split_incoming(ds, cfg).second;
  return v;
}

struct StepSummary {
  std::uint32_t timestamp = 0;
  std::size_t head_count = 0;
  std::vector<std::size_t> replay_sizes;  // per past domain, as fed to the adaptation
  std::size_t pseudo_accepted = 0;
  std::size_t pseudo_rejected = 0;
  std::size_t gan_pool_size = 0;
};

struct TimelineState {
  std::uint32_t timestamp = 0;
  std::optional<MdcganState> gan;        // only the latest GAN survives a step
  std::optional<MeosdaState> meosda;     // from the latest adaptation
  std::vector<MetricRecord> metrics;
  std::vector<DomainDataset> staging;    // raw incoming data; must be empty between steps
  std::vector<StepSummary> history;
};

using TimelineLog = std::function<void(const std::string&)>;

/// Advances the timeline by one domain. `detail` receives per-epoch losses.
inline void step(TimelineState& state, const DomainDataset& incoming, EvaluationVault& vault,
                 const TimelineConfig& cfg, const TimelineLog& log = {}, const TimelineLog& detail = {}) {
  const std::uint32_t d = state.timestamp + 1;
  if (incoming.domain_id != d)
    throw DataError("timeline step: expected domain " + std::to_string(d) + ", got " +
                    std::to_string(incoming.domain_id));
  if (incoming.empty()) throw DataError("timeline step: incoming domain " + std::to_string(d) + " is empty");
  auto say = [&](const std::string& m) {
    if (log) log("[t" + std::to_string(d) + "] " + m);
  };
  GanEpochHook gan_hook;
  MeosdaEpochHook meosda_hook;
  if (detail) {
    gan_hook = [&](std::size_t e, const GanLossReport& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[t%u] gan epoch %zu  L_b=%.4f L_c=%.4f L_d=%.4f R=%.4f", d, e + 1, r.l_b, r.l_c,
                    r.l_d, r.r);
      detail(buf);
    };
    meosda_hook = [&](std::size_t e, const MeosdaLossReport& r) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[t%u] meosda epoch %zu  CE=%.4f ADV=%.4f", d, e + 1, r.total_ce(), r.total_adv());
      detail(buf);
    };
  }

  StepSummary sum;
  sum.timestamp = d;

  if (d == 1) {
    if (!incoming.labels_visible) throw DataError("timeline step: the first domain must be labeled");
    state.staging.push_back(incoming);
    const std::vector<TrainingView> pool{state.staging.back().training_view()};
    sum.gan_pool_size = pool.front().size();
    say("training GAN on " + std::to_string(sum.gan_pool_size) + " labeled samples");
    state.gan = train_replay_gan(pool, cfg.gan, derive_seed(cfg.seed, kSeedGan, d), gan_hook);
  } else {
    if (!state.gan) throw DataError("timeline step: no GAN from the previous timestamp");
    auto [train, holdout] = split_incoming(incoming, cfg);
    vault.holdouts[d] = std::move(holdout);
    state.staging.push_back(std::move(train));
    const DomainDataset& raw = state.staging.back();

    std::vector<std::uint32_t> past;
    for (std::uint32_t m = 1; m < d; ++m) past.push_back(m);
    Rng replay_rng(derive_seed(cfg.seed, kSeedReplay, d));
    const auto sources = replay_domains(*state.gan, past, cfg.replay_per_class, replay_rng, cfg.replay_trained_only);
    for (const auto& s : sources) sum.replay_sizes.push_back(s.size());

    say("adapting " + std::to_string(past.size()) + " head(s) to " + std::to_string(raw.size()) + " target samples");
    MeosdaConfig mcfg = cfg.meosda;
    mcfg.threshold = cfg.threshold;
    state.meosda = fit(mcfg, sources, raw.training_view(), derive_seed(cfg.seed, kSeedMeosda, d), meosda_hook);
    sum.head_count = state.meosda->num_heads();

    const auto pl = pseudo_label(*state.meosda, d, raw.feature_matrix(), cfg.threshold);
    sum.pseudo_accepted = pl.accepted.size();
    sum.pseudo_rejected = pl.rejected_count;
    say("pseudo-labeled " + std::to_string(pl.accepted.size()) + " / " + std::to_string(raw.size()));

    Rng gan_replay_rng(derive_seed(cfg.seed, kSeedGanReplay, d));
    auto pool = replay_domains(*state.gan, past, cfg.replay_per_class, gan_replay_rng, cfg.replay_trained_only);
    if (!pl.accepted.empty()) pool.push_back(pl.as_view());
    for (const auto& v : pool) sum.gan_pool_size += v.size();
    say("training GAN on " + std::to_string(sum.gan_pool_size) + " replayed + pseudo-labeled samples");
    state.gan.reset();
    state.gan = train_replay_gan(pool, cfg.gan, derive_seed(cfg.seed, kSeedGan, d), gan_hook);
  }
  state.staging.clear();
  state.timestamp = d;
  state.history.push_back(std::move(sum));
}

/// Scores the current model on every vault holdout (domain-blind inference).
struct HoldoutEvaluation {
  std::uint32_t domain_id = 0;
  std::vector<EnsembleDecision> decisions;
  OsScores scores;
};

inline std::vector<HoldoutEvaluation> evaluate_holdouts(const TimelineState& state, const EvaluationVault& vault,
                                                        std::size_t num_known) {
  std::vector<HoldoutEvaluation> out;
  if (!state.meosda) return out;
  for (const auto& [dom, ds] : vault.holdouts) {
    const EvaluationView ev = ds.evaluation_view();
    HoldoutEvaluation h;
    h.domain_id = dom;
    h.decisions = batch_predict(*state.meosda, ev.features);
    std::vector<ClassLabel> pred;
    pred.reserve(h.decisions.size());
    for (const auto& dcs : h.decisions) pred.push_back(dcs.predicted);
    h.scores = os_scores(pred, ev.truth, num_known);
    out.push_back(std::move(h));
  }
  return out;
}

/// Walks everything reachable from the state and lists raw samples or
/// artifacts that should not have survived the last completed timestamp.
inline std::vector<std::string> retention_audit(const TimelineState& state) {
  std::vector<std::string> violations;
  for (const auto& ds : state.staging)
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      if (ds.samples[i].domain_id <= state.timestamp)
        violations.push_back("staging holds raw sample " + std::to_string(i) + " of domain " +
                             std::to_string(ds.samples[i].domain_id));
  if (state.timestamp >= 1 && !state.gan) violations.push_back("no GAN retained after timestamp " +
                                                               std::to_string(state.timestamp));
  if (state.meosda && state.meosda->num_heads() + 1 != state.timestamp)
    violations.push_back("adaptation model has " + std::to_string(state.meosda->num_heads()) +
                         " heads at timestamp " + std::to_string(state.timestamp));
  return violations;
}

/// Called after every timestamp with the fresh evaluations.
using TimelineObserver =
    std::function<void(const TimelineState&, const EvaluationVault&, const std::vector<HoldoutEvaluation>&)>;

struct RunResult {
  TimelineState state;
  EvaluationVault vault;
  std::vector<std::vector<std::string>> audits;  // one per timestamp
};

inline RunResult run(const TimelineConfig& cfg, const std::vector<DomainDataset>& stream,
                     const TimelineObserver& observer = {}, const TimelineLog& log = {},
                     const TimelineLog& detail = {}) {
  cfg.validate();
  if (stream.size() < 2) throw DataError("timeline run: need at least two domains");
  RunResult res;
  for (const auto& incoming : stream) {
    step(res.state, incoming, res.vault, cfg, log, detail);
    const auto evals = evaluate_holdouts(res.state, res.vault, cfg.num_known);
    for (const auto& e : evals) res.state.metrics.push_back(make_record(res.state.timestamp, e.domain_id, e.scores));
    res.audits.push_back(retention_audit(res.state));
    if (observer) observer(res.state, res.vault, evals);
  }
  return res;
}

}  // namespace iosda
