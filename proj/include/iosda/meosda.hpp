#pragma once

// Multi-head open-set domain adaptation.
//
// A shared extractor (feat_dim -> 1024 -> 512, batch norm + leaky relu) feeds
// one classifier head per source domain (512 -> 256 -> K+1). Slot K is the
// unknown class. Per step:
//   heads     descend  Σ_m CE_m + ADV_m
//   extractor descends Σ_m CE_m − ADV_m   (ADV gradients pass a reversal node)
// where CE_m is the cross-entropy of head m on its source batch and ADV_m the
// boundary loss −t log p_K − (1−t) log(1 − p_K) of head m on the target batch.
//
// Each batch (every source batch and the target batch) runs through the
// network in its own forward pass, so batch-norm statistics are per batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iosda/checkpoint.hpp"
#include "iosda/datahub.hpp"
#include "iosda/ensemble.hpp"
#include "iosda/errors.hpp"
#include "iosda/losses.hpp"
#include "iosda/matrix.hpp"
#include "iosda/mlp.hpp"

namespace iosda {

struct MeosdaConfig {
  std::size_t feat_dim = 2048;
  std::size_t num_known = 4;
  std::vector<std::size_t> extractor_dims{1024, 512};
  std::size_t head_hidden = 256;
  double leaky_slope = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double t_boundary = 0.5;
  double adv_weight = 0.03;  // above ~0.11 no prediction can clear a 0.95 threshold
  double reversal_lambda = 1.0;
  double threshold = 0.95;
  AdamConfig adam{};

  void validate() const {
    if (feat_dim == 0 || num_known == 0 || head_hidden == 0 || batch_size == 0 || extractor_dims.empty())
      throw ConfigError("MeosdaConfig: dimensions must be >= 1");
    if (!(t_boundary > 0.0 && t_boundary < 1.0)) throw ConfigError("MeosdaConfig: t_boundary must lie in (0,1)");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("MeosdaConfig: threshold must lie in (0,1)");
    if (reversal_lambda < 0.0 || adv_weight < 0.0) throw ConfigError("MeosdaConfig: weights must be >= 0");
  }

  [[nodiscard]] MlpSpec extractor_spec() const {
    MlpSpec s;
    s.layer_dims.push_back(feat_dim);
    s.layer_dims.insert(s.layer_dims.end(), extractor_dims.begin(), extractor_dims.end());
    s.activation = Activation::leaky(leaky_slope);
    s.batch_norm.assign(extractor_dims.size(), true);
    s.activate_output = true;
    return s;
  }
  [[nodiscard]] MlpSpec head_spec() const {
    return {{extractor_dims.back(), head_hidden, num_known + 1}, Activation::leaky(leaky_slope), {true, false}, false};
  }
};

struct MeosdaState {
  MeosdaConfig config;
  Mlp extractor;
  std::vector<Mlp> heads;
  std::vector<std::uint32_t> head_domains;  // source domain served by each head

  static MeosdaState create(const MeosdaConfig& cfg, std::span<const std::uint32_t> source_domains, Rng& rng) {
    cfg.validate();
    if (source_domains.empty()) throw DataError("MeosdaState: need at least one head");
    MeosdaState s;
    s.config = cfg;
    s.extractor = Mlp::create(cfg.extractor_spec(), rng, cfg.adam);
    for (auto d : source_domains) {
      s.heads.push_back(Mlp::create(cfg.head_spec(), rng, cfg.adam));
      s.head_domains.push_back(d);
    }
    return s;
  }

  [[nodiscard]] std::size_t num_heads() const noexcept { return heads.size(); }
  [[nodiscard]] std::size_t num_slots() const noexcept { return config.num_known + 1; }
};

/// Extractor outputs in eval mode (the embedding used for inference and export).
inline RealMatrix embed(const MeosdaState& s, const RealMatrix& x) { return s.extractor.infer(x); }

/// Softmax posteriors of one head, eval mode.
inline RealMatrix predict_head(const MeosdaState& s, std::size_t head, const RealMatrix& x) {
  if (head >= s.num_heads())
    throw DimensionError("predict_head: head " + std::to_string(head) + " of " + std::to_string(s.num_heads()));
  return softmax_rows(s.heads[head].infer(embed(s, x)));
}

/// Posteriors of every head over a shared extractor pass.
inline std::vector<RealMatrix> head_probabilities(const MeosdaState& s, const RealMatrix& x) {
  const RealMatrix e = embed(s, x);
  std::vector<RealMatrix> out;
  out.reserve(s.num_heads());
  for (const auto& h : s.heads) out.push_back(softmax_rows(h.infer(e)));
  return out;
}

inline std::vector<std::size_t> label_slots(std::span<const ClassLabel> labels, std::size_t num_known) {
  std::vector<std::size_t> t;
  t.reserve(labels.size());
  for (const auto& l : labels) {
    if (l.is_hidden()) throw DataError("labeled batch contains a hidden label");
    t.push_back(l.slot(num_known));
  }
  return t;
}

/// Mean cross-entropy of head `head` on a labeled batch (open maps to slot K).
inline double source_ce_loss(const MeosdaState& s, std::size_t head, const TrainingView& batch) {
  const auto targets = label_slots(batch.labels, s.config.num_known);
  if (head >= s.num_heads()) throw DimensionError("source_ce_loss: head index out of range");
  return softmax_nll(s.heads[head].infer(embed(s, batch.features)), targets).value;
}

/// Mean boundary loss of head `head` on unlabeled target features.
inline double open_adv_loss(const MeosdaState& s, std::size_t head, const RealMatrix& target) {
  if (head >= s.num_heads()) throw DimensionError("open_adv_loss: head index out of range");
  return open_boundary_loss(s.heads[head].infer(embed(s, target)), s.config.num_known, s.config.t_boundary).value;
}

struct MeosdaLossReport {
  std::vector<double> ce;
  std::vector<double> adv;

  [[nodiscard]] double total_ce() const { return std::accumulate(ce.begin(), ce.end(), 0.0); }
  [[nodiscard]] double total_adv() const { return std::accumulate(adv.begin(), adv.end(), 0.0); }
  friend bool operator==(const MeosdaLossReport&, const MeosdaLossReport&) = default;
};

struct MeosdaGrad {
  MeosdaLossReport report;
  ParamSet extractor;
  std::vector<ParamSet> heads;
  std::vector<Tape> extractor_tapes;          // non-empty sources in order, then target
  std::vector<std::vector<Tape>> head_tapes;  // per head: source tape (if any), then target tape
};

/// Training-mode losses and gradients for one step. Head gradients are those of
/// Σ(CE + w·ADV); extractor gradients are those of Σ(CE − λ·w·ADV).
inline MeosdaGrad meosda_gradient(const MeosdaState& s, std::span<const TrainingView> sources,
                                  const RealMatrix& target) {
  if (sources.size() != s.num_heads())
    throw DimensionError("meosda step: " + std::to_string(sources.size()) + " source batches for " +
                         std::to_string(s.num_heads()) + " heads");
  const auto& cfg = s.config;
  const std::size_t K = cfg.num_known;
  const bool use_target = target.rows() > 0 && cfg.adv_weight > 0.0;

  MeosdaGrad g;
  g.extractor = ParamSet::zeros_like(s.extractor.params);
  g.head_tapes.resize(s.num_heads());

  ForwardResult tgt_feat;
  RealMatrix tgt_upstream;
  if (use_target) {
    tgt_feat = s.extractor.run(target, Mode::train);
    tgt_upstream = RealMatrix(tgt_feat.output.rows(), tgt_feat.output.cols());
  }

  for (std::size_t m = 0; m < s.num_heads(); ++m) {
    const auto& src = sources[m];
    const auto& head = s.heads[m];

    // A head whose source batch is empty only sees the boundary term.
    ParamSet head_grad = ParamSet::zeros_like(head.params);
    if (src.size() > 0) {
      const auto targets = label_slots(src.labels, K);
      auto src_feat = s.extractor.run(src.features, Mode::train);
      auto src_logits = head.run(src_feat.output, Mode::train);
      auto ce = softmax_nll(src_logits.output, targets);
      g.report.ce.push_back(ce.value);
      auto hb = head.back(src_logits.tape, ce.grad);
      g.extractor += s.extractor.back(src_feat.tape, hb.input_grad, false).grads;
      head_grad = std::move(hb.grads);
      g.extractor_tapes.push_back(std::move(src_feat.tape));
      g.head_tapes[m].push_back(std::move(src_logits.tape));
    } else {
      g.report.ce.push_back(0.0);
    }

    if (use_target) {
      auto tgt_logits = head.run(tgt_feat.output, Mode::train);
      const double scale = cfg.adv_weight / static_cast<double>(target.rows());
      auto adv = open_boundary_loss(tgt_logits.output, K, cfg.t_boundary, scale);
      g.report.adv.push_back(adv.value / cfg.adv_weight);
      auto ab = head.back(tgt_logits.tape, adv.grad);
      head_grad += ab.grads;
      tgt_upstream += grad_reverse(ab.input_grad, cfg.reversal_lambda);
      g.head_tapes[m].push_back(std::move(tgt_logits.tape));
    } else {
      g.report.adv.push_back(0.0);
    }
    g.heads.push_back(std::move(head_grad));
  }
  if (use_target) {
    g.extractor += s.extractor.back(tgt_feat.tape, tgt_upstream, false).grads;
    g.extractor_tapes.push_back(std::move(tgt_feat.tape));
  }
  return g;
}

/// One Adam step for the extractor and for every head. Returns the
/// training-mode losses measured before the update.
inline MeosdaLossReport train_step(MeosdaState& s, std::span<const TrainingView> sources, const RealMatrix& target) {
  auto g = meosda_gradient(s, sources, target);
  const double total = g.report.total_ce() + g.report.total_adv();
  if (!std::isfinite(total)) {
    std::ostringstream msg;
    msg << "meosda loss non-finite: CE=" << g.report.total_ce() << " ADV=" << g.report.total_adv();
    throw NumericError(msg.str());
  }
  adam_step(s.extractor.params, g.extractor, s.extractor.optimizer);
  for (const auto& t : g.extractor_tapes) commit_batch_stats(s.extractor.spec, s.extractor.params, t);
  for (std::size_t m = 0; m < s.num_heads(); ++m) {
    adam_step(s.heads[m].params, g.heads[m], s.heads[m].optimizer);
    for (const auto& t : g.head_tapes[m]) commit_batch_stats(s.heads[m].spec, s.heads[m].params, t);
  }
  return g.report;
}

struct PseudoLabel {
  std::size_t index = 0;  // row in the target it came from
  ClassLabel label = ClassLabel::open();
  double confidence = 0.0;
};

struct PseudoLabeledSet {
  std::uint32_t domain_id = 0;
  RealMatrix features;
  std::vector<PseudoLabel> accepted;
  std::size_t rejected_count = 0;

  /// Accepted samples as a labeled view.
  [[nodiscard]] TrainingView as_view() const {
    TrainingView v{domain_id, features, {}};
    for (const auto& a : accepted) v.labels.push_back(a.label);
    return v;
  }
};

/// Accepts a sample iff the predicting distribution's top probability is >= th.
/// The ensemble rule picks the distribution (it reduces to the single head
/// when there is only one).
inline PseudoLabeledSet pseudo_label(const MeosdaState& s, std::uint32_t domain_id, const RealMatrix& target, double th) {
  if (!(th > 0.0 && th < 1.0)) throw ConfigError("pseudo_label: threshold must lie in (0,1)");
  PseudoLabeledSet out;
  out.domain_id = domain_id;
  const auto decisions = batch_predict(s, target);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const auto& d = decisions[i];
    const double conf = d.probs[d.probs.argmax()];
    if (conf >= th) {
      out.accepted.push_back({i, d.predicted, conf});
      keep.push_back(i);
    } else {
      ++out.rejected_count;
    }
  }
  out.features = gather_rows(target, keep);
  return out;
}

/// Draws fixed-size batches by cycling through a reshuffled permutation.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, Rng& rng) : order_(n), rng_(&rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), *rng_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> idx;
    if (order_.empty()) return idx;
    const std::size_t take = std::min(batch, order_.size());
    while (idx.size() < take) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), *rng_);
        pos_ = 0;
      }
      idx.push_back(order_[pos_++]);
    }
    return idx;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

inline TrainingView gather_view(const TrainingView& v, std::span<const std::size_t> idx) {
  TrainingView out{v.domain_id, gather_rows(v.features, idx), {}};
  for (auto i : idx) out.labels.push_back(v.labels[i]);
  return out;
}

using MeosdaEpochHook = std::function<void(std::size_t, const MeosdaLossReport&)>;

/// Fresh state with one head per source, trained for cfg.epochs epochs. An
/// epoch is ceil(|target| / batch) steps, or ceil(max |source| / batch) steps
/// without a target. Individual sources may be empty, but not all of them.
inline MeosdaState fit(const MeosdaConfig& cfg, const std::vector<TrainingView>& sources, const TrainingView& target,
                       std::uint64_t seed, const MeosdaEpochHook& hook = {}) {
  if (sources.empty()) throw DataError("meosda fit: no source domains");
  std::size_t labeled = 0;
  for (const auto& src : sources) {
    label_slots(src.labels, cfg.num_known);
    labeled += src.size();
  }
  if (labeled == 0) throw DataError("meosda fit: every source domain is empty");
  for (const auto& l : target.labels)
    if (!l.is_hidden()) throw DataError("meosda fit: target labels must be hidden");

  Rng rng(seed);
  std::vector<std::uint32_t> doms;
  for (const auto& src : sources) doms.push_back(src.domain_id);
  MeosdaState s = MeosdaState::create(cfg, doms, rng);

  std::vector<CyclicSampler> src_samplers;
  std::size_t largest = 0;
  for (const auto& src : sources) {
    src_samplers.emplace_back(src.size(), rng);
    largest = std::max(largest, src.size());
  }
  CyclicSampler tgt_sampler(target.size(), rng);
  const std::size_t basis = target.size() > 0 ? target.size() : largest;
  const std::size_t steps = (basis + cfg.batch_size - 1) / cfg.batch_size;

  std::vector<TrainingView> batch(sources.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    MeosdaLossReport sum{std::vector<double>(sources.size(), 0.0), std::vector<double>(sources.size(), 0.0)};
    for (std::size_t st = 0; st < steps; ++st) {
      for (std::size_t m = 0; m < sources.size(); ++m)
        batch[m] = gather_view(sources[m], src_samplers[m].next(cfg.batch_size));
      const RealMatrix tgt = gather_rows(target.features, tgt_sampler.next(cfg.batch_size));
      const auto rep = train_step(s, batch, tgt);
      for (std::size_t m = 0; m < sources.size(); ++m) {
        sum.ce[m] += rep.ce[m] / static_cast<double>(steps);
        sum.adv[m] += rep.adv[m] / static_cast<double>(steps);
      }
    }
    if (hook) hook(epoch, sum);
  }
  return s;
}

inline void save_meosda(const MeosdaState& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  const auto& c = s.config;
  m["kind"] = "meosda";
  m["feat_dim"] = std::to_string(c.feat_dim);
  m["num_known"] = std::to_string(c.num_known);
  std::string dims;
  for (auto d : c.extractor_dims) dims += (dims.empty() ? "" : ",") + std::to_string(d);
  m["extractor_dims"] = dims;
  m["head_hidden"] = std::to_string(c.head_hidden);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", c.leaky_slope);
  m["leaky_slope"] = buf;
  m["head_count"] = std::to_string(s.num_heads());
  std::string hd;
  for (auto d : s.head_domains) hd += (hd.empty() ? "" : ",") + std::to_string(d);
  m["head_domains"] = hd;
  std::snprintf(buf, sizeof buf, "%.17g", c.t_boundary);
  m["t_boundary"] = buf;
  std::snprintf(buf, sizeof buf, "%.17g", c.threshold);
  m["threshold"] = buf;
  save_manifest(dir / "meosda_manifest.txt", m);
  save_params(dir / "meosda_extractor.param", s.extractor.params);
  for (std::size_t h = 0; h < s.num_heads(); ++h)
    save_params(dir / ("meosda_head" + std::to_string(h) + ".param"), s.heads[h].params);
}

/// Restores an inference-ready state (optimizer moments are not checkpointed).
inline MeosdaState load_meosda(const std::filesystem::path& dir) {
  const Manifest m = load_manifest(dir / "meosda_manifest.txt");
  MeosdaConfig c;
  c.feat_dim = std::stoul(manifest_get(m, "feat_dim"));
  c.num_known = std::stoul(manifest_get(m, "num_known"));
  c.extractor_dims.clear();
  std::stringstream dims(manifest_get(m, "extractor_dims"));
  for (std::string tok; std::getline(dims, tok, ',');) c.extractor_dims.push_back(std::stoul(tok));
  c.head_hidden = std::stoul(manifest_get(m, "head_hidden"));
  c.leaky_slope = std::stod(manifest_get(m, "leaky_slope"));
  c.t_boundary = std::stod(manifest_get(m, "t_boundary"));
  c.threshold = std::stod(manifest_get(m, "threshold"));
  MeosdaState s;
  s.config = c;
  s.extractor.spec = c.extractor_spec();
  s.extractor.params = load_params(dir / "meosda_extractor.param");
  check_params(s.extractor.spec, s.extractor.params);
  const std::size_t heads = std::stoul(manifest_get(m, "head_count"));
  std::stringstream hd(manifest_get(m, "head_domains"));
  for (std::string tok; std::getline(hd, tok, ',');) s.head_domains.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
  for (std::size_t h = 0; h < heads; ++h) {
    Mlp head;
    head.spec = c.head_spec();
    head.params = load_params(dir / ("meosda_head" + std::to_string(h) + ".param"));
    check_params(head.spec, head.params);
    s.heads.push_back(std::move(head));
  }
  if (s.head_domains.size() != heads) throw DataError("meosda manifest: head_domains does not match head_count");
  return s;
}

}  // namespace iosda
