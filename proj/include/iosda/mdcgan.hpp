#pragma once

// Multi-domain, class-guided GAN over feature vectors.
//
// Generator:      [z, y, d] -> x'            (3 layers, leaky-relu hidden, linear out)
// Discriminator:  trunk [x, y, d] -> h        (3 layers, leaky-relu)
//                 heads h -> real/fake (2), class (K+1), domain (max_domains)
//
// y is a one-hot over K known classes plus one open slot; d is the binary code
// of (domain_id - 1), least-significant bit first.
//
// Training alternates two Adam steps. The discriminator (trunk + heads)
// descends L_b + L_c + L_d; the generator descends L_c + L_d - L_b + R, where
// the -L_b term reaches the generator through a gradient-reversal node placed
// between the trunk and the real/fake head. All L terms are mean negative
// log-likelihoods over the union of the real and fake batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/random/normal_distribution.hpp>

#include "iosda/checkpoint.hpp"
#include "iosda/datahub.hpp"
#include "iosda/errors.hpp"
#include "iosda/losses.hpp"
#include "iosda/matrix.hpp"
#include "iosda/mlp.hpp"

namespace iosda {

struct GanConfig {
  std::size_t z_dim = 2000;
  std::size_t feat_dim = 2048;
  std::size_t num_known = 4;
  std::size_t d_dim = 3;
  std::size_t max_domains = 8;
  std::size_t gen_hidden = 128;
  std::size_t disc_hidden = 128;
  double leaky_slope = 0.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  bool replay_open_class = true;
  double reversal_lambda = 1.0;
  AdamConfig adam{};

  [[nodiscard]] std::size_t y_dim() const noexcept { return num_known + 1; }
  [[nodiscard]] std::size_t cond_dim() const noexcept { return y_dim() + d_dim; }

  void validate() const {
    if (z_dim == 0 || feat_dim == 0 || num_known == 0 || d_dim == 0 || batch_size == 0)
      throw ConfigError("GanConfig: dimensions must be >= 1");
    if (d_dim >= 31 || max_domains > (std::size_t{1} << d_dim))
      throw ConfigError("GanConfig: max_domains exceeds what d_dim bits can encode");
    if (max_domains == 0) throw ConfigError("GanConfig: max_domains must be >= 1");
  }
};

/// One (class slot, domain) pair the GAN has seen real data for.
struct GanCondition {
  std::size_t slot = 0;
  std::uint32_t domain_id = 1;
  friend auto operator<=>(const GanCondition&, const GanCondition&) = default;
};

struct MdcganState {
  GanConfig config;
  Mlp generator;
  Mlp trunk;
  Mlp head_b;  // real (0) / fake (1)
  Mlp head_c;  // class slot
  Mlp head_d;  // domain_id - 1
  std::set<GanCondition> trained_conditions;

  static MdcganState create(const GanConfig& cfg, Rng& rng) {
    cfg.validate();
    const Activation act = Activation::leaky(cfg.leaky_slope);
    MdcganState s;
    s.config = cfg;
    s.generator = Mlp::create({{cfg.z_dim + cfg.cond_dim(), cfg.gen_hidden, cfg.gen_hidden, cfg.feat_dim}, act, {}, false},
                              rng, cfg.adam);
    s.trunk = Mlp::create(
        {{cfg.feat_dim + cfg.cond_dim(), cfg.disc_hidden, cfg.disc_hidden, cfg.disc_hidden}, act, {}, true}, rng,
        cfg.adam);
    s.head_b = Mlp::create({{cfg.disc_hidden, 2}, act, {}, false}, rng, cfg.adam);
    s.head_c = Mlp::create({{cfg.disc_hidden, cfg.y_dim()}, act, {}, false}, rng, cfg.adam);
    s.head_d = Mlp::create({{cfg.disc_hidden, cfg.max_domains}, act, {}, false}, rng, cfg.adam);
    return s;
  }
};

struct GanLossReport {
  double l_b = 0.0;
  double l_c = 0.0;
  double l_d = 0.0;
  double r = 0.0;

  [[nodiscard]] bool finite() const noexcept {
    return std::isfinite(l_b) && std::isfinite(l_c) && std::isfinite(l_d) && std::isfinite(r);
  }
  friend bool operator==(const GanLossReport&, const GanLossReport&) = default;
};

/// Conditioned batch: features plus per-row class slot and domain id.
struct GanBatch {
  RealMatrix x;
  std::vector<std::size_t> slots;
  std::vector<std::uint32_t> domains;

  [[nodiscard]] std::size_t size() const noexcept { return slots.size(); }
};

/// [one-hot(y) over K+1 slots | bits of (domain_id - 1), LSB first]
inline std::vector<double> encode_condition(ClassLabel label, std::uint32_t domain_id, std::size_t num_known,
                                            std::size_t d_dim) {
  if (label.is_hidden()) throw DataError("encode_condition: hidden label cannot condition the generator");
  const std::size_t slot = label.slot(num_known);
  if (domain_id < 1 || d_dim >= 31 || (domain_id - 1) >= (std::uint64_t{1} << d_dim))
    throw DataError("encode_condition: domain " + std::to_string(domain_id) + " not encodable in " +
                    std::to_string(d_dim) + " bits");
  std::vector<double> code(num_known + 1 + d_dim, 0.0);
  code[slot] = 1.0;
  const std::uint32_t bits = domain_id - 1;
  for (std::size_t b = 0; b < d_dim; ++b) code[num_known + 1 + b] = ((bits >> b) & 1U) ? 1.0 : 0.0;
  return code;
}

inline RealMatrix condition_matrix(const GanConfig& cfg, std::span<const std::size_t> slots,
                                   std::span<const std::uint32_t> domains) {
  if (slots.size() != domains.size()) throw DimensionError("condition_matrix: slot/domain count mismatch");
  RealMatrix m(slots.size(), cfg.cond_dim());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (domains[i] > cfg.max_domains)
      throw DataError("domain " + std::to_string(domains[i]) + " exceeds max_domains");
    const auto code = encode_condition(ClassLabel::from_slot(slots[i], cfg.num_known), domains[i], cfg.num_known, cfg.d_dim);
    std::copy(code.begin(), code.end(), m.row(i).begin());
  }
  return m;
}

/// z ~ N(0, I), one row per sample (ziggurat sampler).
inline RealMatrix sample_noise(std::size_t n, std::size_t z_dim, Rng& rng) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  RealMatrix z(n, z_dim);
  for (double& v : z.data()) v = dist(rng);
  return z;
}

/// Generator forward on explicit noise and conditions.
inline ForwardResult generator_forward(const MdcganState& s, const RealMatrix& z, const RealMatrix& cond, Mode mode) {
  return s.generator.run(hstack(z, cond), mode);
}

/// n samples conditioned on (label, domain_id), z ~ N(0, I).
inline RealMatrix generate(const MdcganState& s, ClassLabel label, std::uint32_t domain_id, std::size_t n, Rng& rng) {
  const auto code = encode_condition(label, domain_id, s.config.num_known, s.config.d_dim);
  if (domain_id > s.config.max_domains) throw DataError("generate: domain exceeds max_domains");
  if (n == 0) return RealMatrix(0, s.config.feat_dim);
  RealMatrix cond(n, code.size());
  for (std::size_t r = 0; r < n; ++r) std::copy(code.begin(), code.end(), cond.row(r).begin());
  RealMatrix z = sample_noise(n, s.config.z_dim, rng);
  return generator_forward(s, z, cond, Mode::eval).output;
}

struct DiscForward {
  ForwardResult trunk;
  ForwardResult b;
  ForwardResult c;
  ForwardResult d;
};

inline DiscForward disc_forward(const MdcganState& s, const RealMatrix& x, const RealMatrix& cond, Mode mode) {
  DiscForward f;
  f.trunk = s.trunk.run(hstack(x, cond), mode);
  f.b = s.head_b.run(f.trunk.output, mode);
  f.c = s.head_c.run(f.trunk.output, mode);
  f.d = s.head_d.run(f.trunk.output, mode);
  return f;
}

namespace detail {

inline std::vector<std::size_t> domain_targets(std::span<const std::uint32_t> domains) {
  std::vector<std::size_t> t(domains.size());
  for (std::size_t i = 0; i < domains.size(); ++i) t[i] = domains[i] - 1;
  return t;
}

template <class T>
std::vector<T> twice(const std::vector<T>& v) {
  std::vector<T> out(v);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace detail

/// Losses for a real batch and a condition-matched fake batch (row i of `fake`
/// shares the conditioning of row i of `real`).
inline GanLossReport gan_losses(const MdcganState& s, const GanBatch& real, const RealMatrix& fake) {
  if (fake.rows() != real.size() || real.x.rows() != real.size())
    throw DimensionError("gan_losses: real/fake batch size mismatch after pairing");
  const std::size_t n = real.size();
  GanLossReport rep;
  if (n == 0) return rep;
  const RealMatrix cond = condition_matrix(s.config, real.slots, real.domains);
  const RealMatrix both_cond = vstack(cond, cond);
  const auto f = disc_forward(s, vstack(real.x, fake), both_cond, Mode::eval);
  std::vector<std::size_t> rf(2 * n, 0);
  std::fill(rf.begin() + static_cast<std::ptrdiff_t>(n), rf.end(), 1);
  rep.l_b = softmax_nll(f.b.output, rf).value;
  rep.l_c = softmax_nll(f.c.output, detail::twice(real.slots)).value;
  rep.l_d = softmax_nll(f.d.output, detail::twice(detail::domain_targets(real.domains))).value;
  rep.r = paired_sq_distance(fake, real.x).value;
  return rep;
}

/// Which generator-objective terms to include, and whether the real/fake term
/// passes through the reversal node.
struct GeneratorTerms {
  bool use_b = true;
  bool use_c = true;
  bool use_d = true;
  bool use_r = true;
  bool reverse_b = true;
};

struct GeneratorGrad {
  double objective = 0.0;  // L_c + L_d - L_b + R restricted to the selected terms (fake-dependent parts)
  ParamSet grads;
  Tape tape;
};

/// Gradient of the generator objective w.r.t. generator parameters for fixed
/// noise `z`. With reverse_b = false the real/fake term is differentiated as
/// +L_b (the unreversed path) while `objective` still reports -L_b.
inline GeneratorGrad generator_gradient(const MdcganState& s, const GanBatch& real, const RealMatrix& z,
                                        const GeneratorTerms& terms = {}) {
  const std::size_t n = real.size();
  const double scale = 1.0 / static_cast<double>(2 * n);
  const RealMatrix cond = condition_matrix(s.config, real.slots, real.domains);
  auto gen = generator_forward(s, z, cond, Mode::train);
  const auto f = disc_forward(s, gen.output, cond, Mode::train);

  GeneratorGrad out;
  RealMatrix trunk_grad(n, s.config.disc_hidden);
  if (terms.use_c) {
    auto lc = softmax_nll(f.c.output, real.slots, scale);
    out.objective += lc.value;
    trunk_grad += s.head_c.back(f.c.tape, lc.grad).input_grad;
  }
  if (terms.use_d) {
    auto ld = softmax_nll(f.d.output, detail::domain_targets(real.domains), scale);
    out.objective += ld.value;
    trunk_grad += s.head_d.back(f.d.tape, ld.grad).input_grad;
  }
  if (terms.use_b) {
    std::vector<std::size_t> fake_target(n, 1);
    auto lb = softmax_nll(f.b.output, fake_target, scale);
    out.objective -= lb.value;
    RealMatrix gb = s.head_b.back(f.b.tape, lb.grad).input_grad;
    trunk_grad += terms.reverse_b ? grad_reverse(gb, s.config.reversal_lambda) : gb;
  }
  RealMatrix x_grad = slice_cols(s.trunk.back(f.trunk.tape, trunk_grad).input_grad, 0, s.config.feat_dim);
  if (terms.use_r) {
    auto r = paired_sq_distance(gen.output, real.x);
    out.objective += r.value;
    x_grad += r.grad;
  }
  out.grads = s.generator.back(gen.tape, x_grad, false).grads;
  out.tape = std::move(gen.tape);
  return out;
}

struct DiscriminatorGrad {
  double objective = 0.0;  // L_b + L_c + L_d
  ParamSet trunk, b, c, d;
  Tape trunk_tape, b_tape, c_tape, d_tape;
};

inline DiscriminatorGrad discriminator_gradient(const MdcganState& s, const GanBatch& real, const RealMatrix& fake) {
  const std::size_t n = real.size();
  const RealMatrix cond = condition_matrix(s.config, real.slots, real.domains);
  auto f = disc_forward(s, vstack(real.x, fake), vstack(cond, cond), Mode::train);
  std::vector<std::size_t> rf(2 * n, 0);
  std::fill(rf.begin() + static_cast<std::ptrdiff_t>(n), rf.end(), 1);
  auto lb = softmax_nll(f.b.output, rf);
  auto lc = softmax_nll(f.c.output, detail::twice(real.slots));
  auto ld = softmax_nll(f.d.output, detail::twice(detail::domain_targets(real.domains)));

  DiscriminatorGrad g;
  g.objective = lb.value + lc.value + ld.value;
  auto bb = s.head_b.back(f.b.tape, lb.grad);
  auto bc = s.head_c.back(f.c.tape, lc.grad);
  auto bd = s.head_d.back(f.d.tape, ld.grad);
  RealMatrix trunk_grad = bb.input_grad;
  trunk_grad += bc.input_grad;
  trunk_grad += bd.input_grad;
  g.trunk = s.trunk.back(f.trunk.tape, trunk_grad).grads;
  g.b = std::move(bb.grads);
  g.c = std::move(bc.grads);
  g.d = std::move(bd.grads);
  g.trunk_tape = std::move(f.trunk.tape);
  g.b_tape = std::move(f.b.tape);
  g.c_tape = std::move(f.c.tape);
  g.d_tape = std::move(f.d.tape);
  return g;
}

/// One discriminator step then one generator step, each on a fresh fake batch.
/// Returns losses measured after both updates, regenerating the fakes from the
/// generator step's noise.
inline GanLossReport train_step(MdcganState& s, const GanBatch& real, Rng& rng) {
  if (real.size() == 0) throw DataError("mdcgan train_step: empty real batch");
  if (real.x.cols() != s.config.feat_dim) throw DimensionError("mdcgan train_step: feature width mismatch");
  const std::size_t n = real.size();
  const RealMatrix cond = condition_matrix(s.config, real.slots, real.domains);

  const RealMatrix fake1 = generator_forward(s, sample_noise(n, s.config.z_dim, rng), cond, Mode::eval).output;
  auto dg = discriminator_gradient(s, real, fake1);
  if (!std::isfinite(dg.objective))
    throw NumericError("mdcgan discriminator objective is non-finite (" + std::to_string(dg.objective) + ")");
  s.trunk.apply(dg.trunk, dg.trunk_tape);
  s.head_b.apply(dg.b, dg.b_tape);
  s.head_c.apply(dg.c, dg.c_tape);
  s.head_d.apply(dg.d, dg.d_tape);

  const RealMatrix z2 = sample_noise(n, s.config.z_dim, rng);
  auto gg = generator_gradient(s, real, z2);
  if (!std::isfinite(gg.objective))
    throw NumericError("mdcgan generator objective is non-finite (" + std::to_string(gg.objective) + ")");
  s.generator.apply(gg.grads, gg.tape);

  const RealMatrix fake3 = generator_forward(s, z2, cond, Mode::eval).output;
  GanLossReport rep = gan_losses(s, real, fake3);
  if (!rep.finite()) {
    std::ostringstream msg;
    msg << "mdcgan losses non-finite: L_b=" << rep.l_b << " L_c=" << rep.l_c << " L_d=" << rep.l_d << " R=" << rep.r;
    throw NumericError(msg.str());
  }
  return rep;
}

/// Flattens labeled views into one conditioned pool.
inline GanBatch make_gan_pool(const std::vector<TrainingView>& pool, const GanConfig& cfg) {
  GanBatch all;
  std::size_t total = 0;
  for (const auto& v : pool) total += v.size();
  all.x = RealMatrix(total, cfg.feat_dim);
  std::size_t row = 0;
  for (const auto& v : pool) {
    if (v.features.cols() != cfg.feat_dim && v.size() > 0)
      throw DimensionError("mdcgan pool: feature width " + std::to_string(v.features.cols()) + " != " +
                           std::to_string(cfg.feat_dim));
    for (std::size_t i = 0; i < v.size(); ++i, ++row) {
      if (v.labels[i].is_hidden()) throw DataError("mdcgan pool: every sample must be labeled");
      std::copy(v.features.row(i).begin(), v.features.row(i).end(), all.x.row(row).begin());
      all.slots.push_back(v.labels[i].slot(cfg.num_known));
      all.domains.push_back(v.domain_id);
    }
  }
  return all;
}

inline GanBatch gather_batch(const GanBatch& pool, std::span<const std::size_t> idx) {
  GanBatch b;
  b.x = gather_rows(pool.x, idx);
  for (auto i : idx) {
    b.slots.push_back(pool.slots[i]);
    b.domains.push_back(pool.domains[i]);
  }
  return b;
}

/// Optional per-epoch callback: (epoch, mean report over the epoch).
using GanEpochHook = std::function<void(std::size_t, const GanLossReport&)>;

/// Trains a fresh GAN on the union of labeled views. Open-labeled samples are
/// dropped unless replay_open_class is set.
inline MdcganState train_replay_gan(const std::vector<TrainingView>& real_pool, const GanConfig& cfg,
                                    std::uint64_t seed, const GanEpochHook& hook = {}) {
  std::vector<TrainingView> filtered;
  for (const auto& v : real_pool) {
    if (cfg.replay_open_class) {
      filtered.push_back(v);
      continue;
    }
    TrainingView k{v.domain_id, RealMatrix(0, v.features.cols()), {}};
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!v.labels[i].is_open()) keep.push_back(i);
    k.features = gather_rows(v.features, keep);
    for (auto i : keep) k.labels.push_back(v.labels[i]);
    filtered.push_back(std::move(k));
  }
  const GanBatch pool = make_gan_pool(filtered, cfg);
  if (pool.size() == 0) throw DataError("train_replay_gan: empty pool");

  Rng rng(seed);
  MdcganState s = MdcganState::create(cfg, rng);
  for (std::size_t i = 0; i < pool.size(); ++i) s.trained_conditions.insert({pool.slots[i], pool.domains[i]});

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    GanLossReport sum;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const auto batch = gather_batch(pool, std::span(order).subspan(b, e - b));
      const auto rep = train_step(s, batch, rng);
      sum.l_b += rep.l_b;
      sum.l_c += rep.l_c;
      sum.l_d += rep.l_d;
      sum.r += rep.r;
      ++batches;
    }
    if (hook) {
      const double k = 1.0 / static_cast<double>(batches);
      hook(epoch, {sum.l_b * k, sum.l_c * k, sum.l_d * k, sum.r * k});
    }
  }
  return s;
}

/// Per-domain replay: `per_class` samples per class slot, labeled by the
/// conditioning. With `trained_only`, slots the GAN never saw real data for
/// under that domain are skipped.
inline std::vector<TrainingView> replay_domains(const MdcganState& s, std::span<const std::uint32_t> domains,
                                                std::size_t per_class, Rng& rng, bool trained_only = true) {
  std::vector<TrainingView> out;
  for (auto dom : domains) {
    TrainingView v{dom, RealMatrix(0, s.config.feat_dim), {}};
    for (std::size_t slot = 0; slot <= s.config.num_known; ++slot) {
      if (trained_only && !s.trained_conditions.contains({slot, dom})) continue;
      if (slot == s.config.num_known && !s.config.replay_open_class) continue;
      const ClassLabel label = ClassLabel::from_slot(slot, s.config.num_known);
      v.features = vstack(v.features, generate(s, label, dom, per_class, rng));
      v.labels.insert(v.labels.end(), per_class, label);
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline void save_mdcgan(const MdcganState& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  const auto& c = s.config;
  m["kind"] = "mdcgan";
  m["z_dim"] = std::to_string(c.z_dim);
  m["feat_dim"] = std::to_string(c.feat_dim);
  m["num_known"] = std::to_string(c.num_known);
  m["d_dim"] = std::to_string(c.d_dim);
  m["max_domains"] = std::to_string(c.max_domains);
  m["gen_hidden"] = std::to_string(c.gen_hidden);
  m["disc_hidden"] = std::to_string(c.disc_hidden);
  m["replay_open_class"] = c.replay_open_class ? "1" : "0";
  char slope[32];
  std::snprintf(slope, sizeof slope, "%.17g", c.leaky_slope);
  m["leaky_slope"] = slope;
  std::string conds;
  for (const auto& tc : s.trained_conditions)
    conds += (conds.empty() ? "" : ";") + std::to_string(tc.slot) + ":" + std::to_string(tc.domain_id);
  m["trained_conditions"] = conds;
  std::set<std::uint32_t> doms;
  for (const auto& tc : s.trained_conditions) doms.insert(tc.domain_id);
  m["domain_count"] = std::to_string(doms.size());
  save_manifest(dir / "mdcgan_manifest.txt", m);
  save_params(dir / "gan_generator.param", s.generator.params);
  save_params(dir / "gan_trunk.param", s.trunk.params);
  save_params(dir / "gan_head_b.param", s.head_b.params);
  save_params(dir / "gan_head_c.param", s.head_c.params);
  save_params(dir / "gan_head_d.param", s.head_d.params);
}

/// Restores a generation-ready state (optimizer moments are not checkpointed).
inline MdcganState load_mdcgan(const std::filesystem::path& dir) {
  const Manifest m = load_manifest(dir / "mdcgan_manifest.txt");
  if (manifest_get(m, "kind") != "mdcgan") throw DataError(dir.string() + ": not an mdcgan checkpoint");
  GanConfig c;
  c.z_dim = std::stoul(manifest_get(m, "z_dim"));
  c.feat_dim = std::stoul(manifest_get(m, "feat_dim"));
  c.num_known = std::stoul(manifest_get(m, "num_known"));
  c.d_dim = std::stoul(manifest_get(m, "d_dim"));
  c.max_domains = std::stoul(manifest_get(m, "max_domains"));
  c.gen_hidden = std::stoul(manifest_get(m, "gen_hidden"));
  c.disc_hidden = std::stoul(manifest_get(m, "disc_hidden"));
  c.replay_open_class = manifest_get(m, "replay_open_class") == "1";
  c.leaky_slope = std::stod(manifest_get(m, "leaky_slope"));
  Rng unused(0);
  MdcganState s = MdcganState::create(c, unused);
  auto restore = [&](Mlp& net, const char* file) {
    net.params = load_params(dir / file);
    check_params(net.spec, net.params);
    net.optimizer = AdamState::for_params(net.params, c.adam);
  };
  restore(s.generator, "gan_generator.param");
  restore(s.trunk, "gan_trunk.param");
  restore(s.head_b, "gan_head_b.param");
  restore(s.head_c, "gan_head_c.param");
  restore(s.head_d, "gan_head_d.param");
  std::stringstream conds(manifest_get(m, "trained_conditions"));
  for (std::string tok; std::getline(conds, tok, ';');) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw DataError("mdcgan manifest: malformed trained_conditions");
    s.trained_conditions.insert({std::stoul(tok.substr(0, colon)),
                                 static_cast<std::uint32_t>(std::stoul(tok.substr(colon + 1)))});
  }
  return s;
}

}  // namespace iosda
