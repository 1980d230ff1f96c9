#pragma once

// Central finite-difference checks of every analytic gradient in the library,
// on tiny randomly initialized networks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "iosda/mdcgan.hpp"
#include "iosda/meosda.hpp"
#include "iosda/mlp.hpp"

namespace iosda {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-6;  // differences below this always pass
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  std::size_t failed = 0;
  double max_rel_err = 0.0;

  [[nodiscard]] bool pass() const noexcept { return checked > 0 && failed == 0; }
};

/// Compares `analytic` with central differences of `objective` taken by
/// perturbing `values` in place (restored afterwards).
template <class F>
void fd_compare(std::vector<double>& values, const std::vector<double>& analytic, F&& objective,
                const GradCheckOptions& opt, GradCheckResult& res) {
  if (values.size() != analytic.size()) throw DimensionError("fd_compare: gradient size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + opt.step;
    const double up = objective();
    values[i] = keep - opt.step;
    const double down = objective();
    values[i] = keep;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double diff = std::abs(numeric - analytic[i]);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), opt.abs_floor});
    res.max_rel_err = std::max(res.max_rel_err, diff / scale);
    if (diff > opt.abs_floor && diff > opt.rel_tol * scale) ++res.failed;
    ++res.checked;
  }
}

/// Checks every trainable tensor of `params` against `grads`.
template <class F>
void fd_compare_params(ParamSet& params, const ParamSet& grads, F&& objective, const GradCheckOptions& opt,
                       GradCheckResult& res) {
  std::vector<RealMatrix*> p;
  std::vector<const RealMatrix*> g;
  params.for_each_trainable([&](RealMatrix& m) { p.push_back(&m); });
  grads.for_each_trainable([&](const RealMatrix& m) { g.push_back(&m); });
  if (p.size() != g.size()) throw DimensionError("fd_compare_params: tensor count mismatch");
  for (std::size_t t = 0; t < p.size(); ++t) fd_compare(p[t]->data(), g[t]->data(), objective, opt, res);
}

namespace detail {

inline RealMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  RealMatrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline double frobenius_dot(const RealMatrix& a, const RealMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace detail

/// <upstream, net(x)> for a small batch-normalized MLP in the given mode.
inline std::vector<GradCheckResult> check_mlp(std::uint64_t seed, Mode mode, const GradCheckOptions& opt = {}) {
  Rng rng(seed);
  Mlp net = Mlp::create({{3, 5, 4, 2}, Activation::leaky(0.2), {true, true, false}, false}, rng);
  if (mode == Mode::eval) {
    // Move running statistics away from identity so eval-mode BN is exercised.
    for (auto& l : net.params.layers)
      if (!l.bn_mean.empty()) {
        l.bn_mean = detail::random_matrix(1, l.bn_mean.cols(), rng, 0.3);
        for (double& v : l.bn_var.data()) v = 0.5 + std::abs(v - 1.0) + 0.3 * std::uniform_real_distribution<>(0, 1)(rng);
      }
  }
  RealMatrix x = detail::random_matrix(6, 3, rng);
  const RealMatrix up = detail::random_matrix(6, 2, rng);
  auto obj = [&] { return detail::frobenius_dot(up, forward(net.spec, net.params, x, mode).output); };
  const auto fr = net.run(x, mode);
  const auto br = net.back(fr.tape, up);

  const std::string tag = mode == Mode::train ? "mlp/train" : "mlp/eval";
  GradCheckResult params{tag + " params"}, input{tag + " input"};
  fd_compare_params(net.params, br.grads, obj, opt, params);
  fd_compare(x.data(), br.input_grad.data(), obj, opt, input);
  return {params, input};
}

/// Tiny conditioned GAN used by the checks.
inline GanConfig tiny_gan_config() {
  GanConfig c;
  c.z_dim = 5;
  c.feat_dim = 3;
  c.num_known = 2;
  c.d_dim = 2;
  c.max_domains = 4;
  c.gen_hidden = 6;
  c.disc_hidden = 6;
  c.leaky_slope = 0.2;
  return c;
}

inline GanBatch tiny_gan_batch(const GanConfig& c, Rng& rng) {
  GanBatch b;
  b.x = detail::random_matrix(4, c.feat_dim, rng);
  b.slots = {0, 1, 2, 1};
  b.domains = {1, 2, 2, 3};
  return b;
}

inline std::vector<GradCheckResult> check_mdcgan(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  Rng rng(seed);
  const GanConfig c = tiny_gan_config();
  MdcganState s = MdcganState::create(c, rng);
  const GanBatch real = tiny_gan_batch(c, rng);
  const RealMatrix z = sample_noise(real.size(), c.z_dim, rng);

  GradCheckResult gen{"mdcgan generator"};
  const auto gg = generator_gradient(s, real, z);
  fd_compare_params(s.generator.params, gg.grads, [&] { return generator_gradient(s, real, z).objective; }, opt, gen);

  const RealMatrix fake = detail::random_matrix(real.size(), c.feat_dim, rng);
  const auto dg = discriminator_gradient(s, real, fake);
  auto dobj = [&] { return discriminator_gradient(s, real, fake).objective; };
  GradCheckResult disc{"mdcgan discriminator"};
  fd_compare_params(s.trunk.params, dg.trunk, dobj, opt, disc);
  fd_compare_params(s.head_b.params, dg.b, dobj, opt, disc);
  fd_compare_params(s.head_c.params, dg.c, dobj, opt, disc);
  fd_compare_params(s.head_d.params, dg.d, dobj, opt, disc);
  return {gen, disc};
}

inline MeosdaConfig tiny_meosda_config() {
  MeosdaConfig c;
  c.feat_dim = 3;
  c.num_known = 2;
  c.extractor_dims = {6, 5};
  c.head_hidden = 4;
  c.leaky_slope = 0.2;
  c.adv_weight = 0.5;
  return c;
}

inline std::vector<TrainingView> tiny_meosda_sources(const MeosdaConfig& c, Rng& rng) {
  std::vector<TrainingView> src;
  for (std::uint32_t d = 1; d <= 2; ++d) {
    TrainingView v{d, detail::random_matrix(5, c.feat_dim, rng), {}};
    for (std::size_t i = 0; i < 5; ++i) v.labels.push_back(ClassLabel::from_slot((i + d) % (c.num_known + 1), c.num_known));
    src.push_back(std::move(v));
  }
  return src;
}

inline std::vector<GradCheckResult> check_meosda(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  Rng rng(seed);
  const MeosdaConfig c = tiny_meosda_config();
  const auto sources = tiny_meosda_sources(c, rng);
  const std::vector<std::uint32_t> doms{1, 2};
  MeosdaState s = MeosdaState::create(c, doms, rng);
  const RealMatrix target = detail::random_matrix(4, c.feat_dim, rng);
  const auto g = meosda_gradient(s, sources, target);

  auto head_obj = [&] {
    const auto r = meosda_gradient(s, sources, target).report;
    return r.total_ce() + c.adv_weight * r.total_adv();
  };
  auto extractor_obj = [&] {
    const auto r = meosda_gradient(s, sources, target).report;
    return r.total_ce() - c.reversal_lambda * c.adv_weight * r.total_adv();
  };
  GradCheckResult heads{"meosda heads"}, extractor{"meosda extractor"};
  for (std::size_t m = 0; m < s.num_heads(); ++m) fd_compare_params(s.heads[m].params, g.heads[m], head_obj, opt, heads);
  fd_compare_params(s.extractor.params, g.extractor, extractor_obj, opt, extractor);
  return {heads, extractor};
}

/// The full suite: plain MLPs at the strict tolerance, composite models at
/// `composite_tol`.
inline std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, double composite_tol = 1e-3) {
  std::vector<GradCheckResult> all;
  for (auto& r : check_mlp(seed, Mode::train)) all.push_back(r);
  for (auto& r : check_mlp(seed + 1, Mode::eval)) all.push_back(r);
  GradCheckOptions loose;
  loose.rel_tol = composite_tol;
  for (auto& r : check_mdcgan(seed, loose)) all.push_back(r);
  for (auto& r : check_meosda(seed, loose)) all.push_back(r);
  return all;
}

}  // namespace iosda
