#pragma once

// Flat key=value run configuration with dotted namespaces, e.g.
//
//   seed=7
//   meosda.epochs=30
//   data.files=d1.csv,d2.csv,d3.csv
//
// Blank lines and lines starting with '#' are ignored. Unknown keys are
// rejected. Reals are written in shortest round-trip form so a snapshot
// reproduces the run.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "iosda/errors.hpp"
#include "iosda/timeline.hpp"

namespace iosda {

struct RunConfig {
  TimelineConfig timeline;
  std::string out_dir = "run";
  int verbosity = 1;  // 0 quiet, 1 progress, 2 per-epoch losses
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_real_exact(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<T>(out);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string tok; std::getline(ss, tok, ',');) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

template <class T>
std::string join_list(const std::vector<T>& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_same_v<T, std::string>) out += x;
    else out += std::to_string(x);
  }
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// Every recognized key, in snapshot order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto size_key = [&](std::string name, std::string help, auto member) {
      k.push_back({name, std::move(help), [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                   [member, name](RunConfig& c, const std::string& v) { member(c) = parse_unsigned<std::size_t>(name, v); }});
    };
    auto real_key = [&](std::string name, std::string help, auto member) {
      k.push_back({name, std::move(help), [member](const RunConfig& c) { return fmt_real_exact(member(const_cast<RunConfig&>(c))); },
                   [member, name](RunConfig& c, const std::string& v) { member(c) = parse_double(name, v); }});
    };

    k.push_back({"seed", "master seed for every stochastic step (falls back to $IOSDA_SEED)",
                 [](const RunConfig& c) { return std::to_string(c.timeline.seed); },
                 [](RunConfig& c, const std::string& v) { c.timeline.seed = parse_unsigned<std::uint64_t>("seed", v); }});
    k.push_back({"output.dir", "run directory", [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) { c.out_dir = v; }});
    k.push_back({"log.verbosity", "0 quiet, 1 progress, 2 per-epoch losses",
                 [](const RunConfig& c) { return std::to_string(c.verbosity); },
                 [](RunConfig& c, const std::string& v) { c.verbosity = parse_unsigned<int>("log.verbosity", v); }});

    k.push_back({"data.source", "synthetic | files", [](const RunConfig& c) { return c.timeline.data_source; },
                 [](RunConfig& c, const std::string& v) { c.timeline.data_source = v; }});
    k.push_back({"data.files", "comma-separated feature files, one per domain in stream order",
                 [](const RunConfig& c) { return join_list(c.timeline.files); },
                 [](RunConfig& c, const std::string& v) { c.timeline.files = split_list(v); }});
    size_key("data.num_domains", "domains to generate (synthetic source)", [](RunConfig& c) -> auto& { return c.timeline.num_domains; });
    size_key("data.num_known", "known classes K", [](RunConfig& c) -> auto& { return c.timeline.num_known; });
    real_key("data.holdout_fraction", "share of each target domain held out for scoring",
             [](RunConfig& c) -> auto& { return c.timeline.holdout_fraction; });

    size_key("synth.feat_dim", "synthetic feature width", [](RunConfig& c) -> auto& { return c.timeline.synth.feat_dim; });
    size_key("synth.open_per_domain", "open clusters per target domain",
             [](RunConfig& c) -> auto& { return c.timeline.synth.open_per_domain; });
    size_key("synth.samples_per_class", "samples per class and domain",
             [](RunConfig& c) -> auto& { return c.timeline.synth.samples_per_class; });
    real_key("synth.domain_shift", "L2 norm of each domain's mean offset",
             [](RunConfig& c) -> auto& { return c.timeline.synth.domain_shift; });
    real_key("synth.class_spread", "std of class-mean coordinates", [](RunConfig& c) -> auto& { return c.timeline.synth.class_spread; });
    real_key("synth.cluster_std", "within-cluster std", [](RunConfig& c) -> auto& { return c.timeline.synth.cluster_std; });
    k.push_back({"synth.seed", "data generation seed (independent of the run seed)",
                 [](const RunConfig& c) { return std::to_string(c.timeline.synth.seed); },
                 [](RunConfig& c, const std::string& v) { c.timeline.synth.seed = parse_unsigned<std::uint64_t>("synth.seed", v); }});

    real_key("pipeline.threshold", "pseudo-label probability threshold Th", [](RunConfig& c) -> auto& { return c.timeline.threshold; });
    size_key("pipeline.replay_per_class", "generated samples per (class, past domain)",
             [](RunConfig& c) -> auto& { return c.timeline.replay_per_class; });
    k.push_back({"pipeline.replay_trained_only", "replay only (class, domain) pairs the GAN was trained on",
                 [](const RunConfig& c) { return std::string(c.timeline.replay_trained_only ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                   c.timeline.replay_trained_only = parse_bool("pipeline.replay_trained_only", v);
                 }});

    size_key("mdcgan.z_dim", "noise width", [](RunConfig& c) -> auto& { return c.timeline.gan.z_dim; });
    size_key("mdcgan.d_dim", "bits of the domain code", [](RunConfig& c) -> auto& { return c.timeline.gan.d_dim; });
    size_key("mdcgan.max_domains", "domain-head width", [](RunConfig& c) -> auto& { return c.timeline.gan.max_domains; });
    size_key("mdcgan.gen_hidden", "generator hidden width", [](RunConfig& c) -> auto& { return c.timeline.gan.gen_hidden; });
    size_key("mdcgan.disc_hidden", "discriminator trunk width", [](RunConfig& c) -> auto& { return c.timeline.gan.disc_hidden; });
    real_key("mdcgan.leaky_slope", "leaky-relu slope", [](RunConfig& c) -> auto& { return c.timeline.gan.leaky_slope; });
    size_key("mdcgan.batch_size", "minibatch size", [](RunConfig& c) -> auto& { return c.timeline.gan.batch_size; });
    size_key("mdcgan.epochs", "training epochs per timestamp", [](RunConfig& c) -> auto& { return c.timeline.gan.epochs; });
    k.push_back({"mdcgan.replay_open_class", "let open pseudo-labels into GAN training",
                 [](const RunConfig& c) { return std::string(c.timeline.gan.replay_open_class ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                   c.timeline.gan.replay_open_class = parse_bool("mdcgan.replay_open_class", v);
                 }});
    real_key("mdcgan.reversal_lambda", "gradient-reversal factor on the real/fake branch",
             [](RunConfig& c) -> auto& { return c.timeline.gan.reversal_lambda; });
    real_key("mdcgan.lr", "Adam learning rate", [](RunConfig& c) -> auto& { return c.timeline.gan.adam.learning_rate; });
    real_key("mdcgan.beta1", "Adam beta1", [](RunConfig& c) -> auto& { return c.timeline.gan.adam.beta1; });
    real_key("mdcgan.beta2", "Adam beta2", [](RunConfig& c) -> auto& { return c.timeline.gan.adam.beta2; });

    k.push_back({"meosda.extractor_dims", "extractor hidden widths",
                 [](const RunConfig& c) { return join_list(c.timeline.meosda.extractor_dims); },
                 [](RunConfig& c, const std::string& v) {
                   c.timeline.meosda.extractor_dims.clear();
                   for (const auto& t : split_list(v))
                     c.timeline.meosda.extractor_dims.push_back(parse_unsigned<std::size_t>("meosda.extractor_dims", t));
                 }});
    size_key("meosda.head_hidden", "head hidden width", [](RunConfig& c) -> auto& { return c.timeline.meosda.head_hidden; });
    real_key("meosda.leaky_slope", "leaky-relu slope", [](RunConfig& c) -> auto& { return c.timeline.meosda.leaky_slope; });
    size_key("meosda.batch_size", "minibatch size per source and target", [](RunConfig& c) -> auto& { return c.timeline.meosda.batch_size; });
    size_key("meosda.epochs", "adaptation epochs per timestamp", [](RunConfig& c) -> auto& { return c.timeline.meosda.epochs; });
    real_key("meosda.t_boundary", "target value t of the boundary loss", [](RunConfig& c) -> auto& { return c.timeline.meosda.t_boundary; });
    real_key("meosda.adv_weight", "weight of the boundary loss", [](RunConfig& c) -> auto& { return c.timeline.meosda.adv_weight; });
    real_key("meosda.reversal_lambda", "gradient-reversal factor into the extractor",
             [](RunConfig& c) -> auto& { return c.timeline.meosda.reversal_lambda; });
    real_key("meosda.lr", "Adam learning rate", [](RunConfig& c) -> auto& { return c.timeline.meosda.adam.learning_rate; });
    real_key("meosda.beta1", "Adam beta1", [](RunConfig& c) -> auto& { return c.timeline.meosda.adam.beta1; });
    real_key("meosda.beta2", "Adam beta2", [](RunConfig& c) -> auto& { return c.timeline.meosda.adam.beta2; });
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

/// Applies one "key=value" assignment.
inline void apply_assignment(RunConfig& cfg, std::string_view assignment, const std::string& where = "override") {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value, got '" + std::string(assignment) + "'");
  const std::string key = detail::trim(assignment.substr(0, eq));
  const std::string value = detail::trim(assignment.substr(eq + 1));
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError(where + ": unknown key '" + key + "'");
  k->set(cfg, value);
}

inline void apply_config_text(RunConfig& cfg, std::istream& is, const std::string& source) {
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    apply_assignment(cfg, t, source + ":" + std::to_string(n));
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  apply_config_text(cfg, is, path.string());
}

/// Seed from $IOSDA_SEED when set (config files and flags override it).
inline void apply_env_seed(RunConfig& cfg) {
  if (const char* s = std::getenv("IOSDA_SEED"); s && *s)
    cfg.timeline.seed = detail::parse_unsigned<std::uint64_t>("IOSDA_SEED", s);
}

inline std::string config_snapshot(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + "=" + k.get(cfg) + "\n";
  return out;
}

inline void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << config_snapshot(cfg);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

}  // namespace iosda
