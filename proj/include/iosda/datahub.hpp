#pragma once

// Domain streams of feature vectors: synthetic Gaussian generators with
// known/open class structure, plus CSV and binary feature-file I/O.
//
// Ground truth always travels with the samples. Whether a model may see it is
// decided by the view: training views of unlabeled domains carry only Hidden
// labels, evaluation views always carry the truth.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iosda/binio.hpp"
#include "iosda/errors.hpp"
#include "iosda/matrix.hpp"
#include "iosda/mlp.hpp"

namespace iosda {

class ClassLabel {
 public:
  enum class Kind : std::uint8_t { known, open, hidden };

  static constexpr ClassLabel known(std::uint32_t k) { return {Kind::known, k}; }
  static constexpr ClassLabel open() { return {Kind::open, 0}; }
  static constexpr ClassLabel hidden() { return {Kind::hidden, 0}; }

  /// Integer file code: >= 0 known class, -1 open. Hidden has no code.
  static ClassLabel from_code(std::int64_t code) {
    if (code >= 0) return known(static_cast<std::uint32_t>(code));
    if (code == -1) return open();
    throw DataError("unknown label code " + std::to_string(code));
  }

  [[nodiscard]] Kind kind() const noexcept { return kind_; }
  [[nodiscard]] bool is_known() const noexcept { return kind_ == Kind::known; }
  [[nodiscard]] bool is_open() const noexcept { return kind_ == Kind::open; }
  [[nodiscard]] bool is_hidden() const noexcept { return kind_ == Kind::hidden; }
  [[nodiscard]] std::uint32_t index() const {
    if (!is_known()) throw DataError("ClassLabel::index on non-known label");
    return index_;
  }

  [[nodiscard]] std::int64_t code() const {
    if (is_hidden()) throw DataError("hidden label has no code");
    return is_known() ? static_cast<std::int64_t>(index_) : -1;
  }

  /// Slot in a K+1-way output: known k -> k, open -> K.
  [[nodiscard]] std::size_t slot(std::size_t num_known) const {
    if (is_hidden()) throw DataError("hidden label has no output slot");
    if (is_open()) return num_known;
    if (index_ >= num_known)
      throw DataError("known class " + std::to_string(index_) + " out of range for K=" + std::to_string(num_known));
    return index_;
  }
  static ClassLabel from_slot(std::size_t slot, std::size_t num_known) {
    return slot >= num_known ? open() : known(static_cast<std::uint32_t>(slot));
  }

  [[nodiscard]] std::string str() const {
    switch (kind_) {
      case Kind::known: return std::to_string(index_);
      case Kind::open: return "open";
      case Kind::hidden: break;
    }
    return "hidden";
  }

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;

 private:
  constexpr ClassLabel(Kind k, std::uint32_t i) : kind_(k), index_(i) {}
  Kind kind_ = Kind::hidden;
  std::uint32_t index_ = 0;
};

struct FeatureSample {
  std::vector<double> features;
  std::uint32_t domain_id = 1;
  ClassLabel truth = ClassLabel::open();

  friend bool operator==(const FeatureSample&, const FeatureSample&) = default;
};

/// Model-facing batch: feature rows with labels filtered by visibility.
struct TrainingView {
  std::uint32_t domain_id = 0;
  RealMatrix features;
  std::vector<ClassLabel> labels;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

/// Evaluation-facing batch: feature rows with ground truth.
struct EvaluationView {
  std::uint32_t domain_id = 0;
  RealMatrix features;
  std::vector<ClassLabel> truth;

  [[nodiscard]] std::size_t size() const noexcept { return truth.size(); }
};

struct DomainDataset {
  std::uint32_t domain_id = 1;
  std::vector<FeatureSample> samples;
  bool labels_visible = false;
  std::vector<std::uint32_t> open_cluster_ids;  // generator metadata; empty for loaded files

  [[nodiscard]] std::size_t size() const noexcept { return samples.size(); }
  [[nodiscard]] bool empty() const noexcept { return samples.empty(); }
  [[nodiscard]] std::size_t feat_dim() const noexcept {
    return samples.empty() ? 0 : samples.front().features.size();
  }

  [[nodiscard]] RealMatrix feature_matrix() const {
    RealMatrix m(samples.size(), feat_dim());
    for (std::size_t i = 0; i < samples.size(); ++i)
      std::copy(samples[i].features.begin(), samples[i].features.end(), m.row(i).begin());
    return m;
  }

  [[nodiscard]] TrainingView training_view() const {
    TrainingView v{domain_id, feature_matrix(), {}};
    v.labels.reserve(samples.size());
    for (const auto& s : samples) v.labels.push_back(labels_visible ? s.truth : ClassLabel::hidden());
    return v;
  }

  [[nodiscard]] EvaluationView evaluation_view() const {
    EvaluationView v{domain_id, feature_matrix(), {}};
    v.truth.reserve(samples.size());
    for (const auto& s : samples) v.truth.push_back(s.truth);
    return v;
  }
};

struct SynthSpec {
  std::size_t feat_dim = 16;
  std::size_t num_known = 4;
  std::size_t open_per_domain = 2;
  std::size_t samples_per_class = 200;
  double domain_shift = 2.0;  // L2 norm of each domain's mean offset
  double class_spread = 3.0;  // std of class-mean coordinates
  double cluster_std = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (feat_dim < 1 || num_known < 1 || open_per_domain < 1 || samples_per_class < 1)
      throw ConfigError("SynthSpec: all counts must be >= 1");
    if (!(cluster_std > 0.0)) throw ConfigError("SynthSpec: cluster_std must be > 0");
    if (domain_shift < 0.0 || class_spread < 0.0) throw ConfigError("SynthSpec: magnitudes must be >= 0");
  }
};

namespace detail {

inline std::vector<double> gaussian_vector(std::size_t d, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (double& x : v) x = scale * n(rng);
  return v;
}

/// Values are rounded to f32 precision so both file formats round-trip exactly.
inline std::vector<double> draw_sample(const std::vector<double>& mean, double std_dev, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(mean.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(static_cast<float>(mean[i] + std_dev * n(rng)));
  return v;
}

}  // namespace detail

/// Domain 1 holds only known classes (labeled); every later domain holds the
/// known classes plus its own open clusters (unlabeled). Known class means are
/// shared across domains; each domain adds its own mean offset.
inline std::vector<DomainDataset> gen_synthetic(const SynthSpec& spec, std::size_t num_domains) {
  spec.validate();
  if (num_domains < 2) throw ConfigError("gen_synthetic: need at least 2 domains");
  Rng rng(spec.seed);
  const std::size_t d = spec.feat_dim;
  const std::size_t open_total = spec.open_per_domain * (num_domains - 1);

  std::vector<std::vector<double>> means;  // known classes then open clusters
  for (std::size_t c = 0; c < spec.num_known + open_total; ++c)
    means.push_back(detail::gaussian_vector(d, spec.class_spread, rng));

  std::vector<std::vector<double>> offsets(num_domains, std::vector<double>(d, 0.0));
  for (std::size_t m = 1; m < num_domains; ++m) {
    auto dir = detail::gaussian_vector(d, 1.0, rng);
    double norm = 0.0;
    for (double v : dir) norm += v * v;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) offsets[m][i] = norm > 0 ? spec.domain_shift * dir[i] / norm : 0.0;
  }

  std::vector<DomainDataset> out;
  for (std::size_t m = 0; m < num_domains; ++m) {
    DomainDataset ds;
    ds.domain_id = static_cast<std::uint32_t>(m + 1);
    ds.labels_visible = (m == 0);
    auto emit = [&](std::size_t cluster, ClassLabel truth) {
      std::vector<double> mu = means[cluster];
      for (std::size_t i = 0; i < d; ++i) mu[i] += offsets[m][i];
      for (std::size_t s = 0; s < spec.samples_per_class; ++s)
        ds.samples.push_back({detail::draw_sample(mu, spec.cluster_std, rng), ds.domain_id, truth});
    };
    for (std::size_t k = 0; k < spec.num_known; ++k) emit(k, ClassLabel::known(static_cast<std::uint32_t>(k)));
    if (m > 0) {
      for (std::size_t j = 0; j < spec.open_per_domain; ++j) {
        const std::size_t cluster = spec.num_known + (m - 1) * spec.open_per_domain + j;
        ds.open_cluster_ids.push_back(static_cast<std::uint32_t>(cluster));
        emit(cluster, ClassLabel::open());
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

/// Seeded split into (train, holdout) with round(n * holdout_fraction) holdout samples.
inline std::pair<DomainDataset, DomainDataset> split_holdout(const DomainDataset& ds, double holdout_fraction,
                                                             std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(ds.size())));
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
  DomainDataset train{ds.domain_id, {}, ds.labels_visible, ds.open_cluster_ids};
  DomainDataset hold{ds.domain_id, {}, ds.labels_visible, ds.open_cluster_ids};
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? hold : train).samples.push_back(ds.samples[idx[i]]);
  return {std::move(train), std::move(hold)};
}

enum class FeatureFormat { csv, binary };

inline constexpr char kFeatureMagic[9] = "IOSDFEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline FeatureFormat format_for_path(const std::filesystem::path& p) {
  return p.extension() == ".csv" ? FeatureFormat::csv : FeatureFormat::binary;
}

inline void save_features(const DomainDataset& ds, const std::filesystem::path& path, FeatureFormat format) {
  const std::size_t d = ds.feat_dim();
  if (format == FeatureFormat::csv) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    for (std::size_t i = 0; i < d; ++i) os << 'f' << i << ',';
    os << "label,domain\n";
    char buf[32];
    for (const auto& s : ds.samples) {
      for (double v : s.features) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf << ',';
      }
      os << s.truth.code() << ',' << s.domain_id << '\n';
    }
    if (!os) throw DataError("write failed: " + path.string());
    return;
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  binio::put_magic(os, kFeatureMagic);
  binio::put_uint<std::uint32_t>(os, kFeatureVersion);
  binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  binio::put_uint<std::uint64_t>(os, ds.samples.size());
  for (const auto& s : ds.samples) {
    for (double v : s.features) binio::put_f32(os, static_cast<float>(v));
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(static_cast<std::int32_t>(s.truth.code())));
    binio::put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(s.domain_id));
  }
  if (!os) throw DataError("write failed: " + path.string());
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw DataError(where + ": bad number '" + s + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& s, const std::string& where) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError(where + ": bad integer '" + s + "'");
  return v;
}

inline void finish_loaded(DomainDataset& ds, const std::string& path) {
  if (ds.samples.empty()) throw DataError(path + ": empty dataset");
  ds.domain_id = ds.samples.front().domain_id;
  for (const auto& s : ds.samples)
    if (s.domain_id != ds.domain_id) throw DataError(path + ": mixed domain ids in one file");
  if (ds.domain_id < 1) throw DataError(path + ": domain ids are 1-based");
  ds.labels_visible = (ds.domain_id == 1);
}

inline DomainDataset load_csv(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + p);
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw DataError(p + ": empty dataset");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "domain")
    throw DataError(p + ": malformed header, expected f0,...,f{d-1},label,domain");
  const std::size_t d = header.size() - 2;
  for (std::size_t i = 0; i < d; ++i)
    if (header[i] != "f" + std::to_string(i)) throw DataError(p + ": malformed header column '" + header[i] + "'");
  DomainDataset ds;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = p + ":" + std::to_string(lineno);
    if (cells.size() != d + 2)
      throw DataError(where + ": row has " + std::to_string(cells.size()) + " cells, expected " + std::to_string(d + 2));
    FeatureSample s;
    s.features.resize(d);
    for (std::size_t i = 0; i < d; ++i) s.features[i] = parse_real(cells[i], where);
    s.truth = ClassLabel::from_code(parse_int(cells[d], where));
    const auto dom = parse_int(cells[d + 1], where);
    if (dom < 1) throw DataError(where + ": domain ids are 1-based");
    s.domain_id = static_cast<std::uint32_t>(dom);
    ds.samples.push_back(std::move(s));
  }
  finish_loaded(ds, p);
  return ds;
}

inline DomainDataset load_binary(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + p);
  if (is.peek() == std::char_traits<char>::eof()) throw DataError(p + ": empty dataset");
  binio::expect_magic(is, kFeatureMagic, p);
  const auto version = binio::get_uint<std::uint32_t>(is, "version");
  if (version != kFeatureVersion) throw DataError(p + ": unsupported version " + std::to_string(version));
  const auto d = binio::get_uint<std::uint32_t>(is, "feat_dim");
  const auto count = binio::get_uint<std::uint64_t>(is, "count");
  if (d == 0) throw DataError(p + ": malformed header, feat_dim is 0");
  DomainDataset ds;
  ds.samples.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    FeatureSample s;
    s.features.resize(d);
    for (double& v : s.features) v = static_cast<double>(binio::get_f32(is, "feature"));
    const auto code = static_cast<std::int32_t>(binio::get_uint<std::uint32_t>(is, "label"));
    s.truth = ClassLabel::from_code(code);
    s.domain_id = binio::get_uint<std::uint16_t>(is, "domain");
    ds.samples.push_back(std::move(s));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError(p + ": trailing bytes after declared records");
  finish_loaded(ds, p);
  return ds;
}

}  // namespace detail

/// Format is sniffed from the magic bytes, falling back to CSV.
inline DomainDataset load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char head[8] = {};
  is.read(head, 8);
  const bool binary = is.gcount() == 8 && std::equal(head, head + 8, kFeatureMagic);
  is.close();
  return binary ? detail::load_binary(path) : detail::load_csv(path);
}

}  // namespace iosda
