#pragma once

// Open-set scoring and forgetting.
//
//   per-class accuracy  correct / total within each truth class (open = slot K)
//   OS                  mean of the K+1 per-class accuracies
//   OS*                 mean of the K known-class accuracies
//   F(domain)           (1/T) Σ_{k=1..T} (A_{k+1} − A_k) over a domain's T+1 evaluations
//   A(domain)           mean of the domain's accuracies over every evaluation timestamp
//
// Truth classes with no samples are excluded from the means and reported.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "iosda/datahub.hpp"
#include "iosda/errors.hpp"

namespace iosda {

struct OsScores {
  double os = 0.0;
  double os_star = 0.0;
  std::vector<double> per_class;            // K+1 entries, NaN for absent classes
  std::vector<std::size_t> missing_classes;  // slots with zero truth samples
};

inline OsScores os_scores(std::span<const ClassLabel> predicted, std::span<const ClassLabel> truth,
                          std::size_t num_known) {
  if (predicted.size() != truth.size()) throw DimensionError("os_scores: prediction/truth count mismatch");
  std::vector<std::size_t> total(num_known + 1, 0), correct(num_known + 1, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].is_hidden()) throw DataError("os_scores: truth must be known or open");
    const std::size_t t = truth[i].slot(num_known);
    ++total[t];
    if (predicted[i].slot(num_known) == t) ++correct[t];
  }
  OsScores s;
  s.per_class.assign(num_known + 1, std::numeric_limits<double>::quiet_NaN());
  double sum_all = 0.0, sum_known = 0.0;
  std::size_t n_all = 0, n_known = 0;
  for (std::size_t c = 0; c <= num_known; ++c) {
    if (total[c] == 0) {
      s.missing_classes.push_back(c);
      continue;
    }
    const double acc = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    s.per_class[c] = acc;
    sum_all += acc;
    ++n_all;
    if (c < num_known) {
      sum_known += acc;
      ++n_known;
    }
  }
  s.os = n_all ? sum_all / static_cast<double>(n_all) : std::numeric_limits<double>::quiet_NaN();
  s.os_star = n_known ? sum_known / static_cast<double>(n_known) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

inline double forgetting(std::span<const double> acc) {
  if (acc.size() < 2) throw DataError("forgetting: need at least two evaluations");
  const double T = static_cast<double>(acc.size() - 1);
  double sum = 0.0;
  for (std::size_t k = 0; k + 1 < acc.size(); ++k) sum += acc[k + 1] - acc[k];
  return sum / T;
}

struct MetricRecord {
  std::uint32_t timestamp = 0;
  std::uint32_t domain_id = 0;
  double os = 0.0;
  double os_star = 0.0;
  std::vector<double> per_class;
};

inline MetricRecord make_record(std::uint32_t timestamp, std::uint32_t domain, const OsScores& s) {
  return {timestamp, domain, s.os, s.os_star, s.per_class};
}

struct DomainSummary {
  std::uint32_t domain_id = 0;
  std::size_t evaluations = 0;
  double a_os = 0.0;
  double a_os_star = 0.0;
  std::optional<double> f_os;  // defined with >= 2 evaluations
  std::optional<double> f_os_star;
};

struct ForgettingReport {
  std::vector<DomainSummary> domains;  // ascending domain id
  double mean_a_os = 0.0;
  double mean_a_os_star = 0.0;
  std::optional<double> mean_f_os;
  std::optional<double> mean_f_os_star;
};

inline ForgettingReport summarize(std::span<const MetricRecord> log) {
  std::map<std::uint32_t, std::map<std::uint32_t, const MetricRecord*>> by_domain;
  for (const auto& r : log) by_domain[r.domain_id][r.timestamp] = &r;
  ForgettingReport rep;
  double f_sum = 0.0, fs_sum = 0.0;
  std::size_t f_n = 0;
  for (const auto& [dom, series] : by_domain) {
    std::vector<double> os, os_star;
    for (const auto& [t, r] : series) {
      os.push_back(r->os);
      os_star.push_back(r->os_star);
    }
    DomainSummary d;
    d.domain_id = dom;
    d.evaluations = os.size();
    for (double v : os) d.a_os += v / static_cast<double>(os.size());
    for (double v : os_star) d.a_os_star += v / static_cast<double>(os_star.size());
    if (os.size() >= 2) {
      d.f_os = forgetting(os);
      d.f_os_star = forgetting(os_star);
      f_sum += *d.f_os;
      fs_sum += *d.f_os_star;
      ++f_n;
    }
    rep.mean_a_os += d.a_os;
    rep.mean_a_os_star += d.a_os_star;
    rep.domains.push_back(d);
  }
  if (!rep.domains.empty()) {
    rep.mean_a_os /= static_cast<double>(rep.domains.size());
    rep.mean_a_os_star /= static_cast<double>(rep.domains.size());
  }
  if (f_n) {
    rep.mean_f_os = f_sum / static_cast<double>(f_n);
    rep.mean_f_os_star = fs_sum / static_cast<double>(f_n);
  }
  return rep;
}

namespace detail {

inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_real(*v) : "NA"; }

inline double parse_metric(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  return parse_real(s, "metrics.csv");
}

}  // namespace detail

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRecord> log,
                              std::size_t num_known) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "timestamp,domain,OS,OS_star";
  for (std::size_t c = 0; c <= num_known; ++c) os << ",acc_c" << c;
  os << '\n';
  for (const auto& r : log) {
    os << r.timestamp << ',' << r.domain_id << ',' << detail::fmt_real(r.os) << ',' << detail::fmt_real(r.os_star);
    for (double a : r.per_class) os << ',' << detail::fmt_real(a);
    os << '\n';
  }
}

inline std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty metrics file");
  const auto header = detail::split_csv(line);
  if (header.size() < 5 || header[0] != "timestamp" || header[1] != "domain" || header[2] != "OS" ||
      header[3] != "OS_star")
    throw DataError(path.string() + ": malformed metrics header");
  std::vector<MetricRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) throw DataError(path.string() + ": ragged metrics row");
    MetricRecord r;
    r.timestamp = static_cast<std::uint32_t>(detail::parse_int(cells[0], path.string()));
    r.domain_id = static_cast<std::uint32_t>(detail::parse_int(cells[1], path.string()));
    r.os = detail::parse_metric(cells[2]);
    r.os_star = detail::parse_metric(cells[3]);
    for (std::size_t i = 4; i < cells.size(); ++i) r.per_class.push_back(detail::parse_metric(cells[i]));
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_forgetting_csv(const std::filesystem::path& path, const ForgettingReport& rep) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "domain,A_OS,F_OS,A_OSstar,F_OSstar\n";
  for (const auto& d : rep.domains)
    os << d.domain_id << ',' << detail::fmt_real(d.a_os) << ',' << detail::fmt_opt(d.f_os) << ','
       << detail::fmt_real(d.a_os_star) << ',' << detail::fmt_opt(d.f_os_star) << '\n';
  os << "AVG," << detail::fmt_real(rep.mean_a_os) << ',' << detail::fmt_opt(rep.mean_f_os) << ','
     << detail::fmt_real(rep.mean_a_os_star) << ',' << detail::fmt_opt(rep.mean_f_os_star) << '\n';
}

/// Aligned text table, one row per domain plus AVG, values in percent.
inline std::string format_table(const ForgettingReport& rep) {
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%8.2f", 100.0 * v);
    return std::string(buf);
  };
  auto pct_opt = [&](const std::optional<double>& v) { return v ? pct(*v) : std::string("      --"); };
  std::ostringstream os;
  os << "domain      OS:A     OS:F    OS*:A    OS*:F\n";
  for (const auto& d : rep.domains) {
    char name[16];
    std::snprintf(name, sizeof name, "D%-6u", d.domain_id);
    os << name << ' ' << pct(d.a_os) << ' ' << pct_opt(d.f_os) << ' ' << pct(d.a_os_star) << ' '
       << pct_opt(d.f_os_star) << '\n';
  }
  os << "AVG    " << ' ' << pct(rep.mean_a_os) << ' ' << pct_opt(rep.mean_f_os) << ' ' << pct(rep.mean_a_os_star)
     << ' ' << pct_opt(rep.mean_f_os_star) << '\n';
  return os.str();
}

}  // namespace iosda
