#pragma once

// Run directory layout:
//
//   config.txt               key=value snapshot that reproduces the run
//   checkpoints/t{τ}/        GAN and adaptation-model checkpoints after τ
//   metrics.csv              one row per (timestamp, seen target domain)
//   forgetting.csv           per-domain A and F, plus the AVG row
//   predictions_t{τ}.csv     ensemble decisions on every vault holdout
//   embeddings_t{τ}.csv      extractor outputs on every vault holdout

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iosda/config.hpp"
#include "iosda/evalkit.hpp"
#include "iosda/mdcgan.hpp"
#include "iosda/meosda.hpp"
#include "iosda/timeline.hpp"

namespace iosda {

namespace fs = std::filesystem;

inline fs::path checkpoint_dir(const fs::path& run_dir, std::uint32_t timestamp) {
  return run_dir / "checkpoints" / ("t" + std::to_string(timestamp));
}

inline void save_checkpoint(const TimelineState& state, const fs::path& dir) {
  if (state.gan) save_mdcgan(*state.gan, dir);
  if (state.meosda) save_meosda(*state.meosda, dir);
}

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw DataError("cannot open " + p.string() + " for writing");
  return os;
}

inline void put_real(std::ostream& os, double v, const char* fmt) {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  os << buf;
}

}  // namespace detail

/// sample_idx,domain,truth,predicted,chosen_head,agreement_flag,p0..pK
/// (labels as codes: k for known class k, -1 for open).
inline void write_predictions_csv(const fs::path& path, const EvaluationVault& vault,
                                  const std::vector<HoldoutEvaluation>& evals, std::size_t num_known) {
  auto os = detail::open_out(path);
  os << "sample_idx,domain,truth,predicted,chosen_head,agreement_flag";
  for (std::size_t c = 0; c <= num_known; ++c) os << ",p" << c;
  os << '\n';
  for (const auto& e : evals) {
    const auto& ds = vault.holdouts.at(e.domain_id);
    for (std::size_t i = 0; i < e.decisions.size(); ++i) {
      const auto& d = e.decisions[i];
      os << i << ',' << e.domain_id << ',' << ds.samples[i].truth.code() << ',' << d.predicted.code() << ','
         << d.chosen_head << ',' << (d.agreement ? 1 : 0);
      for (double p : d.probs.values()) {
        os << ',';
        detail::put_real(os, p, "%.17g");
      }
      os << '\n';
    }
  }
}

/// sample_idx,domain,truth,e0..e{D-1}: extractor outputs on every vault holdout.
inline void write_embeddings_csv(const fs::path& path, const MeosdaState& model, const EvaluationVault& vault) {
  auto os = detail::open_out(path);
  const std::size_t width = model.config.extractor_dims.back();
  os << "sample_idx,domain,truth";
  for (std::size_t j = 0; j < width; ++j) os << ",e" << j;
  os << '\n';
  for (const auto& [dom, ds] : vault.holdouts) {
    const RealMatrix e = embed(model, ds.feature_matrix());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      os << i << ',' << dom << ',' << ds.samples[i].truth.code();
      for (double v : e.row(i)) {
        os << ',';
        detail::put_real(os, v, "%.9g");
      }
      os << '\n';
    }
  }
}

using RunLog = std::function<void(const std::string&)>;

/// Executes the configured timeline and writes the full run directory.
/// Returns the summary that forgetting.csv was written from.
inline ForgettingReport execute_run(RunConfig cfg, const RunLog& log = {}, const RunLog& detail = {}) {
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  save_config(cfg, dir / "config.txt");
  const auto stream = load_stream(cfg.timeline);
  const std::size_t K = cfg.timeline.num_known;

  auto observer = [&](const TimelineState& st, const EvaluationVault& vault, const std::vector<HoldoutEvaluation>& evals) {
    save_checkpoint(st, checkpoint_dir(dir, st.timestamp));
    if (st.meosda) {
      const std::string t = std::to_string(st.timestamp);
      write_predictions_csv(dir / ("predictions_t" + t + ".csv"), vault, evals, K);
      write_embeddings_csv(dir / ("embeddings_t" + t + ".csv"), *st.meosda, vault);
    }
    for (const auto& e : evals) {
      if (!log) break;
      char buf[96];
      std::snprintf(buf, sizeof buf, "[t%u] domain %u  OS=%.4f  OS*=%.4f", st.timestamp, e.domain_id, e.scores.os,
                    e.scores.os_star);
      log(buf);
    }
  };
  const RunResult res = run(cfg.timeline, stream, observer, log, detail);
  for (std::size_t t = 0; t < res.audits.size(); ++t)
    if (!res.audits[t].empty()) throw DataError("retention audit failed after timestamp " + std::to_string(t + 1) + ": " +
                                                res.audits[t].front());
  write_metrics_csv(dir / "metrics.csv", res.state.metrics, K);
  const ForgettingReport rep = summarize(res.state.metrics);
  write_forgetting_csv(dir / "forgetting.csv", rep);
  return rep;
}

/// Rebuilds embeddings_t{τ}.csv content from config.txt and the τ checkpoint.
inline void export_embeddings(const fs::path& run_dir, std::uint32_t timestamp, const fs::path& out) {
  RunConfig cfg = load_config(run_dir / "config.txt");
  const auto stream = load_stream(cfg.timeline);
  if (timestamp < 2 || timestamp > stream.size())
    throw ConfigError("export-embeddings: timestamp must lie in [2, " + std::to_string(stream.size()) + "]");
  const fs::path ck = checkpoint_dir(run_dir, timestamp);
  if (!fs::exists(ck / "meosda_manifest.txt")) throw DataError("no adaptation checkpoint in " + ck.string());
  const MeosdaState model = load_meosda(ck);
  write_embeddings_csv(out, model, rebuild_vault(cfg.timeline, stream, timestamp));
}

}  // namespace iosda
