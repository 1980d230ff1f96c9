// iosda: generate data, run the incremental pipeline, score runs.
//
// Exit codes: 0 ok, 1 usage/config, 2 data or I/O, 3 numeric failure.

#include <malloc.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "iosda/config.hpp"
#include "iosda/evalkit.hpp"
#include "iosda/gradcheck.hpp"
#include "iosda/rundir.hpp"

namespace fs = std::filesystem;
using namespace iosda;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> verbosity;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("-c,--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.sets, "override one key, e.g. --set meosda.epochs=10 (repeatable)");
  cmd->add_option("--seed", o.seed, "master seed (default: $IOSDA_SEED, else 0)");
  cmd->add_option("-v,--verbosity", o.verbosity, "0 quiet, 1 progress, 2 per-epoch losses");
}

RunConfig resolve(const CommonOpts& o) {
  RunConfig cfg;
  apply_env_seed(cfg);
  if (!o.config_path.empty()) apply_config_file(cfg, o.config_path);
  for (const auto& s : o.sets) apply_assignment(cfg, s, "--set");
  if (o.seed) cfg.timeline.seed = *o.seed;
  if (o.verbosity) cfg.verbosity = *o.verbosity;
  return cfg;
}

std::mutex g_log_mutex;

RunLog stderr_log(std::string prefix) {
  return [prefix = std::move(prefix)](const std::string& m) {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << prefix << m << '\n';
  };
}

int cmd_run(const CommonOpts& o, const std::string& out, const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  RunConfig base = resolve(o);
  if (!out.empty()) base.out_dir = out;
  base.timeline.validate();

  if (seeds.empty()) {
    const RunLog log = base.verbosity >= 1 ? stderr_log("") : RunLog{};
    const RunLog detail = base.verbosity >= 2 ? stderr_log("") : RunLog{};
    const auto rep = execute_run(base, log, detail);
    std::cout << format_table(rep);
    return kOk;
  }

  // Independent seeds, each into <out>/seed_<s>, at most `jobs` at a time.
  std::atomic<std::size_t> next{0};
  std::atomic<int> worst{kOk};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      RunConfig cfg = base;
      cfg.timeline.seed = seeds[i];
      cfg.out_dir = (fs::path(base.out_dir) / ("seed_" + std::to_string(seeds[i]))).string();
      const std::string tag = "[seed " + std::to_string(seeds[i]) + "] ";
      try {
        execute_run(cfg, cfg.verbosity >= 1 ? stderr_log(tag) : RunLog{}, cfg.verbosity >= 2 ? stderr_log(tag) : RunLog{});
      } catch (const NumericError& e) {
        stderr_log(tag)(std::string("numeric failure: ") + e.what());
        worst = std::max(worst.load(), int{kNumeric});
      } catch (const std::exception& e) {
        stderr_log(tag)(std::string("error: ") + e.what());
        worst = std::max(worst.load(), int{kData});
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 0; j < std::max(1u, jobs); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return worst;
}

int cmd_gen_synth(const CommonOpts& o, const std::string& out, const std::string& format) {
  RunConfig cfg = resolve(o);
  cfg.timeline.data_source = "synthetic";
  const auto stream = load_stream(cfg.timeline);
  fs::create_directories(out);
  const bool csv = format == "csv";
  for (const auto& ds : stream) {
    const fs::path p = fs::path(out) / ("domain_" + std::to_string(ds.domain_id) + (csv ? ".csv" : ".bin"));
    save_features(ds, p, csv ? FeatureFormat::csv : FeatureFormat::binary);
    std::cout << p.string() << "  " << ds.size() << " samples\n";
  }
  return kOk;
}

int cmd_eval(const std::string& run_dir) {
  const auto log = read_metrics_csv(fs::path(run_dir) / "metrics.csv");
  const auto rep = summarize(log);
  write_forgetting_csv(fs::path(run_dir) / "forgetting.csv", rep);
  std::cout << format_table(rep);
  return kOk;
}

int cmd_grad_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_gradcheck(seed)) {
    std::printf("%-4s %-24s checked=%-4zu max_rel_err=%.3e\n", r.pass() ? "PASS" : "FAIL", r.name.c_str(), r.checked,
                r.max_rel_err);
    ok = ok && r.pass();
  }
  return ok ? kOk : kNumeric;
}

std::string key_listing() {
  std::string s = "Config keys (file lines or --set key=value):\n";
  RunConfig defaults;
  for (const auto& k : config_keys()) s += "  " + k.name + " = " + k.get(defaults) + "\n      " + k.help + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep them
  // off mmap so the allocator reuses them.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Incremental open-set domain adaptation with generative replay"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.");

  CommonOpts run_o, gen_o;
  std::string run_out, gen_out = "data", gen_format = "csv", eval_dir, emb_dir, emb_out;
  std::vector<std::uint64_t> seeds;
  unsigned jobs = 1;
  std::uint64_t gc_seed = 0;
  std::uint32_t emb_t = 0;

  auto* run = app.add_subcommand("run", "run the pipeline over the configured domain stream");
  add_common(run, run_o);
  run->add_option("-o,--out", run_out, "run directory (overrides output.dir)");
  run->add_option("--seeds", seeds, "run several seeds, each into <out>/seed_<s>")->delimiter(',');
  run->add_option("-j,--jobs", jobs, "parallel runs when --seeds is given")->check(CLI::PositiveNumber);
  run->footer(key_listing());

  auto* gen = app.add_subcommand("gen-synth", "write the synthetic domain stream as feature files");
  add_common(gen, gen_o);
  gen->add_option("-o,--out", gen_out, "output directory");
  gen->add_option("-f,--format", gen_format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));

  auto* eval = app.add_subcommand("eval", "print the A/F table of a run and rewrite its forgetting.csv");
  eval->add_option("run_dir", eval_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every analytic gradient");
  gc->add_option("--seed", gc_seed, "seed for the random test networks");

  auto* emb = app.add_subcommand("export-embeddings", "recompute extractor outputs on the holdouts at a timestamp");
  emb->add_option("run_dir", emb_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  emb->add_option("-t,--timestamp", emb_t, "timestamp (>= 2)")->required();
  emb->add_option("-o,--out", emb_out, "output CSV (default <run_dir>/embeddings_t<t>.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(run_o, run_out, seeds, jobs);
    if (*gen) return cmd_gen_synth(gen_o, gen_out, gen_format);
    if (*eval) return cmd_eval(eval_dir);
    if (*gc) return cmd_grad_check(gc_seed);
    if (*emb) {
      const fs::path out = emb_out.empty() ? fs::path(emb_dir) / ("embeddings_t" + std::to_string(emb_t) + ".csv") : fs::path(emb_out);
      export_embeddings(emb_dir, emb_t, out);
      std::cout << out.string() << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
