#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "iosda/config.hpp"

using namespace iosda;
namespace fs = std::filesystem;

namespace {

struct Proc {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

Proc run_cli(const std::string& args) {
  const std::string cmd = std::string(IOSDA_CLI) + " " + args + " 2>&1";
  Proc p;
  FILE* f = popen(cmd.c_str(), "r");
  if (!f) return p;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), f)) p.out += buf.data();
  const int st = pclose(f);
  p.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "iosda_cli_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small but complete pipeline settings.
const char* kTinyConfig =
    "# tiny run\n"
    "synth.samples_per_class=20\n"
    "mdcgan.z_dim=16\n"
    "mdcgan.gen_hidden=32\n"
    "mdcgan.disc_hidden=32\n"
    "mdcgan.epochs=2\n"
    "meosda.extractor_dims=32,16\n"
    "meosda.head_hidden=8\n"
    "meosda.epochs=2\n"
    "pipeline.replay_per_class=10\n"
    "log.verbosity=0\n";

fs::path write_tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream(p) << kTinyConfig;
  return p;
}

}  // namespace

TEST(Config, ParsesFileTextAndRejectsUnknownKeys) {
  RunConfig cfg;
  std::istringstream ok("seed = 7\n\n# comment\nmeosda.epochs=12\ndata.files=a.csv,b.csv\nmdcgan.replay_open_class=false\n");
  apply_config_text(cfg, ok, "test");
  EXPECT_EQ(cfg.timeline.seed, 7u);
  EXPECT_EQ(cfg.timeline.meosda.epochs, 12u);
  EXPECT_EQ(cfg.timeline.files, (std::vector<std::string>{"a.csv", "b.csv"}));
  EXPECT_FALSE(cfg.timeline.gan.replay_open_class);

  std::istringstream unknown("meosda.epoch=3\n");
  try {
    apply_config_text(cfg, unknown, "cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("meosda.epoch"), std::string::npos);
  }
  EXPECT_THROW(apply_assignment(cfg, "seed"), ConfigError);
  EXPECT_THROW(apply_assignment(cfg, "seed=-1"), ConfigError);
  EXPECT_THROW(apply_assignment(cfg, "pipeline.threshold=high"), ConfigError);
  EXPECT_THROW(apply_assignment(cfg, "mdcgan.replay_open_class=maybe"), ConfigError);
}

TEST(Config, SnapshotRoundTrips) {
  RunConfig cfg;
  apply_assignment(cfg, "pipeline.threshold=0.1");
  apply_assignment(cfg, "meosda.adv_weight=0.3");
  apply_assignment(cfg, "pipeline.replay_trained_only=false");
  apply_assignment(cfg, "output.dir=/tmp/x");
  const fs::path p = scratch_dir("snapshot") / "config.txt";
  save_config(cfg, p);
  const RunConfig back = load_config(p);
  EXPECT_EQ(config_snapshot(back), config_snapshot(cfg));
  EXPECT_EQ(back.timeline.threshold, 0.1);
  EXPECT_EQ(back.timeline.meosda.adv_weight, 0.3);
  EXPECT_FALSE(back.timeline.replay_trained_only);
  for (const auto& k : config_keys()) EXPECT_FALSE(k.help.empty()) << k.name;
}

TEST(Config, EnvSeedIsAFallback) {
  RunConfig cfg;
  setenv("IOSDA_SEED", "42", 1);
  apply_env_seed(cfg);
  unsetenv("IOSDA_SEED");
  EXPECT_EQ(cfg.timeline.seed, 42u);
}

TEST(Cli, HelpListsCommandsAndKeys) {
  const auto top = run_cli("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* c : {"gen-synth", "run", "eval", "grad-check", "export-embeddings"})
    EXPECT_NE(top.out.find(c), std::string::npos) << c;
  const auto sub = run_cli("run --help");
  EXPECT_EQ(sub.code, 0);
  for (const auto& k : config_keys()) EXPECT_NE(sub.out.find(k.name), std::string::npos) << k.name;
}

TEST(Cli, MissingConfigFails) {
  const auto p = run_cli("run --config /nonexistent/iosda.cfg");
  EXPECT_NE(p.code, 0);
  EXPECT_NE(p.out.find("/nonexistent/iosda.cfg"), std::string::npos) << p.out;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("run --set no.such.key=1").code, 1);
  const fs::path dir = scratch_dir("codes");
  std::ofstream(dir / "bad.csv") << "f0,label,domain\n";
  EXPECT_EQ(run_cli("run --set data.source=files --set data.files=" + (dir / "bad.csv").string() + "," +
                    (dir / "bad.csv").string() + " -o " + (dir / "r").string())
                .code,
            2);
}

TEST(Cli, GradCheckPasses) {
  const auto p = run_cli("grad-check --seed 3");
  EXPECT_EQ(p.code, 0) << p.out;
  EXPECT_EQ(p.out.find("FAIL"), std::string::npos);
}

TEST(Cli, GenSynthWritesEveryDomain) {
  const fs::path dir = scratch_dir("gen");
  const auto p = run_cli("gen-synth --set synth.samples_per_class=5 -o " + dir.string());
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_EQ(count_lines(slurp(dir / "domain_1.csv")), 1u + 4 * 5);
  EXPECT_EQ(count_lines(slurp(dir / "domain_3.csv")), 1u + 6 * 5);
  const auto b = run_cli("gen-synth --set synth.samples_per_class=5 -f binary -o " + dir.string());
  ASSERT_EQ(b.code, 0);
  EXPECT_TRUE(fs::exists(dir / "domain_2.bin"));
}

TEST(Cli, RunIsReproducibleAndCompleteAndFeedsEvalAndExport) {
  const fs::path dir = scratch_dir("run");
  const fs::path cfg = write_tiny_config(dir);
  const fs::path a = dir / "a", b = dir / "b";
  const auto ra = run_cli("run -c " + cfg.string() + " --seed 7 -o " + a.string());
  ASSERT_EQ(ra.code, 0) << ra.out;
  const auto rb = run_cli("run -c " + cfg.string() + " --seed 7 -o " + b.string());
  ASSERT_EQ(rb.code, 0) << rb.out;
  const std::string metrics = slurp(a / "metrics.csv");
  EXPECT_EQ(metrics, slurp(b / "metrics.csv"));
  // Header plus one row per (timestamp, seen target domain): t2 -> 1, t3 -> 2.
  EXPECT_EQ(count_lines(metrics), 1u + 3u);
  EXPECT_EQ(count_lines(slurp(a / "forgetting.csv")), 1u + 2u + 1u);
  for (const char* f : {"config.txt", "predictions_t2.csv", "predictions_t3.csv", "embeddings_t3.csv",
                        "checkpoints/t1/mdcgan_manifest.txt", "checkpoints/t3/meosda_manifest.txt"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  EXPECT_NE(slurp(a / "config.txt").find("seed=7\n"), std::string::npos);

  // The snapshot alone reproduces the run.
  const fs::path c = dir / "c";
  const auto rc = run_cli("run -c " + (a / "config.txt").string() + " -o " + c.string());
  ASSERT_EQ(rc.code, 0) << rc.out;
  EXPECT_EQ(slurp(c / "metrics.csv"), metrics);

  const auto ev = run_cli("eval " + a.string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_EQ(ev.out, ra.out);
  EXPECT_NE(ev.out.find("AVG"), std::string::npos);

  const fs::path emb = dir / "emb.csv";
  const auto ex = run_cli("export-embeddings " + a.string() + " -t 3 -o " + emb.string());
  ASSERT_EQ(ex.code, 0) << ex.out;
  EXPECT_EQ(slurp(emb), slurp(a / "embeddings_t3.csv"));
  EXPECT_NE(run_cli("export-embeddings " + a.string() + " -t 1").code, 0);
}

TEST(Cli, SeedListRunsIntoSubdirectories) {
  const fs::path dir = scratch_dir("seeds");
  const fs::path cfg = write_tiny_config(dir);
  const auto p = run_cli("run -c " + cfg.string() + " --seeds 1,2 -j 2 -o " + dir.string());
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_TRUE(fs::exists(dir / "seed_1" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "seed_2" / "metrics.csv"));
  EXPECT_NE(slurp(dir / "seed_2" / "config.txt").find("seed=2\n"), std::string::npos);
}
