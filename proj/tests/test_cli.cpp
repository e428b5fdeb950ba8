#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "flowfill_cli_test";

struct CliRun {
  int exit = -1;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun run(const std::string& args, const std::string& env = "") {
  const fs::path err = kRoot / "stderr.txt";
  const std::string cmd = env + " " + std::string(FLOWFILL_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

// Small enough that the whole pipeline runs in a few seconds.
const char* kTinyConfig = R"({
  "synth": {"num_utterances": 24, "min_chars": 6, "max_chars": 10, "test_fraction": 0.25, "mel_dim": 4,
            "speakers": [{"stretch": 1.0}, {"stretch": 2.0}]},
  "audio_model": {"layers": 2, "heads": 2, "model_dim": 8, "ffn_dim": 16, "char_dim": 4},
  "dur_infill": {"layers": 2, "heads": 2, "model_dim": 8, "ffn_dim": 16, "embed_dim": 4},
  "dur_prompted": {"layers": 2, "heads": 2, "model_dim": 8, "ffn_dim": 16, "head_dim": 8,
                   "prompt_frames": 6, "min_prompt_frames": 3},
  "train_audio": {"total_steps": 6, "warmup_steps": 2, "batch_frames": 100},
  "train_dur": {"total_steps": 6, "warmup_steps": 2, "batch_frames": 100},
  "eval": {"ode_steps": 2, "max_utterances": 3},
  "toy2d": {"steps": 20, "warmup": 2, "batch": 16, "samples": 50, "ode_steps": 4, "hidden": 8}
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot / "cfg");
    std::ofstream(kRoot / "cfg" / "flowfill.json") << kTinyConfig;
  }
  static std::string env() { return "FLOWFILL_CONFIG_DIR=" + (kRoot / "cfg").string(); }
  static std::string dir(const std::string& name) { return (kRoot / name).string(); }
};

std::size_t lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string s;
  while (std::getline(in, s))
    if (!s.empty()) ++n;
  return n;
}

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").exit, 2);
  const CliRun r = run("synth-data");
  EXPECT_EQ(r.exit, 2);
  EXPECT_NE(r.err.find("code=USAGE"), std::string::npos) << r.err;
  EXPECT_EQ(run("frobnicate").exit, 2);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  CliRun r = run("synth-data --out " + dir("c1") + " --set synth.bogus=1", env());
  EXPECT_EQ(r.exit, 2);
  EXPECT_NE(r.err.find("error code=CONFIG exit=2"), std::string::npos) << r.err;
  r = run("synth-data --out " + dir("c2") + " --config missing.json", env());
  EXPECT_EQ(r.exit, 2);
  r = run("synth-data --out " + dir("c3") + " --set mask.p_full=0.9", env());
  EXPECT_EQ(r.exit, 2);
}

TEST_F(Cli, ConfigDirectoryFromEnvironment) {
  ASSERT_EQ(run("synth-data --out " + dir("env"), env()).exit, 0);
  EXPECT_EQ(lines(kRoot / "env" / "train.tsv") + lines(kRoot / "env" / "test.tsv"), 24u);
  EXPECT_EQ(lines(kRoot / "env" / "test.tsv"), 6u);
  EXPECT_TRUE(fs::exists(kRoot / "env" / "resolved_config.json"));
  ASSERT_EQ(run("synth-data --out " + dir("noenv") + " --set synth.num_utterances=10").exit, 0);
  EXPECT_EQ(lines(kRoot / "noenv" / "train.tsv") + lines(kRoot / "noenv" / "test.tsv"), 10u);
}

TEST_F(Cli, RefusesToOverwriteWithoutForce) {
  ASSERT_EQ(run("synth-data --out " + dir("ow"), env()).exit, 0);
  const CliRun r = run("synth-data --out " + dir("ow"), env());
  EXPECT_EQ(r.exit, 2);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  std::ofstream(kRoot / "ow" / "stale.txt") << "x";
  EXPECT_EQ(run("synth-data --force --out " + dir("ow"), env()).exit, 0);
  EXPECT_FALSE(fs::exists(kRoot / "ow" / "stale.txt"));
}

TEST_F(Cli, MissingDataIsDataError) {
  const CliRun r = run("filter --data " + dir("nowhere") + " --out " + dir("f"), env());
  EXPECT_EQ(r.exit, 3);
  EXPECT_NE(r.err.find("code=DATA"), std::string::npos) << r.err;
}

TEST_F(Cli, PipelineIsDeterministic) {
  for (const std::string tag : {"a", "b"}) {
    const std::string d = dir("p" + tag);
    ASSERT_EQ(run("synth-data --out " + d + "/data", env()).exit, 0);
    ASSERT_EQ(run("filter --data " + d + "/data --out " + d + "/filtered", env()).exit, 0);
    ASSERT_EQ(run("train-audio --data " + d + "/filtered --out " + d + "/audio", env()).exit, 0);
    ASSERT_EQ(run("train-dur --style infill --data " + d + "/filtered --out " + d + "/di", env()).exit, 0);
    ASSERT_EQ(run("train-dur --style prompted --data " + d + "/filtered --out " + d + "/dp", env()).exit, 0);
    const std::string models = " --data " + d + "/filtered --audio " + d + "/audio/audio.ckpt --dur-infill " + d +
                               "/di/dur_infill.ckpt --dur-prompted " + d + "/dp/dur_prompted.ckpt";
    const CliRun ev = run("eval" + models + " --out " + d + "/eval", env());
    ASSERT_EQ(ev.exit, 0) << ev.err;
    const CliRun inf = run("infill" + models + " --utt utt00020 --duration-source prompted --out " + d + "/inf", env());
    ASSERT_EQ(inf.exit, 0) << inf.err;
    ASSERT_EQ(run("toy2d --out " + d + "/toy", env()).exit, 0);
    ASSERT_EQ(run("report --in " + d + "/eval/report.csv --out " + d + "/report.txt").exit, 0);
  }
  for (const char* f : {"data/train.tsv", "data/spec.json", "filtered/filter_report.tsv", "audio/audio.ckpt",
                        "audio/loss.csv", "di/dur_infill.ckpt", "dp/dur_prompted.ckpt", "eval/report.csv",
                        "eval/details.csv", "inf/generated.melf", "inf/result.json", "toy/samples.csv",
                        "report.txt"}) {
    const std::string a = slurp(kRoot / "pa" / f), b = slurp(kRoot / "pb" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
  }
  EXPECT_EQ(lines(kRoot / "pa" / "eval" / "report.csv"), 1u + 3u * 3u);
  EXPECT_NE(slurp(kRoot / "pa" / "report.txt").find("Prompted"), std::string::npos);
}

TEST_F(Cli, DifferentSeedChangesOutputs) {
  ASSERT_EQ(run("synth-data --seed 1 --out " + dir("s1"), env()).exit, 0);
  ASSERT_EQ(run("synth-data --seed 2 --out " + dir("s2"), env()).exit, 0);
  EXPECT_NE(slurp(kRoot / "s1" / "spec.json"), slurp(kRoot / "s2" / "spec.json"));
}

TEST_F(Cli, MissingDurationCheckpointIsConfigError) {
  const std::string d = dir("mc");
  ASSERT_EQ(run("synth-data --out " + d + "/data", env()).exit, 0);
  ASSERT_EQ(run("train-audio --data " + d + "/data --out " + d + "/audio", env()).exit, 0);
  const CliRun r = run("infill --data " + d + "/data --audio " + d +
                        "/audio/audio.ckpt --utt utt00020 --duration-source infill --out " + d + "/inf",
                    env());
  EXPECT_EQ(r.exit, 2);
  EXPECT_NE(r.err.find("checkpoint"), std::string::npos) << r.err;
  const CliRun bad = run("infill --data " + d + "/data --audio " + d + "/data/spec.json --utt utt00020 --out " + d +
                          "/inf2",
                      env());
  EXPECT_EQ(bad.exit, 3);
}

TEST_F(Cli, ReportRejectsMalformedCsv) {
  std::ofstream(kRoot / "bad.csv") << "not,a,report\n";
  const CliRun r = run("report --in " + (kRoot / "bad.csv").string());
  EXPECT_EQ(r.exit, 3);
  EXPECT_NE(r.err.find("code=DATA"), std::string::npos);
}
