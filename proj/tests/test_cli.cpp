#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "vpl/cli/app.hpp"
#include "vpl/cli/budget.hpp"
#include "vpl/cli/config.hpp"
#include "vpl/numcore/checkpoint.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/trainlab/results.hpp"

using namespace vpl;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult vpl_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

double multiplier_of(const std::string& out) {
  const auto at = out.find("multiplier=");
  return at == std::string::npos ? 0.0 : std::stod(out.substr(at + 11));
}

// Small synthetic task that trains in well under a second per run.
nlohmann::json small_config(std::size_t patients = 12, std::size_t samples = 96) {
  return {
      {"backbone", nlohmann::json(fixtures::tiny_config(2))},
      {"data",
       {{"synthetic",
         {{"domain_tag", "task"}, {"num_classes", 2}, {"num_samples", samples},
          {"patient_count", patients}, {"class_mean_scale", 4.0}, {"noise_std", 0.5}}}}},
      {"train", {{"steps", 20}, {"batch_size", 16}, {"learning_rate", 0.01}, {"eval_every", 10}}},
      {"pretrain", {{"steps", 20}, {"batch_size", 16}, {"eval_every", 10}}},
      {"seed", 3},
  };
}

std::string write_config(const fs::path& dir, const nlohmann::json& j, const std::string& name = "c.json") {
  std::ofstream(dir / name) << j.dump(2);
  return (dir / name).string();
}

struct Fixture : ::testing::Test {
  fs::path dir;
  std::string cfg, general, medical;

  void SetUp() override {
    dir = fixtures::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    cfg = write_config(dir, small_config());
    general = (dir / "g.ckpt").string();
    medical = (dir / "m.ckpt").string();
  }

  void pretrain_both() {
    ASSERT_EQ(vpl_run({"pretrain", "--domain", "general", "--config", cfg, "--out", general}).code, 0);
    ASSERT_EQ(vpl_run({"pretrain", "--domain", "medical", "--config", cfg, "--out", medical}).code, 0);
  }
};

using Cli = Fixture;

}  // namespace

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(vpl_run({}).code, cli::kExitUsage);
  EXPECT_EQ(vpl_run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(vpl_run({"pretrain", "--out", "x.ckpt"}).code, cli::kExitUsage);
  EXPECT_EQ(vpl_run({"params", "--method", "linear", "--tasks", "0"}).code, cli::kExitUsage);
  const CliResult bad = vpl_run({"params", "--method", "lora", "--tasks", "3"});
  EXPECT_EQ(bad.code, cli::kExitUsage);
  EXPECT_NE(bad.err.find("gmoe-adapter"), std::string::npos);
  EXPECT_EQ(vpl_run({"adapt", "--backbone", "/nonexistent.ckpt", "--out", "/tmp/x"}).code,
            cli::kExitUsage);
}

TEST(CliUsage, BinaryForwardsExitCodes) {
  const std::string bin = VPL_BINARY;
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " --help > /dev/null").c_str())), 0);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " pretrain > /dev/null 2>&1").c_str())), 2);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " params --method full --preset vit-b --tasks 19 > /dev/null").c_str())), 0);
}

TEST(CliConfig, StrictKeysAndRoundTrip) {
  auto j = small_config();
  const cli::ExperimentConfig c = cli::parse_experiment(j);
  EXPECT_EQ(cli::experiment_to_json(cli::parse_experiment(cli::experiment_to_json(c))),
            cli::experiment_to_json(c));
  j["traning"] = nlohmann::json::object();
  EXPECT_THROW(cli::parse_experiment(j), ConfigError);
  auto k = small_config();
  k["train"]["seed"] = 4;
  EXPECT_THROW(cli::parse_experiment(k), ConfigError);
  auto e = small_config();
  e["experts"] = {{"radiology", nlohmann::json::object()}};
  EXPECT_THROW(cli::parse_experiment(e), ConfigError);

  const auto dir = fixtures::scratch_dir("cli_cfg");
  j.erase("traning");
  j["data"]["extra"] = 1;
  const std::string path = write_config(dir, j);
  const CliResult r = vpl_run({"adapt", "--backbone", "x", "--config", path, "--out", (dir / "a").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("extra"), std::string::npos);
}

TEST(CliParams, ReferencePresetAndRanking) {
  const CliResult full = vpl_run({"params", "--method", "full", "--preset", "vit-b", "--tasks", "19"});
  ASSERT_EQ(full.code, 0) << full.err;
  EXPECT_NEAR(multiplier_of(full.out), 19.01, 0.01) << full.out;
  EXPECT_NE(full.out.find("shared_backbone=0\n"), std::string::npos);
  const CliResult lin = vpl_run({"params", "--method", "linear", "--preset", "vit-b", "--tasks", "19"});
  EXPECT_NEAR(multiplier_of(lin.out), 1.01, 0.005) << lin.out;

  const CliResult all = vpl_run({"params", "--method", "all", "--preset", "vit-b", "--tasks", "19"});
  ASSERT_EQ(all.code, 0);
  const auto rows = lines_of(all.out);
  ASSERT_EQ(rows.size(), 13u);
  EXPECT_NE(rows[2].find("linear"), std::string::npos);
  EXPECT_NE(rows[12].find("full"), std::string::npos);
}

TEST(CliGradcheck, PassesForEveryMethod) {
  for (Method m : kAllMethods) {
    const CliResult r = vpl_run({"gradcheck", "--method", std::string(method_name(m))});
    EXPECT_EQ(r.code, 0) << method_name(m) << r.out << r.err;
    EXPECT_NE(r.out.find("gradcheck passed"), std::string::npos);
  }
  EXPECT_EQ(vpl_run({"gradcheck", "--method", "gmoe-adapter", "--fusion", "per_block", "--gate", "sigmoid"}).code, 0);
  EXPECT_EQ(vpl_run({"gradcheck", "--method", "gmoe-adapter", "--fusion", "blockwise"}).code, cli::kExitUsage);
}

TEST_F(Cli, PretrainWritesTaggedCheckpoint) {
  const CliResult r = vpl_run({"pretrain", "--domain", "medical", "--config", cfg, "--out", medical});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("domain_tag=medical"), std::string::npos);
  EXPECT_NE(r.out.find("sha256=" + file_sha256(medical)), std::string::npos);
  EXPECT_EQ(load_backbone(medical).domain_tag, "medical");
  EXPECT_EQ(first_line(read_file_bytes(medical + ".history.csv")), "step,loss,eval_accuracy,frozen_sha256");
  EXPECT_EQ(vpl_run({"pretrain", "--domain", "dermatology", "--config", cfg, "--out", medical}).code,
            cli::kExitUsage);
}

TEST_F(Cli, AdaptLinearKeepsBackboneFrozenAndWritesOutputs) {
  pretrain_both();
  const std::string out = (dir / "lin.ckpt").string();
  const CliResult r = vpl_run({"adapt", "--method", "linear", "--backbone", general, "--config", cfg, "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(first_line(read_file_bytes(out + ".results.csv")), kResultsHeader);
  const auto hist = lines_of(read_file_bytes(out + ".history.csv"));
  ASSERT_GE(hist.size(), 3u);
  const std::string hash = hist[1].substr(hist[1].rfind(',') + 1);
  EXPECT_EQ(hash.size(), 64u);
  for (std::size_t i = 2; i < hist.size(); ++i) EXPECT_EQ(hist[i].substr(hist[i].rfind(',') + 1), hash);
  const auto split = nlohmann::json::parse(read_file_bytes(out + ".split.json"));
  EXPECT_TRUE(split.contains("train") && split.contains("test_seen") && split.contains("test_unseen"));
  EXPECT_TRUE(fs::exists(out));
  EXPECT_FALSE(fs::exists(out + ".gates.csv"));

  const CliResult ev = vpl_run({"eval", "--model", out, "--config", cfg});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_EQ(first_line(ev.out), kResultsHeader);
  EXPECT_NE(ev.out.find("linear,"), std::string::npos);
  // Every patient is seen by default, so there is nothing to score on test_unseen.
  const CliResult empty = vpl_run({"eval", "--model", out, "--config", cfg, "--split", "test_unseen"});
  EXPECT_EQ(empty.code, cli::kExitFailure);
  EXPECT_NE(empty.err.find("empty"), std::string::npos) << empty.err;
}

TEST_F(Cli, TwoExpertMethodsNeedBothBackbones) {
  pretrain_both();
  const std::string out = (dir / "gm.ckpt").string();
  const CliResult missing = vpl_run({"adapt", "--method", "gmoe-adapter", "--backbone", general, "--config", cfg, "--out", out});
  EXPECT_EQ(missing.code, cli::kExitUsage);
  EXPECT_NE(missing.err.find("--backbone2"), std::string::npos);
  EXPECT_EQ(vpl_run({"adapt", "--method", "adapter", "--backbone", general, "--backbone2", medical,
                     "--config", cfg, "--out", out}).code,
            cli::kExitUsage);

  // Order of the experts on the command line does not matter.
  const CliResult r = vpl_run({"adapt", "--method", "gmoe-adapter", "--backbone", medical, "--backbone2", general,
                         "--config", cfg, "--out", out, "--seeds", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("gate summary"), std::string::npos);
  EXPECT_EQ(first_line(read_file_bytes(out + ".gates.csv")), "seed,gate,mean,min,max");
  EXPECT_TRUE(fs::exists(dir / "gm.s0.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "gm.s1.ckpt"));
  EXPECT_EQ(load_adapted(dir / "gm.s1.ckpt").expert_tags, (std::vector<std::string>{"general", "medical"}));

  const CliResult ev = vpl_run({"eval", "--model", out, "--config", cfg, "--seeds", "2"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  EXPECT_NE(ev.out.find("mean over 2 runs"), std::string::npos);
}

TEST_F(Cli, DeterministicOutputs) {
  pretrain_both();
  const std::string g2 = (dir / "g2.ckpt").string();
  ASSERT_EQ(vpl_run({"pretrain", "--domain", "general", "--config", cfg, "--out", g2}).code, 0);
  EXPECT_EQ(file_sha256(general), file_sha256(g2));

  std::vector<std::string> hashes;
  for (const char* name : {"a.ckpt", "b.ckpt"}) {
    const std::string out = (dir / name).string();
    ASSERT_EQ(vpl_run({"adapt", "--method", "moe-adapter", "--backbone", general, "--backbone2", medical,
                       "--config", cfg, "--out", out}).code,
              0);
    hashes.push_back(read_file_bytes(out + ".results.csv"));
    hashes.push_back(read_file_bytes(out + ".history.csv"));
  }
  EXPECT_EQ(hashes[0], hashes[2]);
  EXPECT_EQ(hashes[1], hashes[3]);
  EXPECT_EQ(file_sha256(dir / "a.ckpt"), file_sha256(dir / "b.ckpt"));

  const CliResult other = vpl_run({"pretrain", "--domain", "general", "--config", cfg, "--out", g2, "--seed", "9"});
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(file_sha256(general), file_sha256(g2));
}

TEST_F(Cli, SweepSingleBudgetHasNoTrendReport) {
  const CliResult r = vpl_run({"sweep-scaling", "--budgets", "1.05", "--config", cfg, "--seeds", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("trend:"), std::string::npos);
  EXPECT_EQ(first_line(read_file_bytes(dir / "scaling.csv")),
            "budget,achieved_multiplier,plan,dataset,mean_accuracy,seeds");
  EXPECT_EQ(first_line(read_file_bytes(dir / "results.csv")), kResultsHeader);
}

TEST_F(Cli, SweepReportsTrendAcrossBudgets) {
  const CliResult r = vpl_run({"sweep-scaling", "--budgets", "1.01,1.3", "--config", cfg, "--seeds", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("1.01X -> 1.30X"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("trend: "), std::string::npos);
}

TEST_F(Cli, OodSplitsAndTable) {
  const std::string big = write_config(dir, small_config(160, 640), "big.json");
  for (const char* mode : {"1", "2", "3"}) {
    const CliResult r = vpl_run({"ood", "--mode", mode, "--config", big, "--splits-only", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("all splits pass"), std::string::npos);
  }
  const auto hdr = first_line(read_file_bytes(dir / "ood_mode1_splits.md"));
  for (const char* col : {"160/0", "100/60", "80/80", "60/100"}) EXPECT_NE(hdr.find(col), std::string::npos);

  const CliResult r = vpl_run({"ood", "--mode", "2", "--config", big, "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* col : {"80/80", "80/60", "80/40", "80/20"}) EXPECT_NE(r.out.find(col), std::string::npos);
  EXPECT_EQ(first_line(read_file_bytes(dir / "ood_mode2.results.csv")), kResultsHeader);
  EXPECT_EQ(vpl_run({"ood", "--mode", "4", "--config", big}).code, cli::kExitUsage);
  // Too few patients for the protocol.
  EXPECT_NE(vpl_run({"ood", "--mode", "1", "--config", cfg, "--splits-only"}).code, 0);
}

TEST_F(Cli, SynthWritesManifest) {
  const std::string out = (dir / "m.csv").string();
  const CliResult r = vpl_run({"synth", "--config", cfg, "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("96 entries"), std::string::npos);
  EXPECT_EQ(first_line(read_file_bytes(out)), "sample_ref,label,patient_id,modality");
}

TEST(CliHelpers, SeedPathsAndBudgetSearch) {
  EXPECT_EQ(cli::seed_path("out/model.ckpt", 0, 1), "out/model.ckpt");
  EXPECT_EQ(cli::seed_path("out/model.ckpt", 2, 3), "out/model.s2.ckpt");
  EXPECT_EQ(cli::seed_path("model", 1, 2), "model.s1");
  const BackboneConfig c = fixtures::tiny_config(2);
  const auto low = cli::choose_budget_plan(1.0, c, 2, 1);
  EXPECT_EQ(low.plan.method, Method::kLinear);
  double prev = 0.0;
  for (double b : {1.0, 1.05, 1.1, 1.2, 1.3, 1.4}) {
    const auto ch = cli::choose_budget_plan(b, c, 2, 1);
    EXPECT_GE(ch.achieved, prev) << b;
    prev = ch.achieved;
  }
  EXPECT_EQ(cli::budget_label(1.234), "1.23X");
}

TEST(CliConfig, DocumentedExamplesLoadAndMatchSchema) {
  const std::filesystem::path docs = VPL_DOCS_DIR;
  const auto schema = nlohmann::json::parse(std::ifstream(docs / "experiment.schema.json"));
  const auto& top = schema.at("properties");
  std::size_t n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(docs / "examples")) {
    SCOPED_TRACE(entry.path().string());
    EXPECT_NO_THROW(cli::load_experiment(entry.path()));
    const auto doc = nlohmann::json::parse(std::ifstream(entry.path()));
    for (const auto& [key, _] : doc.items()) EXPECT_TRUE(top.contains(key)) << key;
    ++n;
  }
  EXPECT_GE(n, 3u);
  EXPECT_THROW(cli::parse_experiment({{"not_in_schema", 1}}), ConfigError);
  EXPECT_THROW(cli::parse_experiment({{"train", {{"seed", 3}}}}), ConfigError);
}
