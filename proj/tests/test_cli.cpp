// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "arec/cli.hpp"
#include "arec/error.hpp"
#include "support/toy_project.hpp"

namespace fs = std::filesystem;
namespace cli = arec::cli;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "arec");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("arec_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"train"}).code, 2);  // --config missing
  EXPECT_EQ(run({"--config", "x.json", "fly"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, MissingConfigAndInvalidConfig) {
  const auto dir = fresh_dir("invalid");
  auto r = run({"--config", (dir / "nope.json").string(), "ingest"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope.json"), std::string::npos);

  auto cfg = toy_project::small_config();
  cfg["attribution"]["fraction"] = 1.5;
  const auto path = toy_project::write(dir, cfg);
  EXPECT_EQ(run({"--config", path.string(), "ingest"}).code, 2);
  cfg = toy_project::small_config();
  cfg.erase("seed");
  toy_project::write(dir, cfg);
  EXPECT_EQ(run({"--config", path.string(), "ingest"}).code, 2);
  fs::remove_all(dir);
}

TEST(Cli, AttributeWithoutCheckpointNamesThePath) {
  const auto dir = fresh_dir("nockpt");
  const auto path = toy_project::write(dir, toy_project::small_config());
  ASSERT_EQ(run({"--config", path.string(), "ingest"}).code, 0);
  const auto r = run({"--config", path.string(), "attribute"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find((dir / "out" / "checkpoints" / "model.ckpt").string()), std::string::npos) << r.err;
  fs::remove_all(dir);
}

TEST(Cli, ConfigRoundTrip) {
  const auto dir = fresh_dir("roundtrip");
  const auto path = toy_project::write(dir, toy_project::small_config());
  const auto c = cli::load_config(path);
  EXPECT_EQ(c.paths.midi_dir, (fs::absolute(dir) / "midi").lexically_normal());
  EXPECT_EQ(c.ingest.rightsholders.at("b.mid"), "beta");
  const auto again = cli::parse_config(cli::to_json(c), fs::absolute(dir));
  EXPECT_EQ(cli::to_json(again), cli::to_json(c));
  fs::remove_all(dir);
}

TEST(Cli, StagesAndPipelineConserve) {
  const auto dir = fresh_dir("stages");
  const auto path = toy_project::write(dir, toy_project::small_config());
  const std::string cfg = path.string();
  for (const char* stage : {"ingest", "train", "generate", "attribute"}) {
    const auto r = run({"--config", cfg, stage});
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
  }
  const auto lds = run({"--config", cfg, "evaluate-lds", "--fraction", "0.5", "--subsets", "3"});
  ASSERT_EQ(lds.code, 0) << lds.err;
  const auto summary = nlohmann::json::parse(lds.out);
  EXPECT_EQ(summary.at("fraction"), 0.5);
  EXPECT_EQ(summary.at("subsets"), 3);
  EXPECT_TRUE(fs::exists(dir / "out" / "eval" / "lds.json"));

  ASSERT_EQ(run({"--config", cfg, "evaluate-style"}).code, 0);
  const auto settle = run({"--config", cfg, "settle"});
  ASSERT_EQ(settle.code, 0) << settle.err;

  const auto csv = slurp(dir / "out" / "statements" / "2026-01.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "period,pool_id,rightsholder_id,amount_cents");
  long long total = 0;
  while (std::getline(lines, line)) total += std::stoll(line.substr(line.rfind(',') + 1));
  EXPECT_EQ(total, 8801 + 1203);
  EXPECT_TRUE(fs::exists(dir / "out" / "statements" / "2026-01.audit.json"));

  // The full pipeline in a second directory reproduces the same statement.
  const auto other = dir / "again";
  const auto p = run({"--config", cfg, "--artifact-dir", other.string(), "--subsets", "3", "pipeline"});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(slurp(other / "statements" / "2026-01.csv"), csv);
  fs::remove_all(dir);
}
