/*
 * Copyright 2026 The deltaiss Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// End-to-end checks of the command-line tool: exit codes and artifacts.

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "deltaiss/pipeline.hpp"

namespace deltaiss {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(DELTAISS_CLI) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Seconds-scale settings for any benchmark.
std::string tiny_config(const std::string& plant, double eps) {
  return "plant.name = " + plant + "\n" +
         "sampling.eps_x = " + format_double(eps) + "\nsampling.eps_u = " + format_double(eps) +
         "\nsampling.audit_trials = 2000\n"
         "net.v_hidden = 6\nnet.g_hidden = 4\nnet.activation = relu\n"
         "train.seed = 3\ntrain.epochs = 4\ntrain.batch_size = 16\ntrain.check_every = 2\n"
         "simulate.steps = 30\nsimulate.pairs = 4\nsimulate.starts = 8\n";
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("deltaiss_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, SampleDeskGrid) {
  const CliResult r = cli("sample --config " + std::string(DELTAISS_CONFIGS) +
                    "/scalar_desk.cfg --out " + path("desk"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("N=197 states"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("M=100 inputs"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(path("desk/xs.csv")));
  EXPECT_TRUE(fs::exists(path("desk/sample_manifest.json")));
}

TEST_F(Cli, CoverAboveCapIsCapacity) {
  const std::string cfg = write("c.cfg", "plant.name = spacecraft\nsampling.eps_x = 1e-9\n");
  EXPECT_EQ(cli("sample --config " + cfg + " --out " + path("r")).code, 4);
}

TEST_F(Cli, BadConfigIsError) {
  const std::string cfg = write("c.cfg", "plant.name = scalar\nbogus.key = 1\n");
  const CliResult r = cli("sample --config " + cfg + " --out " + path("r"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("config line 2"), std::string::npos) << r.out;
}

TEST_F(Cli, MissingUpstreamIsProvenance) {
  const std::string cfg = write("c.cfg", tiny_config("scalar", 0.2));
  EXPECT_EQ(cli("train --config " + cfg + " --out " + path("r")).code, 3);
  ASSERT_EQ(cli("sample --config " + cfg + " --out " + path("r")).code, 0);
  EXPECT_EQ(cli("verify --out " + path("r")).code, 3);
  fs::remove(path("r/xs.csv"));
  EXPECT_EQ(cli("train --out " + path("r")).code, 3);
}

TEST_F(Cli, ConfigOrSeedMismatchIsProvenance) {
  const std::string cfg = write("c.cfg", tiny_config("scalar", 0.2));
  ASSERT_EQ(cli("sample --config " + cfg + " --out " + path("r")).code, 0);
  EXPECT_EQ(cli("train --out " + path("r") + " --seed 99").code, 3);
  const std::string other = write("d.cfg", tiny_config("scalar", 0.25));
  EXPECT_EQ(cli("train --config " + other + " --out " + path("r")).code, 3);
}

TEST_F(Cli, FullChainAndTamper) {
  const std::string cfg = write("c.cfg", tiny_config("scalar", 0.2));
  const std::string out = " --out " + path("r");
  ASSERT_EQ(cli("sample --config " + cfg + out).code, 0);
  const CliResult t = cli("train" + out);
  EXPECT_EQ(t.code, 2) << t.out;  // four epochs do not converge
  EXPECT_TRUE(fs::exists(path("r/train_manifest.json")));
  EXPECT_TRUE(fs::exists(path("r/training_log.csv")));

  const CliResult v = cli("verify" + out);
  EXPECT_EQ(v.code, 1) << v.out;  // a barely trained pair is not certified
  EXPECT_NE(v.out.find("valid = false"), std::string::npos);
  const CliResult a = cli("verify --mode audit:50@4" + out);
  EXPECT_EQ(a.code, 1);
  const auto cert = read_json(path("r/certificate.json"));
  EXPECT_EQ(cert["mode"]["kind"], "audit");
  EXPECT_FALSE(cert["valid"].get<bool>());

  const CliResult s = cli("simulate" + out);
  EXPECT_EQ(s.code, 0) << s.out;
  EXPECT_TRUE(fs::exists(path("r/rollouts.json")));

  // Edit one weight: the content hash no longer matches the manifest.
  auto vj = read_json(path("r/v.json"));
  vj["biases"][0][0] = vj["biases"][0][0].get<double>() + 1e-3;
  std::ofstream(path("r/v.json")) << vj.dump(2);
  EXPECT_EQ(cli("verify" + out).code, 3);
  EXPECT_EQ(cli("simulate" + out).code, 3);
}

TEST_F(Cli, EnumerationThreshold) {
  const std::string cfg =
      write("c.cfg", tiny_config("scalar", 0.2) + "verify.force_threshold = 10\n");
  const std::string out = " --out " + path("r");
  ASSERT_EQ(cli("sample --config " + cfg + out).code, 0);
  cli("train" + out);
  EXPECT_EQ(cli("verify" + out).code, 4);
  EXPECT_EQ(cli("verify --force" + out).code, 1);
  EXPECT_TRUE(fs::exists(path("r/certificate.json")));
}

TEST_F(Cli, ReportEmptyAndMissing) {
  CliResult r = cli("report " + path("nothing_here"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "nothing to report\n");
  r = cli("report " + dir_.string());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "nothing to report\n");
}

TEST_F(Cli, ReportAllBenchmarksDeterministic) {
  const fs::path runs = dir_ / "runs";
  for (const auto& [plant, eps] : std::vector<std::pair<std::string, double>>{
           {"scalar", 0.2}, {"manipulator", 0.6}, {"jet", 0.6}, {"spacecraft", 1.5}}) {
    const std::string cfg = write(plant + ".cfg", tiny_config(plant, eps));
    const std::string out = " --out " + (runs / plant).string();
    ASSERT_EQ(cli("sample --config " + cfg + out).code, 0) << plant;
    cli("train" + out);
    const CliResult v = cli("verify" + out);
    ASSERT_TRUE(v.code == 0 || v.code == 1) << plant << v.out;
    ASSERT_EQ(cli("simulate" + out).code, 0) << plant;
  }
  const CliResult a = cli("report " + runs.string());
  const CliResult b = cli("report " + runs.string());
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  std::size_t margins = 0;
  for (std::size_t p = a.out.find("\n  margin="); p != std::string::npos;
       p = a.out.find("\n  margin=", p + 1)) {
    ++margins;
  }
  EXPECT_EQ(margins, 4u) << a.out;
  EXPECT_EQ(a.out.find("incomplete run"), std::string::npos) << a.out;
  EXPECT_TRUE(fs::exists(runs / "summary.txt"));
  EXPECT_TRUE(fs::exists(runs / "scalar_loss.svg"));
  EXPECT_TRUE(fs::exists(runs / "jet_gap.svg"));
}

}  // namespace
}  // namespace deltaiss
