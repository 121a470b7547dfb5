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

// deltaiss: sample | train | verify | simulate | report
//
// Exit codes: 0 success (verify: certificate valid), 1 failure or invalid
// certificate, 2 training failed / not converged, 3 provenance error,
// 4 capacity (enumeration above the threshold without --force, or a cover
// above the sample cap).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deltaiss/config.hpp"
#include "deltaiss/pipeline.hpp"
#include "deltaiss/report.hpp"

namespace {

using namespace deltaiss;

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool force = false;
  std::string mode;
  int progress = 0;
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kTrainingFailed: return 2;
    case ErrorKind::kProvenance: return 3;
    case ErrorKind::kCapacity: return 4;
    default: return 1;
  }
}

// --out, then output.dir, then $DELTAISS_OUT/<config stem>, then runs/<stem>.
std::string resolve_dir(const Flags& f, const RunConfig* cfg) {
  if (!f.out.empty()) return f.out;
  if (cfg && !cfg->out_dir.empty()) return cfg->out_dir;
  require(!f.config.empty(), ErrorKind::kInvalidArgument, "give --out or --config");
  const std::string stem = std::filesystem::path(f.config).stem().string();
  const char* root = std::getenv("DELTAISS_OUT");
  return (std::filesystem::path(root && *root ? root : "runs") / stem).string();
}

// Config of an existing run; --config and --seed must agree with it.
RunConfig run_config(const Flags& f, std::string& dir) {
  std::optional<RunConfig> given;
  if (!f.config.empty()) given = load_config(f.config);
  dir = resolve_dir(f, given ? &*given : nullptr);
  RunConfig stored = load_run_config(dir);
  if (given) {
    if (f.seed) given->hp.seed = *f.seed;
    require(same_config(*given, stored), ErrorKind::kProvenance,
            f.config + " differs from the config stored in " + dir);
  }
  require(!f.seed || *f.seed == stored.hp.seed, ErrorKind::kProvenance,
          "--seed differs from the seed the run was sampled with");
  return stored;
}

int cmd_sample(const Flags& f) {
  require(!f.config.empty(), ErrorKind::kInvalidArgument, "sample needs --config");
  RunConfig cfg = load_config(f.config);
  if (f.seed) cfg.hp.seed = *f.seed;
  const std::string dir = resolve_dir(f, &cfg);
  const SampleOutcome s = stage_sample(cfg, dir);
  std::printf("%s: N=%zu states (eps_x=%s), M=%zu inputs (eps_u=%s)\n", dir.c_str(),
              s.xs.count(), format_double(cfg.hp.eps_x).c_str(), s.ws.count(),
              format_double(cfg.hp.eps_u).c_str());
  std::printf("covering audit: states %s (worst %s), inputs %s (worst %s)\n",
              s.audit_x.pass ? "pass" : "FAIL", format_double(s.audit_x.worst).c_str(),
              s.audit_w.pass ? "pass" : "FAIL", format_double(s.audit_w.worst).c_str());
  return s.pass() ? 0 : 1;
}

int cmd_train(const Flags& f) {
  std::string dir;
  const RunConfig cfg = run_config(f, dir);
  Trainer::Observer obs;
  if (f.progress > 0) {
    obs = [&](const LogRow& r) {
      if (r.report.kind == "full" || r.report.epoch % f.progress == 0) {
        std::fprintf(stderr, "epoch %d %s L_total=%s L_v=%s eta=%s\n", r.report.epoch,
                     r.report.kind.c_str(), format_double(r.report.total).c_str(),
                     format_double(r.report.loss_v).c_str(), format_double(r.report.eta).c_str());
      }
    };
  }
  const TrainOutcome t = stage_train(cfg, dir, f.threads, obs);
  for (const auto& line : training_checklist(t.pair, t.lmi, cfg.hp.residual_tol)) {
    std::printf("%s\n", line.c_str());
  }
  return t.pair.converged ? 0 : 2;
}

int cmd_verify(const Flags& f) {
  std::string dir;
  const RunConfig cfg = run_config(f, dir);
  VerifyOptions opt;
  if (!f.mode.empty()) opt.mode = detail::parse_mode(f.mode);
  if (f.force) opt.force = true;
  opt.threads = f.threads;
  const Certificate c = stage_verify(cfg, dir, opt);
  std::printf("eta* = %s (%s)\nL = %s\nmargin = %s\nvalid = %s\n",
              format_double(c.doc["eta_star"].get<double>()).c_str(),
              c.doc["eta_witness"]["family"].get<std::string>().c_str(),
              format_double(c.doc["L"].get<double>()).c_str(), format_double(c.margin).c_str(),
              c.valid ? "true" : "false");
  for (const auto& n : c.notes) std::printf("note: %s\n", n.c_str());
  return c.valid ? 0 : 1;
}

int cmd_simulate(const Flags& f) {
  std::string dir;
  const RunConfig cfg = run_config(f, dir);
  const SimulateOutcome s = stage_simulate(cfg, dir, f.threads);
  std::printf("median gap(K)/gap(0) = %s over %zu pairs\n",
              format_double(s.median_gap_ratio).c_str(), s.pairs);
  std::printf("exits: %zu events in %zu of %zu rollouts\n", s.exit_events, s.exiting_rollouts,
              s.starts);
  std::printf("showcase pair gap(K)/gap(0) = %s\n", format_double(s.showcase_ratio).c_str());
  std::printf("constant-input band = %s\n", format_double(s.band).c_str());
  return 0;
}

int cmd_report(const Flags& f, const std::string& positional) {
  std::string root = positional.empty() ? f.out : positional;
  if (root.empty()) {
    const char* env = std::getenv("DELTAISS_OUT");
    root = env && *env ? env : "runs";
  }
  if (!std::filesystem::exists(root)) {
    std::printf("nothing to report\n");
    return 0;
  }
  const ReportOutput r = stage_report(root);
  std::printf("%s", r.text.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural incremental-stability controller synthesis and verification"};
  app.require_subcommand(1);
  Flags f;
  std::uint64_t seed = 0;
  std::string report_dir;

  auto common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", f.config, "run config file");
    sub->add_option("--out", f.out, "run directory (default: $DELTAISS_OUT/<config stem>)");
    sub->add_option("--threads", f.threads, "worker cap")->check(CLI::Range(1, 4096));
  };
  auto* sample = app.add_subcommand("sample", "build and audit the covering datasets");
  common(sample, true);
  auto* sample_seed = sample->add_option("--seed", seed, "override train.seed");
  auto* train = app.add_subcommand("train", "train V and g on the sampled datasets");
  common(train, true);
  auto* train_seed = train->add_option("--seed", seed, "must match the run's seed");
  train->add_option("--progress", f.progress, "print a progress line every N epochs");
  auto* verify = app.add_subcommand("verify", "compute eta* and issue the certificate");
  common(verify, true);
  auto* verify_seed = verify->add_option("--seed", seed, "must match the run's seed");
  verify->add_flag("--force", f.force, "allow enumerations above verify.force_threshold");
  verify->add_option("--mode", f.mode, "exhaustive | audit:<count>[@<seed>]");
  auto* sim = app.add_subcommand("simulate", "closed-loop rollouts and divergence metrics");
  common(sim, true);
  auto* sim_seed = sim->add_option("--seed", seed, "must match the run's seed");
  auto* report = app.add_subcommand("report", "summarize a run directory or a directory of runs");
  report->add_option("dir", report_dir, "run directory or directory of runs");
  report->add_option("--out", f.out, "same as dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  for (auto* opt : {sample_seed, train_seed, verify_seed, sim_seed}) {
    if (opt->count() > 0) f.seed = seed;
  }

  try {
    if (sample->parsed()) return cmd_sample(f);
    if (train->parsed()) return cmd_train(f);
    if (verify->parsed()) return cmd_verify(f);
    if (sim->parsed()) return cmd_simulate(f);
    if (report->parsed()) return cmd_report(f, report_dir);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
