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

// Pipeline stages over a run directory: sample -> train -> verify ->
// simulate. Every stage re-hashes its inputs and checks them against the
// manifest written upstream, so a run directory carries a hash chain
// config -> datasets -> weights -> certificate.

#pragma once

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltaiss/common.hpp"
#include "deltaiss/config.hpp"
#include "deltaiss/lmi.hpp"
#include "deltaiss/rollout.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/trainer.hpp"
#include "deltaiss/verifier.hpp"

namespace deltaiss {

namespace fs = std::filesystem;

inline constexpr const char* kConfigFile = "config.cfg";
inline constexpr const char* kSampleManifest = "sample_manifest.json";
inline constexpr const char* kTrainManifest = "train_manifest.json";
inline constexpr const char* kCertificateFile = "certificate.json";
inline constexpr const char* kRolloutFile = "rollouts.json";

inline std::string run_file(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

inline std::string config_hash(const RunConfig& cfg) { return sha256_hex(serialize_config(cfg)); }

inline nlohmann::json read_json(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kProvenance, path + ": malformed JSON (" + e.what() + ")");
  }
}

/// Config stored in a run directory.
inline RunConfig load_run_config(const std::string& dir) {
  const std::string path = run_file(dir, kConfigFile);
  require(fs::exists(path), ErrorKind::kProvenance, path + " is missing; run 'sample' first");
  return load_config(path);
}

/// Minimal distance between distinct points of a grid cover: per axis, the
/// smallest gap between consecutive coordinates.
inline double grid_min_separation(const CoverDataset& ds) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < ds.dim(); ++i) {
    std::vector<double> c;
    c.reserve(ds.count());
    for (const auto& p : ds.points) c.push_back(p[i]);
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    for (std::size_t k = 1; k < c.size(); ++k) best = std::min(best, c[k] - c[k - 1]);
  }
  return best;
}

// ---- sample -------------------------------------------------------------------

struct SampleOutcome {
  CoverDataset xs, ws;
  AuditResult audit_x, audit_w;
  bool pass() const { return audit_x.pass && audit_w.pass; }
};

inline nlohmann::ordered_json audit_json(const AuditResult& a, const CoverDataset& ds,
                                         std::size_t trials) {
  return {{"pass", a.pass}, {"worst", a.worst}, {"eps", ds.eps}, {"trials", trials}};
}

inline SampleOutcome stage_sample(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  fs::create_directories(dir);
  const SystemSpec sys = cfg.system();
  SampleOutcome out;
  out.xs = cover_box(sys.state_box, cfg.hp.eps_x, cfg.cover_cap);
  out.ws = cover_box(sys.external_box, cfg.hp.eps_u, cfg.cover_cap);
  out.audit_x = covering_audit(out.xs, cfg.audit_trials, substream_seed(cfg.hp.seed, "sampling.x"));
  out.audit_w = covering_audit(out.ws, cfg.audit_trials, substream_seed(cfg.hp.seed, "sampling.w"));

  const std::string text = serialize_config(cfg);
  write_file(run_file(dir, kConfigFile), text);
  const std::string hx = save_dataset(out.xs, run_file(dir, "xs"), "x");
  const std::string hw = save_dataset(out.ws, run_file(dir, "ws"), "w");
  nlohmann::ordered_json m;
  m["stage"] = "sample";
  m["config_hash"] = sha256_hex(text);
  m["datasets"] = {{"xs", {{"hash", hx}, {"count", out.xs.count()}}},
                   {"ws", {{"hash", hw}, {"count", out.ws.count()}}}};
  m["audit"] = {{"xs", audit_json(out.audit_x, out.xs, cfg.audit_trials)},
                {"ws", audit_json(out.audit_w, out.ws, cfg.audit_trials)}};
  write_file(run_file(dir, kSampleManifest), m.dump(2) + "\n");
  return out;
}

// ---- chain checks -------------------------------------------------------------

struct LoadedDatasets {
  CoverDataset xs, ws;
  std::string hash_x, hash_w, sample_manifest_hash;
};

/// Datasets of a run, checked against config and sample manifest.
inline LoadedDatasets load_checked_datasets(const RunConfig& cfg, const std::string& dir) {
  const std::string mpath = run_file(dir, kSampleManifest);
  require(fs::exists(mpath), ErrorKind::kProvenance, mpath + " is missing; run 'sample' first");
  LoadedDatasets d;
  d.sample_manifest_hash = sha256_hex(read_file(mpath));
  const auto m = read_json(mpath);
  require(m.at("config_hash").get<std::string>() == config_hash(cfg), ErrorKind::kProvenance,
          "config does not match the one the datasets were sampled with");
  for (const char* name : {"xs", "ws"}) {
    const std::string base = run_file(dir, name);
    require(fs::exists(base + ".csv") && fs::exists(base + ".meta.json"), ErrorKind::kProvenance,
            "dataset " + base + ".csv is missing");
  }
  d.xs = load_dataset(run_file(dir, "xs"), &d.hash_x);
  d.ws = load_dataset(run_file(dir, "ws"), &d.hash_w);
  require(m.at("datasets").at("xs").at("hash").get<std::string>() == d.hash_x &&
              m.at("datasets").at("ws").at("hash").get<std::string>() == d.hash_w,
          ErrorKind::kProvenance, "datasets do not match the sample manifest");
  return d;
}

// ---- train --------------------------------------------------------------------

inline LmiStatus final_lmi_status(const RunConfig& cfg, const SystemSpec& sys, const MlpParams& v,
                                  const MlpParams& g, const Vec& lambda_v, const Vec& lambda_g) {
  LmiContext cv = LmiContext::make(v, lyapunov_lmi_bound(cfg.hp, sys));
  LmiContext cg = LmiContext::make(g, cfg.hp.lip.controller);
  require(lambda_v.size() == cv.lambda_sqrt.size() && lambda_g.size() == cg.lambda_sqrt.size(),
          ErrorKind::kProvenance, "multiplier length does not match the network");
  require((lambda_v.array() >= 0).all() && (lambda_g.array() >= 0).all(),
          ErrorKind::kProvenance, "multipliers must be non-negative");
  cv.lambda_sqrt = lambda_v.cwiseSqrt();
  cg.lambda_sqrt = lambda_g.cwiseSqrt();
  return lmi_status(cv, cg);
}

/// The convergence checklist as printable lines.
inline std::vector<std::string> training_checklist(const TrainedPair& p, const LmiStatus& lmi,
                                                   double tol) {
  auto mark = [](bool ok) { return ok ? "[x] " : "[ ] "; };
  const auto& f = p.last_full;
  return {
      std::string(mark(f.total <= tol)) + "L_total = " + format_double(f.total) +
          " <= residual_tol " + format_double(tol),
      std::string(mark(f.loss_v == 0.0)) + "L_v = " + format_double(f.loss_v) + " (eta = " +
          format_double(p.eta) + ")",
      std::string(mark(lmi.v.is_pd)) + "Lyapunov LMI positive definite",
      std::string(mark(lmi.g.is_pd)) + "controller LMI positive definite",
      "reason: " + p.reason,
  };
}

inline std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vec from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct TrainOutcome {
  TrainedPair pair;
  LmiStatus lmi;
};

inline TrainOutcome stage_train(const RunConfig& cfg, const std::string& dir, int threads = 1,
                                const Trainer::Observer& observer = nullptr) {
  const SystemSpec sys = cfg.system();
  const LoadedDatasets data = load_checked_datasets(cfg, dir);
  HyperParams hp = cfg.hp;
  hp.threads = threads;
  TrainOutcome out;
  out.pair = train(sys, data.xs, data.ws, hp, observer);
  const TrainedPair& p = out.pair;
  out.lmi = final_lmi_status(cfg, sys, p.v_net, p.g_net, p.lambda_v, p.lambda_g);

  const auto vj = mlp_to_json(p.v_net);
  const auto gj = mlp_to_json(p.g_net);
  write_file(run_file(dir, "v.json"), vj.dump(2) + "\n");
  write_file(run_file(dir, "g.json"), gj.dump(2) + "\n");
  const std::string log = training_log_csv(p.history);
  write_file(run_file(dir, "training_log.csv"), log);
  write_file(run_file(dir, "timing.csv"), timing_csv(p.history, p.wall_seconds));

  nlohmann::ordered_json m;
  m["stage"] = "train";
  m["config_hash"] = config_hash(cfg);
  m["sample_manifest_hash"] = data.sample_manifest_hash;
  m["datasets"] = {{"xs", data.hash_x}, {"ws", data.hash_w}};
  m["weights"] = {{"v", vj["content_hash"]}, {"g", gj["content_hash"]}};
  m["training_log_hash"] = sha256_hex(log);
  m["lambda_v"] = to_std(p.lambda_v);
  m["lambda_g"] = to_std(p.lambda_g);
  m["eta"] = p.eta;
  m["converged"] = p.converged;
  m["reason"] = p.reason;
  m["epochs_run"] = p.epochs_run;
  const auto& f = p.last_full;
  m["final"] = {{"L0", f.sub[0]}, {"L1", f.sub[1]}, {"L2", f.sub[2]}, {"L3", f.sub[3]},
                {"L4", f.sub[4]}, {"L_total", f.total}, {"L_v", f.loss_v}, {"L_M", f.loss_m}};
  m["lmi"] = {{"lyapunov_pd", out.lmi.v.is_pd}, {"controller_pd", out.lmi.g.is_pd}};
  write_file(run_file(dir, kTrainManifest), m.dump(2) + "\n");
  return out;
}

struct LoadedNets {
  MlpParams v, g;
  Vec lambda_v, lambda_g;
  std::string hash_v, hash_g, train_manifest_hash;
  nlohmann::json manifest;
};

/// Trained networks, checked against the train manifest and upstream chain.
inline LoadedNets load_checked_nets(const RunConfig& cfg, const std::string& dir,
                                    const LoadedDatasets& data) {
  const std::string mpath = run_file(dir, kTrainManifest);
  require(fs::exists(mpath), ErrorKind::kProvenance, mpath + " is missing; run 'train' first");
  LoadedNets n;
  n.train_manifest_hash = sha256_hex(read_file(mpath));
  n.manifest = read_json(mpath);
  const auto& m = n.manifest;
  require(m.at("config_hash").get<std::string>() == config_hash(cfg), ErrorKind::kProvenance,
          "config does not match the one the networks were trained with");
  require(m.at("sample_manifest_hash").get<std::string>() == data.sample_manifest_hash &&
              m.at("datasets").at("xs").get<std::string>() == data.hash_x &&
              m.at("datasets").at("ws").get<std::string>() == data.hash_w,
          ErrorKind::kProvenance, "datasets changed since training");
  for (const char* name : {"v.json", "g.json"}) {
    require(fs::exists(run_file(dir, name)), ErrorKind::kProvenance,
            run_file(dir, name) + " is missing");
  }
  n.v = mlp_from_json(read_json(run_file(dir, "v.json")));
  n.g = mlp_from_json(read_json(run_file(dir, "g.json")));
  n.hash_v = mlp_content_hash(n.v);
  n.hash_g = mlp_content_hash(n.g);
  require(m.at("weights").at("v").get<std::string>() == n.hash_v &&
              m.at("weights").at("g").get<std::string>() == n.hash_g,
          ErrorKind::kProvenance, "weights do not match the train manifest");
  n.lambda_v = from_std(m.at("lambda_v").get<std::vector<double>>());
  n.lambda_g = from_std(m.at("lambda_g").get<std::vector<double>>());
  return n;
}

// ---- verify -------------------------------------------------------------------

struct VerifyOptions {
  std::optional<EtaMode> mode;   // overrides verify.mode
  std::optional<bool> force;     // overrides verify.force
  int threads = 1;
};

/// Lower bound on any eta satisfying both bound families at the closest
/// sampled pair: k1 d^g1 - eta <= V <= k2 d^g2 + eta.
inline double near_pair_eta_floor(const ClassKBundle& b, double d) {
  return 0.5 * (classk_eval(b, ClassK::kA1, d) - classk_eval(b, ClassK::kA2, d));
}

inline Certificate stage_verify(const RunConfig& cfg, const std::string& dir,
                                const VerifyOptions& opt = {}) {
  const SystemSpec sys = cfg.system();
  const LoadedDatasets data = load_checked_datasets(cfg, dir);
  const LoadedNets nets = load_checked_nets(cfg, dir, data);
  const EtaMode mode = opt.mode.value_or(cfg.mode);
  const bool force = opt.force.value_or(cfg.force);
  const std::uint64_t total = constraint_total(data.xs.count(), data.ws.count());
  const std::uint64_t planned =
      mode.kind == EtaMode::kExhaustive ? total : std::min<std::uint64_t>(total, mode.count);
  if (static_cast<double>(planned) > cfg.force_threshold && !force) {
    fail(ErrorKind::kCapacity, std::to_string(planned) + " constraint evaluations exceed " +
                                   format_double(cfg.force_threshold) + "; pass --force");
  }

  const BarrierFn bf(sys.state_box);
  CertificateInputs in;
  in.eta = evaluate_eta(sys, nets.v, nets.g, data.xs, data.ws, cfg.hp.bundle, bf, mode,
                        opt.threads);
  in.lipschitz = composite_lipschitz(cfg.hp.lip, cfg.hp.bundle, sys);
  in.eps_x = cfg.hp.eps_x;
  in.eps_u = cfg.hp.eps_u;
  in.lmi = final_lmi_status(cfg, sys, nets.v, nets.g, nets.lambda_v, nets.lambda_g);
  in.hashes = {{"config", config_hash(cfg)},
               {"xs", data.hash_x},
               {"ws", data.hash_w},
               {"v", nets.hash_v},
               {"g", nets.hash_g},
               {"train_manifest", nets.train_manifest_hash}};
  in.expected = {{"v", nets.manifest.at("weights").at("v").get<std::string>()},
                 {"g", nets.manifest.at("weights").at("g").get<std::string>()}};
  in.reference = cfg.reference;
  if (!in.lmi->both_pd()) {
    in.notes.push_back("an LMI is not positive definite: the Lipschitz targets are not certified");
  }
  in.notes.push_back("diag_residual=" + format_double(in.eta.diag_residual) +
                     ": V(x,x)=0 is imposed on samples only; the margin does not cover the "
                     "continuum equality");
  if (data.xs.count() >= 2) {
    const double d = grid_min_separation(data.xs);
    const double floor = near_pair_eta_floor(cfg.hp.bundle, d);
    in.notes.push_back("closest sample pair d=" + format_double(d) +
                       " forces eta >= " + format_double(floor) +
                       " for the lower/upper bound families with a shared eta");
  }
  Certificate cert = issue_certificate(in);
  write_file(run_file(dir, kCertificateFile), cert.dump());
  return cert;
}

// ---- simulate -----------------------------------------------------------------

struct SimulateOutcome {
  double median_gap_ratio = 0;
  double median_nonincreasing = 0;
  std::size_t pairs = 0;
  std::size_t starts = 0;
  std::size_t exit_events = 0;
  std::size_t exiting_rollouts = 0;
  double showcase_ratio = 0;  // gap(K) / gap(0) of the shared-input showcase pair
  double band = 0;            // late gap under different constant inputs
};

inline SimulateOutcome stage_simulate(const RunConfig& cfg, const std::string& dir,
                                      int threads = 1) {
  const SystemSpec sys = cfg.system();
  const LoadedDatasets data = load_checked_datasets(cfg, dir);
  const LoadedNets nets = load_checked_nets(cfg, dir, data);
  const auto steps = static_cast<std::size_t>(cfg.sim_steps);
  Rng rng(substream_seed(cfg.hp.seed, "simulate"));
  SimulateOutcome out;

  // Paired rollouts with shared external sequences.
  std::vector<RolloutJob> jobs;
  for (int i = 0; i < cfg.sim_pairs; ++i) {
    const Vec a = rng.uniform_in(sys.state_box);
    const Vec b = rng.uniform_in(sys.state_box);
    const auto w = uniform_inputs(sys.external_box, steps, rng.next());
    jobs.push_back({a, w});
    jobs.push_back({b, w});
  }
  const auto paired = run_rollouts(sys, nets.g, jobs, threads);
  std::vector<std::vector<DivergencePoint>> series;
  std::vector<double> fractions;
  for (std::size_t i = 0; i + 1 < paired.size(); i += 2) {
    series.push_back(divergence_metrics(paired[i], paired[i + 1], nets.v));
    fractions.push_back(nonincreasing_fraction(series.back()));
  }
  out.pairs = series.size();
  out.median_gap_ratio = median_gap_ratio(series);
  std::sort(fractions.begin(), fractions.end());
  out.median_nonincreasing = fractions[fractions.size() / 2];

  // Invariance: independent rollouts from random interior starts.
  std::vector<RolloutJob> starts;
  for (int i = 0; i < cfg.sim_starts; ++i) {
    const Vec x0 = rng.uniform_in(sys.state_box);
    starts.push_back({x0, uniform_inputs(sys.external_box, steps, rng.next())});
  }
  const auto singles = run_rollouts(sys, nets.g, starts, threads);
  for (const auto& t : singles) {
    out.exit_events += t.exits.size();
    out.exiting_rollouts += t.exits.empty() ? 0 : 1;
  }
  out.starts = singles.size();

  // Showcase pairs: symmetric starts mid -+ min(1, 0.8 half-width) (x0 = -+1
  // on the scalar plant), shared vs. different constant inputs.
  const Vec xmid = 0.5 * (sys.state_box.lo + sys.state_box.hi);
  const Vec xoff = (0.4 * (sys.state_box.hi - sys.state_box.lo)).cwiseMin(1.0);
  const Vec xa = xmid - xoff;
  const Vec xb = xmid + xoff;
  const Vec wmid = 0.5 * (sys.external_box.lo + sys.external_box.hi);
  const Vec wspan = 0.5 * (sys.external_box.hi - sys.external_box.lo);
  const auto shared = uniform_inputs(sys.external_box, steps, substream_seed(cfg.hp.seed, "showcase"));
  const Trajectory sa = simulate(sys, nets.g, xa, shared, nets.hash_g);
  const Trajectory sb = simulate(sys, nets.g, xb, shared, nets.hash_g);
  const auto same = divergence_metrics(sa, sb, nets.v);
  out.showcase_ratio = same.back().gap / same.front().gap;
  const Trajectory da = simulate(sys, nets.g, xa, constant_inputs(wmid + 0.2 * wspan, steps), nets.hash_g);
  const Trajectory db = simulate(sys, nets.g, xb, constant_inputs(wmid - 0.1 * wspan, steps), nets.hash_g);
  const auto diff = divergence_metrics(da, db, nets.v);
  for (std::size_t k = diff.size() - std::max<std::size_t>(1, diff.size() / 10); k < diff.size(); ++k) {
    out.band = std::max(out.band, diff[k].gap);
  }

  write_file(run_file(dir, "trajectory_a.csv"), trajectory_csv(sa));
  write_file(run_file(dir, "trajectory_b.csv"), trajectory_csv(sb));
  write_file(run_file(dir, "metrics_shared.csv"), metrics_csv(same));
  write_file(run_file(dir, "metrics_constant.csv"), metrics_csv(diff));
  auto to_series = [](const std::string& label, const std::vector<DivergencePoint>& s, bool v) {
    SvgSeries out{label, {}, {}};
    for (const auto& d : s) {
      out.x.push_back(static_cast<double>(d.k));
      out.y.push_back(v ? d.v : d.gap);
    }
    return out;
  };
  write_file(run_file(dir, "gap.svg"),
             svg_line_chart("state gap", "k", "|x - x^|",
                            {to_series("same inputs", same, false),
                             to_series("different constant inputs", diff, false)},
                            true));
  write_file(run_file(dir, "lyapunov.svg"),
             svg_line_chart("V along the shared-input pair", "k", "V(x, x^)",
                            {to_series("V", same, true)}));

  nlohmann::ordered_json m;
  m["stage"] = "simulate";
  m["config_hash"] = config_hash(cfg);
  m["train_manifest_hash"] = nets.train_manifest_hash;
  m["controller_hash"] = nets.hash_g;
  m["steps"] = cfg.sim_steps;
  m["pairs"] = out.pairs;
  m["median_gap_ratio"] = detail::number(out.median_gap_ratio);
  m["median_nonincreasing_fraction"] = out.median_nonincreasing;
  m["starts"] = out.starts;
  m["exit_events"] = out.exit_events;
  m["exiting_rollouts"] = out.exiting_rollouts;
  m["showcase_gap_ratio"] = detail::number(out.showcase_ratio);
  m["constant_input_band"] = detail::number(out.band);
  write_file(run_file(dir, kRolloutFile), m.dump(2) + "\n");
  return out;
}

}  // namespace deltaiss
