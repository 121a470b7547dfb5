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

// Human-readable summary of one run directory or of a directory of runs.
// Output depends only on the artifacts read, never on time or paths
// outside the report root.

#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "deltaiss/pipeline.hpp"

namespace deltaiss {

struct ReportOutput {
  std::string text;
  std::vector<std::pair<std::string, std::string>> charts;  // file name, SVG
  std::size_t runs = 0;
};

namespace detail {

inline bool is_run_dir(const fs::path& p) { return fs::exists(p / kConfigFile); }

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : split(read_file(path), '\n')) {
    if (!line.empty()) rows.push_back(split(line, ','));
  }
  return rows;
}

inline std::string fmt(const nlohmann::json& v) {
  if (v.is_number()) return format_double(v.get<double>());
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline void summarize_run(const fs::path& dir, const std::string& name, ReportOutput& out) {
  std::ostringstream s;
  s << "== run " << name << "\n";
  std::vector<std::string> missing;
  try {
    const RunConfig cfg = load_run_config(dir.string());
    s << "plant: " << cfg.plant << "  eps_x=" << format_double(cfg.hp.eps_x)
      << "  eps_u=" << format_double(cfg.hp.eps_u) << "  seed=" << cfg.hp.seed << "\n";
  } catch (const Error& e) {
    s << "config: unreadable (" << e.what() << ")\n";
  }

  const fs::path sample = dir / kSampleManifest;
  if (fs::exists(sample)) {
    const auto m = read_json(sample.string());
    s << "datasets: N=" << fmt(m["datasets"]["xs"]["count"])
      << " M=" << fmt(m["datasets"]["ws"]["count"]) << "  covering audit "
      << (m["audit"]["xs"]["pass"].get<bool>() && m["audit"]["ws"]["pass"].get<bool>() ? "pass"
                                                                                      : "FAIL")
      << "\n";
  } else {
    missing.push_back(kSampleManifest);
  }

  const fs::path log = dir / "training_log.csv";
  const fs::path train = dir / kTrainManifest;
  if (fs::exists(train)) {
    const auto m = read_json(train.string());
    const auto& f = m["final"];
    s << "training: epochs=" << fmt(m["epochs_run"]) << " converged="
      << (m["converged"].get<bool>() ? "true" : "false") << " reason=" << fmt(m["reason"])
      << "\n  final L_total=" << fmt(f["L_total"]) << " (L0..L4 = " << fmt(f["L0"]) << ", "
      << fmt(f["L1"]) << ", " << fmt(f["L2"]) << ", " << fmt(f["L3"]) << ", " << fmt(f["L4"])
      << ")  L_v=" << fmt(f["L_v"]) << "  eta=" << fmt(m["eta"]) << "\n  LMI pd: lyapunov="
      << (m["lmi"]["lyapunov_pd"].get<bool>() ? "yes" : "no")
      << " controller=" << (m["lmi"]["controller_pd"].get<bool>() ? "yes" : "no") << "\n";
  } else {
    missing.push_back(kTrainManifest);
  }
  if (fs::exists(log)) {
    const auto rows = read_csv(log.string());
    SvgSeries total{"L_total", {}, {}}, eta{"eta", {}, {}};
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() < 11 || rows[i][1] == "full") continue;
      const double e = parse_double(rows[i][0]);
      total.x.push_back(e);
      total.y.push_back(parse_double(rows[i][7]));
      eta.x.push_back(e);
      eta.y.push_back(parse_double(rows[i][10]));
    }
    out.charts.push_back({name + "_loss.svg",
                          svg_line_chart(name + ": batch loss", "epoch", "L_total", {total}, true)});
    out.charts.push_back({name + "_eta.svg", svg_line_chart(name + ": eta", "epoch", "eta", {eta})});
  } else {
    missing.push_back("training_log.csv");
  }

  const fs::path cert = dir / kCertificateFile;
  if (fs::exists(cert)) {
    const auto c = read_json(cert.string());
    const auto& lt = c["L_terms"];
    s << "certificate: mode=" << fmt(c["mode"]["kind"]) << " eta*=" << fmt(c["eta_star"])
      << " (" << fmt(c["eta_witness"]["family"]) << ")  diag_residual=" << fmt(c["diag_residual"])
      << "\n  L terms = [" << fmt(lt["values"][0]) << ", " << fmt(lt["values"][1]) << ", "
      << fmt(lt["values"][2]) << ", " << fmt(lt["values"][3])
      << "]  decrease factor=" << fmt(lt["decrease_factor"]) << "  L=" << fmt(c["L"])
      << "  eps=" << fmt(c["eps"]) << "\n  margin=" << fmt(c["margin"])
      << "  valid=" << (c["valid"].get<bool>() ? "true" : "false") << "\n";
    if (c.contains("reference") && !c["reference"].is_null()) {
      s << "  reference margin=" << fmt(c["reference"]["margin"]) << "\n";
    }
    for (const auto& n : c["notes"]) s << "  note: " << fmt(n) << "\n";
  } else {
    missing.push_back(kCertificateFile);
  }

  const fs::path roll = dir / kRolloutFile;
  if (fs::exists(roll)) {
    const auto r = read_json(roll.string());
    s << "rollouts: median gap(K)/gap(0)=" << fmt(r["median_gap_ratio"]) << " over "
      << fmt(r["pairs"]) << " pairs; exits " << fmt(r["exit_events"]) << " in "
      << fmt(r["starts"]) << " rollouts of " << fmt(r["steps"]) << " steps"
      << "; showcase gap ratio " << fmt(r["showcase_gap_ratio"])
      << "; constant-input band " << fmt(r["constant_input_band"]) << "\n";
    if (fs::exists(dir / "metrics_shared.csv")) {
      const auto rows = read_csv((dir / "metrics_shared.csv").string());
      SvgSeries gap{"gap", {}, {}};
      for (std::size_t i = 1; i < rows.size(); ++i) {
        gap.x.push_back(parse_double(rows[i][0]));
        gap.y.push_back(parse_double(rows[i][1]));
      }
      out.charts.push_back(
          {name + "_gap.svg", svg_line_chart(name + ": paired gap", "k", "gap", {gap}, true)});
    }
  } else {
    missing.push_back(kRolloutFile);
  }
  if (!missing.empty()) {
    s << "incomplete run; missing:";
    for (const auto& m : missing) s << " " << m;
    s << "\n";
  }
  out.text += s.str();
  ++out.runs;
}

}  // namespace detail

/// Summarizes `root` if it is a run directory, else every run directory
/// directly inside it (in name order).
inline ReportOutput build_report(const std::string& root) {
  ReportOutput out;
  require(fs::is_directory(root), ErrorKind::kIo, root + " is not a directory");
  const fs::path base(root);
  if (detail::is_run_dir(base)) {
    fs::path norm = base.lexically_normal();
    if (norm.filename().empty()) norm = norm.parent_path();
    std::string name = norm.filename().string();
    if (name.empty() || name == "." || name == "..") name = "run";
    detail::summarize_run(base, name, out);
  } else {
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(base)) {
      if (e.is_directory() && detail::is_run_dir(e.path())) runs.push_back(e.path());
    }
    std::sort(runs.begin(), runs.end());
    for (const auto& r : runs) detail::summarize_run(r, r.filename().string(), out);
  }
  if (out.runs == 0) out.text = "nothing to report\n";
  return out;
}

/// Writes summary.txt and the charts into `root`.
inline ReportOutput stage_report(const std::string& root) {
  ReportOutput out = build_report(root);
  if (out.runs == 0) return out;
  write_file(run_file(root, "summary.txt"), out.text);
  for (const auto& [name, svg] : out.charts) write_file(run_file(root, name), svg);
  return out;
}

}  // namespace deltaiss
