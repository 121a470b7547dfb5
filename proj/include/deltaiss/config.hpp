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

// Run configuration: a flat key = value file with dotted section keys.
// '#' starts a comment; blank lines are ignored; every key may appear once.
// Unknown keys are rejected. serialize() writes every key in a fixed order,
// so parse(serialize(c)) == c and serialize is a canonical form to hash.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deltaiss/common.hpp"
#include "deltaiss/sampling.hpp"
#include "deltaiss/systems.hpp"
#include "deltaiss/trainer.hpp"
#include "deltaiss/verifier.hpp"

namespace deltaiss {

inline constexpr double kDefaultForceThreshold = 1e10;

struct RunConfig {
  // plant
  std::string plant = "scalar";
  std::map<std::string, double> plant_params;  // overrides of benchmark constants
  std::optional<std::vector<double>> u_lo, u_hi;  // controller saturation box

  // sampling
  std::size_t cover_cap = kDefaultCoverCap;
  std::size_t audit_trials = 100000;

  // training (eps_x / eps_u live here too)
  HyperParams hp;

  // verification
  EtaMode mode;
  bool force = false;
  double force_threshold = kDefaultForceThreshold;
  std::optional<ReferenceTriple> reference;

  // simulation
  int sim_steps = 2000;
  int sim_pairs = 100;
  int sim_starts = 10000;

  std::string out_dir;  // empty: taken from --out / DELTAISS_OUT / "runs"

  SystemSpec system() const {
    SystemSpec sys = make_benchmark(plant, plant_params);
    if (u_lo || u_hi) {
      require(u_lo && u_hi && u_lo->size() == u_hi->size(), ErrorKind::kInvalidArgument,
              "plant.u_lo and plant.u_hi must be given together with equal length");
      sys.internal_box = Box(Eigen::Map<const Vec>(u_lo->data(), static_cast<Eigen::Index>(u_lo->size())),
                             Eigen::Map<const Vec>(u_hi->data(), static_cast<Eigen::Index>(u_hi->size())));
    }
    sys.validate();
    return sys;
  }

  void validate() const {
    (void)system();
    hp.validate();
    require(cover_cap >= 1 && audit_trials >= 1, ErrorKind::kInvalidArgument,
            "sampling.cap and sampling.audit_trials must be >= 1");
    require(sim_steps >= 0 && sim_pairs >= 1 && sim_starts >= 1, ErrorKind::kInvalidArgument,
            "simulate.steps must be >= 0, simulate.pairs and simulate.starts >= 1");
    require(force_threshold > 0, ErrorKind::kInvalidArgument,
            "verify.force_threshold must be positive");
  }
};

namespace detail {

inline std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v[i]);
  }
  return out;
}

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split(s, ',')) out.push_back(parse_double(part));
  return out;
}

inline std::string format_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(v[i]);
  }
  return out;
}

inline long long parse_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  require(res.ec == std::errc() && res.ptr == t.data() + t.size() && !t.empty(),
          ErrorKind::kInvalidArgument, "not an integer: '" + t + "'");
  return v;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& part : split(s, ',')) {
    const long long v = parse_int(part);
    require(v >= 1 && v <= 1 << 20, ErrorKind::kInvalidArgument, "layer width out of range");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  fail(ErrorKind::kInvalidArgument, "expected true|false, got '" + s + "'");
}

inline EtaMode parse_mode(const std::string& s) {
  if (s == "exhaustive") return EtaMode::exhaustive();
  if (s.rfind("audit:", 0) == 0) {
    const auto parts = split(s.substr(6), '@');
    require(parts.size() <= 2, ErrorKind::kInvalidArgument, "mode: expected audit:<count>[@<seed>]");
    const long long count = parse_int(parts[0]);
    require(count >= 1, ErrorKind::kInvalidArgument, "audit count must be >= 1");
    const long long seed = parts.size() == 2 ? parse_int(parts[1]) : 0;
    return EtaMode::audit(static_cast<std::uint64_t>(count), static_cast<std::uint64_t>(seed));
  }
  fail(ErrorKind::kInvalidArgument, "mode: expected exhaustive or audit:<count>, got '" + s + "'");
}

inline const char* to_string(Reduction r) { return r == Reduction::kSum ? "sum" : "mean"; }

inline Reduction parse_reduction(const std::string& s) {
  if (s == "sum") return Reduction::kSum;
  if (s == "mean") return Reduction::kMean;
  fail(ErrorKind::kInvalidArgument, "reduction: expected sum|mean, got '" + s + "'");
}

inline JacobianMode parse_jacobian(const std::string& s) {
  for (auto m : {JacobianMode::kAuto, JacobianMode::kAnalytic, JacobianMode::kFiniteDifference}) {
    if (s == deltaiss::to_string(m)) return m;
  }
  fail(ErrorKind::kInvalidArgument, "unknown jacobian mode '" + s + "'");
}

struct Field {
  std::string key;
  std::function<std::optional<std::string>(const RunConfig&)> get;  // nullopt: omitted
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::vector<Field> config_fields() {
  std::vector<Field> f;
  auto real = [&f](std::string key, auto member) {
    f.push_back({std::move(key),
                 [member](const RunConfig& c) { return std::optional(format_double(member(const_cast<RunConfig&>(c)))); },
                 [member](RunConfig& c, const std::string& v) { member(c) = parse_double(v); }});
  };
  auto integer = [&f](std::string key, auto member) {
    f.push_back({std::move(key),
                 [member](const RunConfig& c) { return std::optional(std::to_string(member(const_cast<RunConfig&>(c)))); },
                 [member](RunConfig& c, const std::string& v) {
                   using T = std::remove_reference_t<decltype(member(c))>;
                   const long long x = parse_int(v);
                   require(x >= 0 || std::is_signed_v<T>, ErrorKind::kInvalidArgument,
                           "negative value for unsigned key");
                   member(c) = static_cast<T>(x);
                 }});
  };
  auto text = [&f](std::string key, auto get, auto set) {
    f.push_back({std::move(key), [get](const RunConfig& c) { return std::optional<std::string>(get(c)); },
                 std::move(set)});
  };

  text("plant.name", [](const RunConfig& c) { return c.plant; },
       [](RunConfig& c, const std::string& v) { c.plant = v; });
  f.push_back({"plant.u_lo",
               [](const RunConfig& c) { return c.u_lo ? std::optional(format_list(*c.u_lo)) : std::nullopt; },
               [](RunConfig& c, const std::string& v) { c.u_lo = parse_list(v); }});
  f.push_back({"plant.u_hi",
               [](const RunConfig& c) { return c.u_hi ? std::optional(format_list(*c.u_hi)) : std::nullopt; },
               [](RunConfig& c, const std::string& v) { c.u_hi = parse_list(v); }});

  real("sampling.eps_x", [](RunConfig& c) -> double& { return c.hp.eps_x; });
  real("sampling.eps_u", [](RunConfig& c) -> double& { return c.hp.eps_u; });
  integer("sampling.cap", [](RunConfig& c) -> std::size_t& { return c.cover_cap; });
  integer("sampling.audit_trials", [](RunConfig& c) -> std::size_t& { return c.audit_trials; });
  real("sampling.diagonal_fraction", [](RunConfig& c) -> double& { return c.hp.batch.diagonal_fraction; });
  real("sampling.nn_fraction", [](RunConfig& c) -> double& { return c.hp.batch.nn_fraction; });

  text("net.v_hidden", [](const RunConfig& c) { return format_ints(c.hp.v_hidden); },
       [](RunConfig& c, const std::string& v) { c.hp.v_hidden = parse_ints(v); });
  text("net.g_hidden", [](const RunConfig& c) { return format_ints(c.hp.g_hidden); },
       [](RunConfig& c, const std::string& v) { c.hp.g_hidden = parse_ints(v); });
  text("net.activation", [](const RunConfig& c) { return std::string(to_string(c.hp.activation)); },
       [](RunConfig& c, const std::string& v) { c.hp.activation = parse_activation(v); });
  text("net.v_form", [](const RunConfig& c) { return std::string(to_string(c.hp.v_form)); },
       [](RunConfig& c, const std::string& v) { c.hp.v_form = parse_pair_form(v); });
  real("net.init_scale", [](RunConfig& c) -> double& { return c.hp.init_scale; });

  static const char* const kGain[] = {"k1", "k2", "k3", "kw"};
  static const char* const kDegree[] = {"g1", "g2", "g3", "gw"};
  for (int i = 0; i < 4; ++i) {
    real(std::string("classk.") + kGain[i], [i](RunConfig& c) -> double& { return c.hp.bundle.k[i]; });
  }
  for (int i = 0; i < 4; ++i) {
    real(std::string("classk.") + kDegree[i], [i](RunConfig& c) -> double& { return c.hp.bundle.gamma[i]; });
  }
  real("classk.kh", [](RunConfig& c) -> double& { return c.hp.bundle.kh; });

  real("lip.lyapunov", [](RunConfig& c) -> double& { return c.hp.lip.lyapunov; });
  real("lip.controller", [](RunConfig& c) -> double& { return c.hp.lip.controller; });
  real("lip.barrier", [](RunConfig& c) -> double& { return c.hp.lip.barrier; });

  for (int i = 0; i < 5; ++i) {
    real("loss.c" + std::to_string(i), [i](RunConfig& c) -> double& { return c.hp.weights.c[i]; });
  }
  real("loss.cl1", [](RunConfig& c) -> double& { return c.hp.weights.cl1; });
  real("loss.cl2", [](RunConfig& c) -> double& { return c.hp.weights.cl2; });
  real("loss.cv", [](RunConfig& c) -> double& { return c.hp.weights.cv; });
  text("loss.reduction", [](const RunConfig& c) { return std::string(to_string(c.hp.reduction)); },
       [](RunConfig& c, const std::string& v) { c.hp.reduction = parse_reduction(v); });

  integer("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.hp.seed; });
  integer("train.epochs", [](RunConfig& c) -> int& { return c.hp.epochs; });
  integer("train.batch_size", [](RunConfig& c) -> int& { return c.hp.batch_size; });
  integer("train.batches_per_epoch", [](RunConfig& c) -> int& { return c.hp.batches_per_epoch; });
  text("train.optimizer", [](const RunConfig& c) { return std::string(to_string(c.hp.optimizer)); },
       [](RunConfig& c, const std::string& v) { c.hp.optimizer = parse_optimizer(v); });
  real("train.learning_rate", [](RunConfig& c) -> double& { return c.hp.learning_rate; });
  real("train.eta_learning_rate", [](RunConfig& c) -> double& { return c.hp.eta_learning_rate; });
  real("train.lr_final_factor", [](RunConfig& c) -> double& { return c.hp.lr_final_factor; });
  real("train.adam_beta1", [](RunConfig& c) -> double& { return c.hp.adam_beta1; });
  real("train.adam_beta2", [](RunConfig& c) -> double& { return c.hp.adam_beta2; });
  real("train.adam_eps", [](RunConfig& c) -> double& { return c.hp.adam_eps; });
  integer("train.settle_epochs", [](RunConfig& c) -> int& { return c.hp.settle_epochs; });
  real("train.settle_cv", [](RunConfig& c) -> double& { return c.hp.settle_cv; });
  real("train.settle_eta_lr", [](RunConfig& c) -> double& { return c.hp.settle_eta_lr; });
  real("train.residual_tol", [](RunConfig& c) -> double& { return c.hp.residual_tol; });
  integer("train.check_every", [](RunConfig& c) -> int& { return c.hp.check_every; });
  real("train.init_lambda", [](RunConfig& c) -> double& { return c.hp.init_lambda; });
  real("train.init_eta", [](RunConfig& c) -> double& { return c.hp.init_eta; });
  text("train.jacobian", [](const RunConfig& c) { return std::string(to_string(c.hp.jacobian)); },
       [](RunConfig& c, const std::string& v) { c.hp.jacobian = parse_jacobian(v); });
  integer("train.max_backtracks", [](RunConfig& c) -> int& { return c.hp.max_backtracks; });

  text("verify.mode", [](const RunConfig& c) { return c.mode.describe(); },
       [](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); });
  text("verify.force", [](const RunConfig& c) { return std::string(c.force ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.force = parse_bool(v); });
  real("verify.force_threshold", [](RunConfig& c) -> double& { return c.force_threshold; });
  f.push_back({"reference.eta",
               [](const RunConfig& c) -> std::optional<std::string> {
                 return c.reference ? std::optional(format_double(c.reference->eta)) : std::nullopt;
               },
               [](RunConfig& c, const std::string& v) {
                 if (!c.reference) c.reference.emplace();
                 c.reference->eta = parse_double(v);
               }});
  f.push_back({"reference.L",
               [](const RunConfig& c) -> std::optional<std::string> {
                 return c.reference ? std::optional(format_double(c.reference->L)) : std::nullopt;
               },
               [](RunConfig& c, const std::string& v) {
                 if (!c.reference) c.reference.emplace();
                 c.reference->L = parse_double(v);
               }});
  f.push_back({"reference.eps",
               [](const RunConfig& c) -> std::optional<std::string> {
                 return c.reference ? std::optional(format_double(c.reference->eps)) : std::nullopt;
               },
               [](RunConfig& c, const std::string& v) {
                 if (!c.reference) c.reference.emplace();
                 c.reference->eps = parse_double(v);
               }});
  f.push_back({"reference.margin_eps",
               [](const RunConfig& c) -> std::optional<std::string> {
                 return c.reference && c.reference->margin_eps
                            ? std::optional(format_double(*c.reference->margin_eps))
                            : std::nullopt;
               },
               [](RunConfig& c, const std::string& v) {
                 if (!c.reference) c.reference.emplace();
                 c.reference->margin_eps = parse_double(v);
               }});
  f.push_back({"reference.stated_margin",
               [](const RunConfig& c) -> std::optional<std::string> {
                 return c.reference && c.reference->stated_margin
                            ? std::optional(format_double(*c.reference->stated_margin))
                            : std::nullopt;
               },
               [](RunConfig& c, const std::string& v) {
                 if (!c.reference) c.reference.emplace();
                 c.reference->stated_margin = parse_double(v);
               }});

  integer("simulate.steps", [](RunConfig& c) -> int& { return c.sim_steps; });
  integer("simulate.pairs", [](RunConfig& c) -> int& { return c.sim_pairs; });
  integer("simulate.starts", [](RunConfig& c) -> int& { return c.sim_starts; });

  f.push_back({"output.dir",
               [](const RunConfig& c) -> std::optional<std::string> {
                 return c.out_dir.empty() ? std::nullopt : std::optional(c.out_dir);
               },
               [](RunConfig& c, const std::string& v) { c.out_dir = v; }});
  return f;
}

}  // namespace detail

/// Parses config text. Plant constants go under plant.<name> (e.g. plant.a).
inline RunConfig parse_config(const std::string& text) {
  const auto fields = detail::config_fields();
  std::map<std::string, const detail::Field*> by_key;
  for (const auto& f : fields) by_key[f.key] = &f;
  RunConfig c;
  std::set<std::string> seen;
  int line_no = 0;
  for (const std::string& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    require(eq != std::string::npos, ErrorKind::kInvalidArgument, where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    require(seen.insert(key).second, ErrorKind::kInvalidArgument,
            where + ": duplicate key '" + key + "'");
    try {
      if (auto it = by_key.find(key); it != by_key.end()) {
        it->second->set(c, value);
      } else if (key.rfind("plant.", 0) == 0 && key.find('.', 6) == std::string::npos &&
                 key.size() > 6) {
        c.plant_params[key.substr(6)] = parse_double(value);
      } else {
        fail(ErrorKind::kInvalidArgument, "unknown key '" + key + "'");
      }
    } catch (const Error& e) {
      const std::string msg = e.what();
      fail(e.kind(), where + ": " + msg.substr(msg.find(": ") + 2));
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  std::string section;
  for (const auto& f : detail::config_fields()) {
    const auto value = f.get(c);
    if (!value) continue;
    const std::string sec = f.key.substr(0, f.key.find('.'));
    if (sec != section) {
      if (!section.empty()) out += '\n';
      section = sec;
    }
    out += f.key + " = " + *value + '\n';
    if (f.key == "plant.name") {
      for (const auto& [k, v] : c.plant_params) out += "plant." + k + " = " + format_double(v) + '\n';
    }
  }
  return out;
}

inline bool operator==(const ReferenceTriple& a, const ReferenceTriple& b) {
  return a.eta == b.eta && a.L == b.L && a.eps == b.eps && a.margin_eps == b.margin_eps &&
         a.stated_margin == b.stated_margin;
}

/// Canonical-form equality.
inline bool same_config(const RunConfig& a, const RunConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace deltaiss
