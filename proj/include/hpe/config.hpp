#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"

#include "hpe/afno.hpp"
#include "hpe/discovery.hpp"
#include "hpe/error.hpp"
#include "hpe/hpe_model.hpp"
#include "hpe/pde.hpp"
#include "hpe/trainer.hpp"

namespace hpe::config {

using json = nlohmann::json;

/// Reads keys from one JSON object and rejects any key that was never asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_null() && !j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  json sub(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key) ? j_.at(key) : json();
  }

  void finish() const {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("config: unknown key '" + (name_.empty() ? k : name_ + "." + k) + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

struct SystemConfig {
  std::string name = "ch";
  GridSpec grid{64, 64, 1.0, 1.0};
  PhysParams params;
};

struct DegradeConfig {
  double dt_obs = 0.1;
  double t_max = 9.0;
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
};

struct ModelConfig {
  AFNOConfig afno;
  double dt = 0.01;
};

struct RunConfig {
  std::string scenario = "black-black";
  SystemConfig system;
  IntegrateOptions sim;
  DegradeConfig degrade;
  ModelConfig model;
  TrainConfig train;
  double t_split = 9.0;
  KernelMapConfig kernel;
  dsr::DSRConfig dsr;
  json paths = json::object();
  std::uint64_t seed = 0;

  void validate() const {
    (void)parse_scenario(scenario);
    (void)parse_system(system.name);
    system.grid.validate();
    system.params.validate();
    if (sim.save_every == 0 || !(sim.dt > 0.0) || !(sim.t_end >= 0.0)) throw ConfigError("config: invalid sim section");
    if (!(degrade.dt_obs > 0.0) || !(degrade.noise >= 0.0)) throw ConfigError("config: invalid degrade section");
    model.afno.validate_grid(system.grid.nx, system.grid.ny);
    if (!(model.dt > 0.0)) throw ConfigError("config: model.dt must be positive");
    train.validate();
    kernel.validate();
    dsr.validate();
  }
};

inline std::string to_string(Activation a) { return a == Activation::Gelu ? "gelu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::Gelu;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("config: unknown activation '" + s + "'");
}

// ------------------------------------------------------------- to JSON

inline json to_json(const GridSpec& g) { return {{"nx", g.nx}, {"ny", g.ny}, {"dx", g.dx}, {"dy", g.dy}}; }

inline json to_json(const PhysParams& p) {
  return {{"chi", p.chi},     {"kappa", p.kappa}, {"nu", p.nu},
          {"lambda", p.lambda_kpz}, {"alpha", p.alpha}, {"beta", p.beta}};
}

inline json to_json(const AFNOConfig& c) {
  return {{"patch_h", c.patch_h},
          {"patch_w", c.patch_w},
          {"embed_dim", c.embed_dim},
          {"num_blocks", c.num_blocks},
          {"depth", c.depth},
          {"mlp_ratio", c.mlp_ratio},
          {"dropout", c.dropout},
          {"sparsity_threshold", c.sparsity_threshold},
          {"hard_threshold_fraction", c.hard_threshold_fraction},
          {"freq_hidden_factor", c.freq_hidden_factor},
          {"activation", to_string(c.activation)},
          {"positional", c.positional}};
}

inline json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},       {"step_size", c.step_size}, {"gamma", c.gamma},
          {"beta1", c.beta1}, {"beta2", c.beta2},         {"eps", c.eps},
          {"epochs", c.epochs}, {"bptt_window", c.bptt_window}, {"patience", c.patience}};
}

inline json to_json(const KernelMapConfig& k) { return {{"sigma", k.sigma}, {"epsilon", k.epsilon}}; }

inline json to_json(const dsr::DSRConfig& c) {
  return {{"epsilon_risk", c.epsilon_risk},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"lr", c.lr},
          {"max_length", c.max_length},
          {"hidden", c.hidden},
          {"min_count", c.min_count},
          {"const_iterations", c.const_iterations},
          {"const_sweeps", c.const_sweeps},
          {"const_lo", c.const_lo},
          {"const_hi", c.const_hi},
          {"stop_nrmse", c.stop_nrmse},
          {"seed", c.seed}};
}

/// Fully materialized config, every default written out.
inline json to_json(const RunConfig& r) {
  json sys = to_json(r.system.params);
  sys["name"] = r.system.name;
  sys["grid"] = to_json(r.system.grid);
  json model = to_json(r.model.afno);
  model["dt"] = r.model.dt;
  json train = to_json(r.train);
  train["t_split"] = r.t_split;
  return {{"scenario", r.scenario},
          {"system", sys},
          {"sim", {{"t_end", r.sim.t_end}, {"dt", r.sim.dt}, {"save_every", r.sim.save_every}, {"blowup", r.sim.blowup}}},
          {"degrade",
           {{"dt_obs", r.degrade.dt_obs},
            {"t_max", r.degrade.t_max},
            {"noise", r.degrade.noise},
            {"noise_seed", r.degrade.noise_seed}}},
          {"model", model},
          {"train", train},
          {"kernel", to_json(r.kernel)},
          {"dsr", to_json(r.dsr)},
          {"paths", r.paths},
          {"seed", r.seed}};
}

// ------------------------------------------------------------ from JSON

inline void read_into(const json& j, GridSpec& g, const std::string& name = "grid") {
  Section s(j, name);
  s.get("nx", g.nx);
  s.get("ny", g.ny);
  s.get("dx", g.dx);
  s.get("dy", g.dy);
  s.finish();
}

inline void read_into(Section& s, PhysParams& p) {
  s.get("chi", p.chi);
  s.get("kappa", p.kappa);
  s.get("nu", p.nu);
  s.get("lambda", p.lambda_kpz);
  s.get("alpha", p.alpha);
  s.get("beta", p.beta);
}

inline void read_into(Section& s, AFNOConfig& c) {
  s.get("patch_h", c.patch_h);
  s.get("patch_w", c.patch_w);
  s.get("embed_dim", c.embed_dim);
  s.get("num_blocks", c.num_blocks);
  s.get("depth", c.depth);
  s.get("mlp_ratio", c.mlp_ratio);
  s.get("dropout", c.dropout);
  s.get("sparsity_threshold", c.sparsity_threshold);
  s.get("hard_threshold_fraction", c.hard_threshold_fraction);
  s.get("freq_hidden_factor", c.freq_hidden_factor);
  std::string act = to_string(c.activation);
  s.get("activation", act);
  c.activation = parse_activation(act);
  s.get("positional", c.positional);
}

inline void read_into(Section& s, TrainConfig& c) {
  s.get("lr", c.lr);
  s.get("step_size", c.step_size);
  s.get("gamma", c.gamma);
  s.get("beta1", c.beta1);
  s.get("beta2", c.beta2);
  s.get("eps", c.eps);
  s.get("epochs", c.epochs);
  s.get("bptt_window", c.bptt_window);
  s.get("patience", c.patience);
}

inline void read_into(Section& s, KernelMapConfig& k) {
  s.get("sigma", k.sigma);
  s.get("epsilon", k.epsilon);
}

inline void read_into(Section& s, dsr::DSRConfig& c) {
  s.get("epsilon_risk", c.epsilon_risk);
  s.get("batch_size", c.batch_size);
  s.get("iterations", c.iterations);
  s.get("lr", c.lr);
  s.get("max_length", c.max_length);
  s.get("hidden", c.hidden);
  s.get("min_count", c.min_count);
  s.get("const_iterations", c.const_iterations);
  s.get("const_sweeps", c.const_sweeps);
  s.get("const_lo", c.const_lo);
  s.get("const_hi", c.const_hi);
  s.get("stop_nrmse", c.stop_nrmse);
  s.get("seed", c.seed);
}

inline dsr::DSRConfig dsr_from_json(const json& j) {
  dsr::DSRConfig c;
  Section s(j, "dsr");
  read_into(s, c);
  s.finish();
  c.validate();
  return c;
}

/// Parses a run config; absent keys keep their defaults, unknown keys are errors.
inline RunConfig from_json(const json& j) {
  RunConfig r;
  Section top(j, "");
  top.get("scenario", r.scenario);
  top.get("seed", r.seed);
  r.train.seed = r.seed;
  r.dsr.seed = r.seed;
  {
    const json sj = top.sub("system");
    Section s(sj, "system");
    s.get("name", r.system.name);
    read_into(s, r.system.params);
    read_into(s.sub("grid"), r.system.grid, "system.grid");
    s.finish();
  }
  {
    const json sj = top.sub("sim");
    Section s(sj, "sim");
    s.get("t_end", r.sim.t_end);
    s.get("dt", r.sim.dt);
    s.get("save_every", r.sim.save_every);
    s.get("blowup", r.sim.blowup);
    s.finish();
  }
  {
    const json sj = top.sub("degrade");
    Section s(sj, "degrade");
    s.get("dt_obs", r.degrade.dt_obs);
    s.get("t_max", r.degrade.t_max);
    s.get("noise", r.degrade.noise);
    s.get("noise_seed", r.degrade.noise_seed);
    s.finish();
  }
  {
    const json sj = top.sub("model");
    Section s(sj, "model");
    read_into(s, r.model.afno);
    s.get("dt", r.model.dt);
    s.finish();
  }
  {
    const json sj = top.sub("train");
    Section s(sj, "train");
    read_into(s, r.train);
    s.get("t_split", r.t_split);
    s.get("seed", r.train.seed);
    s.finish();
  }
  {
    const json sj = top.sub("kernel");
    Section s(sj, "kernel");
    read_into(s, r.kernel);
    s.finish();
  }
  {
    const json sj = top.sub("dsr");
    Section s(sj, "dsr");
    read_into(s, r.dsr);
    s.finish();
  }
  const json paths = top.sub("paths");
  if (!paths.is_null()) {
    if (!paths.is_object()) throw ConfigError("config: 'paths' must be an object");
    for (const auto& [k, v] : paths.items())
      if (!v.is_string()) throw ConfigError("config: paths." + k + " must be a string");
    r.paths = paths;
  }
  top.finish();
  r.validate();
  return r;
}

/// Model hyperparameters carried inside a checkpoint header.
inline json model_header(const HPEModel& m) {
  json afno = to_json(m.level1 ? m.level1->cfg : m.level2 ? m.level2->cfg : AFNOConfig{});
  return {{"scenario", to_string(m.scenario)},
          {"grid", to_json(m.grid)},
          {"phys", to_json(m.phys)},
          {"dt", m.dt},
          {"kernel", to_json(m.kernel)},
          {"afno", afno}};
}

inline HPEModel model_from_header(const json& h) {
  Section top(h, "checkpoint");
  std::string scenario;
  top.get("scenario", scenario);
  GridSpec g;
  read_into(top.sub("grid"), g);
  PhysParams phys;
  {
    const json pj = top.sub("phys");
    Section s(pj, "phys");
    read_into(s, phys);
    s.finish();
  }
  double dt = 0.01;
  top.get("dt", dt);
  KernelMapConfig k;
  {
    const json kj = top.sub("kernel");
    Section s(kj, "kernel");
    read_into(s, k);
    s.finish();
  }
  AFNOConfig a;
  {
    const json aj = top.sub("afno");
    Section s(aj, "afno");
    read_into(s, a);
    s.finish();
  }
  top.finish();
  return make_model(parse_scenario(scenario), g, a, phys, dt, k);
}

}  // namespace hpe::config
