// hpe_lab: command-line front end for simulation, training, evaluation and discovery.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hpe/config.hpp"
#include "hpe/discovery.hpp"
#include "hpe/fft.hpp"
#include "hpe/hpe_model.hpp"
#include "hpe/io.hpp"
#include "hpe/pde.hpp"
#include "hpe/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hpe;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string sha256_hex(const std::string& s) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(s.data(), s.size(), md, &n, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

std::string json_version() {
  return std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
         std::to_string(NLOHMANN_JSON_VERSION_PATCH);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t threads_from_env() {
  const char* s = std::getenv("HPE_THREADS");
  if (!s || !*s) return 1;
  try {
    const long v = std::stol(s);
    if (v < 1) throw ConfigError("HPE_THREADS must be >= 1");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("HPE_THREADS: not a number '") + s + "'");
  }
}

void set_path(json& j, const std::string& dotted, json value) {
  json* cur = &j;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("--set: bad key '" + dotted + "'");
    if (!cur->is_object()) throw ConfigError("--set: '" + dotted + "' crosses a non-object value");
    if (dot == std::string::npos) {
      (*cur)[key] = std::move(value);
      return;
    }
    cur = &(*cur)[key];
    if (cur->is_null()) *cur = json::object();
    start = dot + 1;
  }
}

json parse_value(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::parse_error&) {
    return s;
  }
}

const std::vector<std::string> kSections{"scenario", "system", "sim",  "degrade", "model",
                                         "train",    "kernel", "dsr",  "paths",   "seed"};

/// Options shared by every command: a config file, key overrides, and the provenance bookkeeping.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::string home;  // section a bare config file is read into
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  json flags = json::object();  // dotted key -> value, from command flags
  json options = json::object();
  json result = json::object();
  config::RunConfig cfg;
  json materialized;
  std::chrono::steady_clock::time_point t0;
  std::string started;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON run config");
    sub->add_option("--set", sets, "override a config key: section.key=value")->take_all();
  }

  template <class T>
  void flag(const std::string& key, const std::optional<T>& v) {
    if (v) flags[key] = *v;
  }

  void resolve(const std::function<void(json&)>& adjust = {}) {
    json j = json::object();
    if (config_file) {
      j = io::read_json(*config_file);
      if (!j.is_object()) throw ConfigError("config: top level must be an object");
      bool sectioned = true;
      for (const auto& [k, v] : j.items())
        sectioned = sectioned && std::find(kSections.begin(), kSections.end(), k) != kSections.end();
      if (!sectioned && !home.empty()) j = json{{home, j}};
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_path(j, s.substr(0, eq), parse_value(s.substr(eq + 1)));
    }
    for (const auto& [k, v] : flags.items()) set_path(j, k, v);
    if (adjust) adjust(j);
    cfg = config::from_json(j);
    materialized = config::to_json(cfg);
  }

  void start() {
    t0 = std::chrono::steady_clock::now();
    started = utc_now();
  }

  void finish(const fs::path& out, bool is_dir) const {
    const fs::path cfg_path = is_dir ? out / "config.json" : fs::path(out.string() + ".config.json");
    const fs::path run_path = is_dir ? out / "run.json" : fs::path(out.string() + ".run.json");
    io::write_json(cfg_path, materialized);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json rec = {{"command", command},
                {"argv", argv},
                {"config", materialized},
                {"config_sha256", sha256_hex(materialized.dump())},
                {"seeds",
                 {{"seed", cfg.seed},
                  {"train", cfg.train.seed},
                  {"dsr", cfg.dsr.seed},
                  {"noise", cfg.degrade.noise_seed}}},
                {"options", options},
                {"result", result},
                {"started_utc", started},
                {"wall_seconds", wall},
                {"threads", threads_from_env()},
                {"versions",
                 {{"hpe_lab", kVersion},
                  {"fftw", std::string(fftw_version)},
                  {"compiler", std::string(__VERSION__)},
                  {"cxx", static_cast<long>(__cplusplus)},
                  {"nlohmann_json", json_version()},
                  {"cli11", std::string(CLI11_VERSION)}}}};
    io::write_json(run_path, rec);
  }
};

Trajectory observed(const fs::path& dir, json& j) {
  Trajectory tr = io::read_observable(dir);
  const auto grid = tr.snapshots.front().grid;
  set_path(j, "system.name", to_string(tr.system));
  set_path(j, "system.grid", config::to_json(grid));
  const json phys = config::to_json(tr.params);
  for (const auto& [k, v] : phys.items()) set_path(j, "system." + k, v);
  return tr;
}

// ----------------------------------------------------------------- commands

void cmd_simulate(Run& run, const fs::path& out) {
  run.start();
  const auto& c = run.cfg;
  const SystemKind sys = parse_system(c.system.name);
  const json extra = {{"seeds", {{"initial_condition", c.seed}}}, {"sim", run.materialized["sim"]}};
  std::size_t n = 0;
  if (is_complex(sys)) {
    const auto tr = integrate(initial_condition_complex(c.seed, c.system.grid), sys, c.system.params, c.sim, c.seed);
    io::write_trajectory(out, tr, extra);
    n = tr.size();
  } else {
    const auto tr = integrate(initial_condition(sys, c.seed, c.system.grid), sys, c.system.params, c.sim, c.seed);
    io::write_trajectory(out, tr, extra);
    n = tr.size();
  }
  run.result["snapshots"] = n;
  run.finish(out, true);
  std::cerr << "simulate: wrote " << n << " snapshots to " << out.string() << "\n";
}

template <class T>
std::size_t degrade_into(const fs::path& in, const fs::path& out, const config::RunConfig& c, const json& extra) {
  const auto tr = io::read_trajectory<T>(in);
  const auto sparse = sample_sparse(tr, c.degrade.dt_obs, c.degrade.t_max);
  const auto noisy = add_noise(sparse, NoiseSpec{c.degrade.noise, c.degrade.noise_seed});
  io::write_trajectory(out, noisy, extra);
  return noisy.size();
}

void cmd_degrade(Run& run, const fs::path& in, const fs::path& out) {
  run.start();
  const auto m = io::read_manifest(in);
  json extra = {{"degrade", run.materialized["degrade"]},
                {"seeds", {{"initial_condition", m.raw.value("seed", std::uint64_t{0})},
                           {"noise", run.cfg.degrade.noise_seed}}}};
  const std::size_t n = m.complex ? degrade_into<cplx>(in, out, run.cfg, extra) : degrade_into<double>(in, out, run.cfg, extra);
  run.result["snapshots"] = n;
  run.finish(out, true);
  std::cerr << "degrade: wrote " << n << " snapshots to " << out.string() << "\n";
}

void cmd_train(Run& run, const Trajectory& data, const fs::path& data_dir, const fs::path& out) {
  run.start();
  const auto& c = run.cfg;
  ObservationSet obs(data);
  HPEModel m = make_model(parse_scenario(c.scenario), obs.grid(), c.model.afno, data.params, c.model.dt, c.kernel, c.seed);
  std::cerr << "train: " << c.scenario << ", " << m.scalar_count() << " parameters, " << obs.size() << " snapshots\n";
  const auto res = train(m, obs, c.train, [](std::size_t e, double loss) {
    std::cerr << "epoch " << e + 1 << " loss " << loss << "\n";
  });
  json extra = {{"train", run.materialized["train"]}, {"data", data_dir.string()}, {"seed", c.seed}};
  io::save_model(out, m, extra);
  std::vector<std::vector<double>> rows;
  for (std::size_t e = 0; e < res.loss_history.size(); ++e)
    rows.push_back({static_cast<double>(e + 1), res.loss_history[e]});
  io::write_csv(out.string() + ".loss.csv", {"epoch", "loss"}, rows);
  run.result = {{"epochs_run", res.epochs_run},
                {"steps", res.steps},
                {"skipped_steps", res.skipped_steps},
                {"early_stopped", res.early_stopped},
                {"aborted_epochs", res.aborted_epochs},
                {"final_loss", res.loss_history.empty() ? json() : json(res.loss_history.back())}};
  run.finish(out, false);
}

void cmd_evaluate(Run& run, const fs::path& ckpt, const fs::path& truth_dir, const fs::path& out) {
  run.start();
  HPEModel m = io::load_model(ckpt);
  const Trajectory truth = io::read_observable(truth_dir);
  const auto rep = evaluate(m, truth.snapshots.front(), truth, run.cfg.t_split);
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < rep.times.size(); ++k) rows.push_back({rep.times[k], rep.rmse_per_time[k]});
  io::write_csv(out, {"t", "rmse"}, rows);
  run.result = {{"interp_avg", rep.interp_avg}, {"extrap_avg", rep.extrap_avg}, {"t_split", rep.t_split}};
  run.finish(out, false);
  std::cout << "interp_avg " << io::format_g17(rep.interp_avg) << "\nextrap_avg " << io::format_g17(rep.extrap_avg)
            << "\n";
}

struct SweepGrid {
  fs::path truth;
  SweepSpec spec;
};

SweepGrid read_sweep_grid(const fs::path& p) {
  const json j = io::read_json(p);
  config::Section s(j, "sweep");
  SweepGrid g;
  std::string truth;
  s.get("truth", truth);
  s.get("dt_obs", g.spec.dt_obs);
  s.get("sigma", g.spec.sigma);
  s.get("seeds", g.spec.seeds);
  s.get("t_obs_max", g.spec.t_obs_max);
  s.get("t_split", g.spec.t_split);
  s.finish();
  if (truth.empty()) throw ConfigError("sweep: 'truth' is required");
  g.truth = truth;
  if (g.truth.is_relative()) g.truth = p.parent_path() / g.truth;
  return g;
}

void cmd_sweep(Run& run, const SweepGrid& g, const Trajectory& truth, const fs::path& out) {
  run.start();
  const auto& c = run.cfg;
  const Scenario sc = parse_scenario(c.scenario);
  const GridSpec grid = truth.snapshots.front().grid;
  std::size_t done = 0;
  const std::size_t total = g.spec.dt_obs.size() * g.spec.sigma.size() * g.spec.seeds.size();
  const auto make = [&](std::uint64_t seed) {
    std::cerr << "sweep: run " << ++done << "/" << total << "\n";
    return make_model(sc, grid, c.model.afno, truth.params, c.model.dt, c.kernel, seed);
  };
  const auto cells = robustness_sweep(truth, g.spec, make, c.train);
  std::vector<std::vector<double>> rows;
  for (const auto& cell : cells)
    rows.push_back({cell.dt_obs, cell.sigma, cell.interp_avg, cell.extrap_avg, static_cast<double>(cell.runs)});
  io::write_csv(out, {"dt_obs", "sigma", "interp_avg", "extrap_avg", "runs"}, rows);
  run.result["cells"] = cells.size();
  run.finish(out, false);
}

void cmd_bin(Run& run, const fs::path& ckpt, const fs::path& data_dir, std::size_t channel, std::size_t bins,
             double t_min, double t_max, const fs::path& out) {
  run.start();
  HPEModel m = io::load_model(ckpt);
  if (!m.level1) throw ConfigError("bin: checkpoint has no learned level-1 network");
  const Trajectory data = io::read_observable(data_dir);
  if (!(data.snapshots.front().grid == m.grid)) throw ConfigError("bin: data grid does not match the checkpoint");
  std::vector<RealField> cs, terms;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const double t = data.times[k];
    if (t < t_min - 1e-9 || t > t_max + 1e-9) continue;
    ad::Tape tape(false);
    const auto l1 = level1_features(tape, m, tape.constant(to_tensor(data.snapshots[k])), false);
    if (channel == 0 || channel > l1.learned.size())
      throw ConfigError("bin: channel must be in 1.." + std::to_string(l1.learned.size()));
    cs.push_back(data.snapshots[k]);
    terms.push_back(to_field(l1.learned[channel - 1], m.grid));
  }
  if (cs.empty()) throw ConfigError("bin: no snapshots in the requested time window");
  const auto table = dsr::bin_analysis(cs, terms, bins);
  io::write_bin_table(out, table);
  run.result = {{"snapshots", cs.size()}, {"bins", bins}};
  run.finish(out, false);
}

void cmd_discover(Run& run, const fs::path& table_path, const fs::path& out) {
  run.start();
  const auto table = io::read_bin_table(table_path);
  const auto res = dsr::discover(table, run.cfg.dsr, {}, [](std::size_t it, const dsr::DiscoveryResult& r) {
    if ((it + 1) % 50 == 0)
      std::cerr << "iteration " << it + 1 << " best nrmse " << r.best_score.nrmse << "  " << dsr::infix(r.best) << "\n";
  });
  json tokens = json::array();
  for (auto op : res.best.tokens) tokens.push_back(dsr::symbol(op));
  const json doc = {{"tokens", tokens},
                    {"constants", res.best.constants},
                    {"infix", dsr::infix(res.best)},
                    {"nrmse", res.best_score.nrmse},
                    {"reward", res.best_score.reward},
                    {"reward_history", res.best_reward_history},
                    {"threshold_history", res.threshold_history},
                    {"iterations", res.iterations_run},
                    {"evaluations", res.evaluations}};
  io::write_json(out, doc);
  run.result = {{"infix", doc["infix"]}, {"nrmse", doc["nrmse"]}, {"seconds", res.seconds}};
  run.finish(out, false);
  std::cout << doc["infix"].get<std::string>() << "\nnrmse " << io::format_g17(res.best_score.nrmse) << "\n";
}

bool cmd_grad_check(Run& run, std::size_t size, double h, double tol, const std::optional<std::string>& out) {
  run.start();
  const auto& c = run.cfg;
  const GridSpec g{size, size, 1.0, 1.0};
  HPEModel m = make_model(parse_scenario(c.scenario), g, c.model.afno, c.system.params, c.model.dt, c.kernel, c.seed);
  std::mt19937_64 rng(c.seed + 1);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1), conc(0.3, 0.7), tgt(-0.1, 0.1);
  for (auto* p : m.params())
    for (auto& v : p->value.data) v += jitter(rng);
  RealField u(g), target(g);
  for (auto& v : u.values) v = conc(rng);
  for (auto& v : target.values) v = tgt(rng);
  auto f = [&](ad::Tape& t) {
    ad::Var d = ad::sub(f_hat(t, m, t.constant(to_tensor(u)), true, c.seed), t.constant(to_tensor(target)));
    return ad::mean(ad::mul(d, d));
  };
  ad::GradCheckOptions opt;
  opt.h = h;
  const auto rep = ad::grad_check(f, m.params(), opt);
  const bool ok = rep.max_rel_error < tol;
  run.result = {{"max_rel_error", rep.max_rel_error},
                {"max_abs_error", rep.max_abs_error},
                {"checked", rep.checked},
                {"worst", rep.worst},
                {"tol", tol},
                {"pass", ok}};
  if (out) run.finish(*out, false);
  std::cout << "grad-check " << c.scenario << " " << size << "x" << size << ": max_rel_error "
            << io::format_g17(rep.max_rel_error) << " over " << rep.checked << " coordinates (" << (ok ? "PASS" : "FAIL")
            << ")\n";
  return ok;
}

void cmd_render(Run& run, const fs::path& in, const fs::path& out) {
  run.start();
  const auto f = io::read_fld(in);
  RealField field;
  if (f.dtype == io::DType::Complex)
    field = abs_field(io::read_complex_field(in));
  else
    field = io::read_real_field(in);
  const auto range = io::write_pgm16(out, field);
  run.result = {{"min", range.min}, {"max", range.max}};
  run.finish(out, false);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical physics-embedded learning lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Run run;
  for (int i = 1; i < argc; ++i) run.argv.emplace_back(argv[i]);

  std::function<int()> action;
  auto add = [&](const std::string& name, const std::string& help, const std::string& home) {
    auto* sub = app.add_subcommand(name, help);
    sub->preparse_callback([&run, name, home](std::size_t) {
      run.command = name;
      run.home = home;
    });
    run.attach(sub);
    return sub;
  };

  // simulate
  std::optional<std::string> system;
  std::optional<std::uint64_t> seed;
  std::optional<double> t_end, dt;
  std::optional<std::size_t> save_every;
  std::string out;
  {
    auto* s = add("simulate", "integrate a reference PDE", "sim");
    s->add_option("--system", system, "ch | ac | dkpz | cgl");
    s->add_option("--seed", seed, "initial-condition seed");
    s->add_option("--t-end", t_end);
    s->add_option("--dt", dt);
    s->add_option("--save-every", save_every);
    s->add_option("--out", out, "output directory")->required();
    s->final_callback([&] {
      action = [&] {
        run.flag("system.name", system);
        run.flag("seed", seed);
        run.flag("sim.t_end", t_end);
        run.flag("sim.dt", dt);
        run.flag("sim.save_every", save_every);
        run.resolve();
        cmd_simulate(run, out);
        return 0;
      };
    });
  }

  // degrade
  std::string in;
  std::optional<double> dt_obs, t_max, noise;
  std::optional<std::uint64_t> noise_seed;
  {
    auto* s = add("degrade", "subsample and add noise to a trajectory", "degrade");
    s->add_option("--in", in, "input trajectory directory")->required();
    s->add_option("--dt-obs", dt_obs);
    s->add_option("--t-max", t_max);
    s->add_option("--noise", noise, "relative noise level sigma");
    s->add_option("--noise-seed", noise_seed);
    s->add_option("--out", out, "output directory")->required();
    s->final_callback([&] {
      action = [&] {
        run.flag("degrade.dt_obs", dt_obs);
        run.flag("degrade.t_max", t_max);
        run.flag("degrade.noise", noise);
        run.flag("degrade.noise_seed", noise_seed);
        run.resolve();
        cmd_degrade(run, in, out);
        return 0;
      };
    });
  }

  // train
  std::string data;
  std::optional<std::string> scenario;
  std::optional<std::size_t> epochs;
  {
    auto* s = add("train", "fit an HPE model to observations", "train");
    s->add_option("--data", data, "observation trajectory directory")->required();
    s->add_option("--scenario", scenario, "black-black | white-black | black-white | discovery");
    s->add_option("--epochs", epochs);
    s->add_option("--seed", seed);
    s->add_option("--out", out, "checkpoint path (.hpew)")->required();
    s->final_callback([&] {
      action = [&] {
        run.flag("scenario", scenario);
        run.flag("train.epochs", epochs);
        run.flag("seed", seed);
        Trajectory tr;
        run.resolve([&](json& j) { tr = observed(data, j); });
        cmd_train(run, tr, data, out);
        return 0;
      };
    });
  }

  // evaluate
  std::string ckpt, truth;
  std::optional<double> t_split;
  {
    auto* s = add("evaluate", "roll a checkpoint out against a reference trajectory", "train");
    s->add_option("--ckpt", ckpt)->required();
    s->add_option("--truth", truth, "reference trajectory directory")->required();
    s->add_option("--t-split", t_split, "end of the interpolation window");
    s->add_option("--out", out, "per-time RMSE CSV")->required();
    s->final_callback([&] {
      action = [&] {
        run.flag("train.t_split", t_split);
        run.options = {{"ckpt", ckpt}, {"truth", truth}};
        run.resolve();
        cmd_evaluate(run, ckpt, truth, out);
        return 0;
      };
    });
  }

  // sweep
  std::string grid_file;
  {
    auto* s = add("sweep", "train and evaluate over a (dt_obs, sigma) grid", "train");
    s->add_option("--grid", grid_file, "sweep grid JSON")->required();
    s->add_option("--scenario", scenario);
    s->add_option("--epochs", epochs);
    s->add_option("--out", out, "sweep CSV")->required();
    s->final_callback([&] {
      action = [&] {
        run.flag("scenario", scenario);
        run.flag("train.epochs", epochs);
        const SweepGrid g = read_sweep_grid(grid_file);
        run.options = {{"grid", io::read_json(grid_file)}};
        Trajectory tr;
        run.resolve([&](json& j) { tr = observed(g.truth, j); });
        cmd_sweep(run, g, tr, out);
        return 0;
      };
    });
  }

  // bin
  std::size_t channel = 1, bins = 50;
  double t_min = 1.0, bin_t_max = 9.0;
  {
    auto* s = add("bin", "bin a learned channel against concentration", "dsr");
    s->add_option("--ckpt", ckpt)->required();
    s->add_option("--data", data, "trajectory whose snapshots feed the network")->required();
    s->add_option("--channel", channel, "1-based learned channel")->capture_default_str();
    s->add_option("--bins", bins)->capture_default_str();
    s->add_option("--t-min", t_min)->capture_default_str();
    s->add_option("--t-max", bin_t_max)->capture_default_str();
    s->add_option("--out", out, "bin table CSV")->required();
    s->final_callback([&] {
      action = [&] {
        run.options = {{"ckpt", ckpt}, {"data", data}, {"channel", channel}, {"bins", bins},
                       {"t_min", t_min}, {"t_max", bin_t_max}};
        run.resolve();
        cmd_bin(run, ckpt, data, channel, bins, t_min, bin_t_max, out);
        return 0;
      };
    });
  }

  // discover
  std::string table;
  std::optional<std::size_t> iterations;
  {
    auto* s = add("discover", "symbolic regression on a bin table", "dsr");
    s->add_option("--table", table, "bin table CSV")->required();
    s->add_option("--seed", seed);
    s->add_option("--iterations", iterations);
    s->add_option("--out", out, "result JSON")->required();
    s->final_callback([&] {
      action = [&] {
        run.flag("dsr.seed", seed);
        run.flag("dsr.iterations", iterations);
        run.options = {{"table", table}};
        run.resolve();
        cmd_discover(run, table, out);
        return 0;
      };
    });
  }

  // grad-check
  std::size_t gc_size = 16;
  double gc_h = 1e-6, gc_tol = 1e-4;
  std::optional<std::string> gc_out;
  {
    auto* s = add("grad-check", "finite-difference check of the full model gradient", "model");
    s->add_option("--scenario", scenario);
    s->add_option("--seed", seed);
    s->add_option("--size", gc_size, "grid side")->capture_default_str();
    s->add_option("--step", gc_h, "finite-difference step")->capture_default_str();
    s->add_option("--tol", gc_tol)->capture_default_str();
    s->add_option("--out", gc_out, "optional report path (writes <out>.run.json)");
    s->final_callback([&] {
      action = [&] {
        run.flag("scenario", scenario);
        run.flag("seed", seed);
        run.options = {{"size", gc_size}, {"step", gc_h}, {"tol", gc_tol}};
        run.resolve([&](json& j) {
          set_path(j, "system.grid", config::to_json(GridSpec{gc_size, gc_size, 1.0, 1.0}));
        });
        return cmd_grad_check(run, gc_size, gc_h, gc_tol, gc_out) ? 0 : 1;
      };
    });
  }

  // render
  {
    auto* s = add("render", "write a field as a 16-bit PGM heatmap", "");
    s->add_option("--in", in, "FLD1 file")->required();
    s->add_option("--out", out, "PGM path")->required();
    s->final_callback([&] {
      action = [&] {
        run.options = {{"in", in}};
        run.resolve();
        cmd_render(run, in, out);
        return 0;
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
