#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hpe/afno.hpp"
#include "hpe/diff.hpp"
#include "hpe/error.hpp"
#include "hpe/field.hpp"
#include "hpe/pde.hpp"

namespace hpe {

enum class Scenario { BlackBlack, WhiteBlack, BlackWhite, Discovery };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::BlackBlack: return "black-black";
    case Scenario::WhiteBlack: return "white-black";
    case Scenario::BlackWhite: return "black-white";
    case Scenario::Discovery: return "discovery";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "black-black") return Scenario::BlackBlack;
  if (s == "white-black") return Scenario::WhiteBlack;
  if (s == "black-white") return Scenario::BlackWhite;
  if (s == "discovery") return Scenario::Discovery;
  throw ConfigError("unknown scenario '" + s + "' (black-black|white-black|black-white|discovery)");
}

inline bool learned_level1(Scenario s) { return s != Scenario::WhiteBlack; }
inline bool learned_level2(Scenario s) { return s == Scenario::BlackBlack || s == Scenario::WhiteBlack; }

struct KernelMapConfig {
  double sigma = 0.05;
  double epsilon = 1e-8;

  void validate() const {
    if (!(sigma > 0.0) || !(epsilon > 0.0)) throw ConfigError("kernel: sigma and epsilon must be positive");
  }
};

struct HPEModel {
  Scenario scenario = Scenario::BlackBlack;
  GridSpec grid;
  PhysParams phys;
  double dt = 0.01;
  KernelMapConfig kernel;
  std::optional<AFNOParams> level1;
  std::optional<AFNOParams> level2;

  std::vector<ad::Parameter*> params() {
    std::vector<ad::Parameter*> out;
    if (level1)
      for (auto* p : level1->params()) out.push_back(p);
    if (level2)
      for (auto* p : level2->params()) out.push_back(p);
    return out;
  }

  std::size_t scalar_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->scalar_count();
    return n;
  }
};

/// Builds a model whose learnable levels follow the scenario; `base` supplies the shared AFNO hyperparameters.
inline HPEModel make_model(Scenario scenario, const GridSpec& grid, const AFNOConfig& base = {},
                           const PhysParams& phys = {}, double dt = 0.01, const KernelMapConfig& kernel = {},
                           std::uint64_t seed = 0) {
  grid.validate();
  phys.validate();
  kernel.validate();
  if (!(dt >= 0.0)) throw ConfigError("model: dt must be non-negative");
  HPEModel m;
  m.scenario = scenario;
  m.grid = grid;
  m.phys = phys;
  m.dt = dt;
  m.kernel = kernel;
  if (learned_level1(scenario)) {
    AFNOConfig c = base;
    c.in_channels = 1;
    c.out_channels = scenario == Scenario::Discovery ? 2 : 3;
    m.level1 = init_afno(c, grid.nx, grid.ny, seed);
  }
  if (learned_level2(scenario)) {
    AFNOConfig c = base;
    c.in_channels = 4;
    c.out_channels = 1;
    m.level2 = init_afno(c, grid.nx, grid.ny, seed + 1);
  }
  return m;
}

// ------------------------------------------------------------ field bridge

inline ad::Tensor to_tensor(const RealField& f) { return ad::Tensor({f.grid.nx, f.grid.ny}, f.values); }

inline RealField to_field(const ad::Var& v, const GridSpec& g) {
  const auto& t = v.value();
  if (t.complex || t.size() != g.size()) throw ConfigError("to_field: tensor " + ad::shape_str(t.shape) + " does not fit grid");
  return RealField(g, t.data);
}

// ---------------------------------------------------------- known channels

namespace model_detail {

inline ad::Var clamp(ad::Var c) {
  return ad::map(
      c, [](double v) { return clamp_concentration(v); },
      [](double v) { return v > kConcentrationEps && v < 1.0 - kConcentrationEps ? 1.0 : 0.0; });
}

}  // namespace model_detail

/// (M(c), μ_hom(c), −κ·Δ_h c) with c clamped before the constitutive laws.
inline std::array<ad::Var, 3> known_term_channels(ad::Var c, const GridSpec& g, const PhysParams& p) {
  ad::Var cc = model_detail::clamp(c);
  ad::Var m = ad::map(cc, [](double v) { return v * (1.0 - v); }, [](double v) { return 1.0 - 2.0 * v; });
  const double chi = p.chi;
  ad::Var mu = ad::map(
      cc, [chi](double v) { return std::log(v / (1.0 - v)) + chi * (1.0 - 2.0 * v); },
      [chi](double v) { return 1.0 / (v * (1.0 - v)) - 2.0 * chi; });
  ad::Var lap = ad::scale(ad::fd_laplacian(c, g.dx, g.dy), -p.kappa);
  return {m, mu, lap};
}

inline std::array<RealField, 3> known_term_channels(const RealField& c, const PhysParams& p = {}) {
  ad::Tape t(false);
  auto ch = known_term_channels(t.constant(to_tensor(c)), c.grid, p);
  return {to_field(ch[0], c.grid), to_field(ch[1], c.grid), to_field(ch[2], c.grid)};
}

/// div(f1 · grad(f2 + f3)) with forward-difference gradient and backward-difference divergence.
inline ad::Var known_combination(ad::Var f1, ad::Var f2, ad::Var f3, const GridSpec& g) {
  ad::Var pot = ad::add(f2, f3);
  ad::Var gx = ad::mul(f1, ad::fd_diff(pot, 0, g.dx));
  ad::Var gy = ad::mul(f1, ad::fd_diff(pot, 1, g.dy));
  return ad::fd_div(gx, gy, g.dx, g.dy);
}

inline RealField known_combination(const RealField& f1, const RealField& f2, const RealField& f3) {
  f1.check_same(f2);
  f1.check_same(f3);
  ad::Tape t(false);
  return to_field(known_combination(t.constant(to_tensor(f1)), t.constant(to_tensor(f2)), t.constant(to_tensor(f3)), f1.grid),
                  f1.grid);
}

inline RealField kernel_consistency_map(const RealField& raw, const RealField& c, const KernelMapConfig& cfg = {}) {
  raw.check_same(c);
  cfg.validate();
  ad::Tape t(false);
  return to_field(ad::kernel_map(t.constant(to_tensor(raw)), t.constant(to_tensor(c)), cfg.sigma, cfg.epsilon), raw.grid);
}

// ---------------------------------------------------------------- levels

struct Level1Output {
  std::array<ad::Var, 3> terms;  // inputs of level 2, in (M, μ_hom, −κΔc) order
  std::vector<ad::Var> learned;  // learned channels as emitted (after kernel mapping in Discovery)
};

/// u is a real [nx, ny] state.
inline Level1Output level1_features(ad::Tape& t, HPEModel& m, ad::Var u, bool train, std::uint64_t seed = 0) {
  const GridSpec& g = m.grid;
  Level1Output out;
  if (m.scenario == Scenario::WhiteBlack) {
    out.terms = known_term_channels(u, g, m.phys);
    return out;
  }
  ad::Var y = afno_forward(t, ad::reshape(u, {1, g.nx, g.ny}), *m.level1, train, seed);
  if (m.scenario == Scenario::Discovery) {
    ad::Var d_hat = ad::kernel_map(ad::select(y, 0), u, m.kernel.sigma, m.kernel.epsilon);
    ad::Var mu_hat = ad::kernel_map(ad::select(y, 1), u, m.kernel.sigma, m.kernel.epsilon);
    out.learned = {d_hat, mu_hat};
    out.terms = {ad::mul(model_detail::clamp(u), d_hat), mu_hat, ad::scale(ad::fd_laplacian(u, g.dx, g.dy), -m.phys.kappa)};
    return out;
  }
  out.terms = {ad::select(y, 0), ad::select(y, 1), ad::select(y, 2)};
  out.learned = {out.terms[0], out.terms[1], out.terms[2]};
  return out;
}

inline ad::Var level2_combine(ad::Tape& t, HPEModel& m, const std::array<ad::Var, 3>& f, ad::Var u, bool train,
                              std::uint64_t seed = 0) {
  const GridSpec& g = m.grid;
  if (!learned_level2(m.scenario)) return known_combination(f[0], f[1], f[2], g);
  ad::Var x = ad::stack({f[0], f[1], f[2], u});
  return ad::select(afno_forward(t, x, *m.level2, train, seed), 0);
}

/// F̂(u): the learned right-hand side of the recurrence.
inline ad::Var f_hat(ad::Tape& t, HPEModel& m, ad::Var u, bool train, std::uint64_t seed = 0) {
  const auto& s = u.shape();
  if (s != ad::Shape{m.grid.nx, m.grid.ny})
    throw ConfigError("f_hat: state " + ad::shape_str(s) + " does not match the model grid");
  auto l1 = level1_features(t, m, u, train, afno_detail::site_seed(seed, 1));
  return level2_combine(t, m, l1.terms, u, train, afno_detail::site_seed(seed, 2));
}

inline RealField f_hat(HPEModel& m, const RealField& u) {
  ad::Tape t(false);
  return to_field(f_hat(t, m, t.constant(to_tensor(u)), false), m.grid);
}

// ---------------------------------------------------------------- rollout

inline ad::Var euler_step(ad::Tape& t, HPEModel& m, ad::Var u, bool train, std::uint64_t seed = 0) {
  return ad::add(u, ad::scale(f_hat(t, m, u, train, seed), m.dt));
}

/// û^{k+1} = û^k + F(û^k)·δt for n steps; the trajectory holds u0 and every step.
inline Trajectory rollout(const RealField& u0, const std::function<RealField(const RealField&)>& rhs, double dt,
                          std::size_t n_steps) {
  if (n_steps == 0) throw ConfigError("rollout: n_steps must be >= 1");
  Trajectory traj;
  traj.times.push_back(0.0);
  traj.snapshots.push_back(u0);
  RealField u = u0;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    RealField f = rhs(u);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += dt * f[i];
    if (!u.finite()) throw NumericError("rollout: non-finite state", k);
    traj.times.push_back(static_cast<double>(k) * dt);
    traj.snapshots.push_back(u);
  }
  return traj;
}

inline Trajectory rollout(const RealField& u0, HPEModel& m, std::size_t n_steps) {
  if (!(u0.grid == m.grid)) throw ConfigError("rollout: initial state grid does not match the model");
  return rollout(u0, [&m](const RealField& u) { return f_hat(m, u); }, m.dt, n_steps);
}

}  // namespace hpe
