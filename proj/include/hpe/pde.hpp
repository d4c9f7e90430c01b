#pragma once

// Ground-truth solvers for the four benchmark systems (Cahn-Hilliard,
// Allen-Cahn, deterministic KPZ, complex Ginzburg-Landau) and the
// sparse/noisy observation pipeline.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "hpe/error.hpp"
#include "hpe/field.hpp"

namespace hpe {

enum class SystemKind { CH, AC, DKPZ, CGL };

inline std::string to_string(SystemKind s) {
  switch (s) {
    case SystemKind::CH: return "ch";
    case SystemKind::AC: return "ac";
    case SystemKind::DKPZ: return "dkpz";
    case SystemKind::CGL: return "cgl";
  }
  return "?";
}

inline SystemKind parse_system(const std::string& s) {
  if (s == "ch") return SystemKind::CH;
  if (s == "ac") return SystemKind::AC;
  if (s == "dkpz") return SystemKind::DKPZ;
  if (s == "cgl") return SystemKind::CGL;
  throw ConfigError("unknown system '" + s + "' (expected ch|ac|dkpz|cgl)");
}

inline bool is_complex(SystemKind s) { return s == SystemKind::CGL; }

struct PhysParams {
  double chi = 3.0;
  double kappa = 1.0;
  double nu = 0.1;
  double lambda_kpz = -0.5;
  double alpha = -0.5;
  double beta = 1.07;

  void validate() const {
    if (!(kappa > 0.0)) throw ConfigError("params: kappa must be positive");
    if (!(nu > 0.0)) throw ConfigError("params: nu must be positive");
  }
};

/// Concentration clamp applied before the logarithmic constitutive laws.
inline constexpr double kConcentrationEps = 1e-6;

inline double clamp_concentration(double c) {
  return std::clamp(c, kConcentrationEps, 1.0 - kConcentrationEps);
}

enum class Constitutive { MuHom, D, M, R0, GHom };

/// Regular-solution constitutive laws of the phase-field systems.
inline double constitutive(double c, Constitutive kind, const PhysParams& p = {}) {
  switch (kind) {
    case Constitutive::MuHom:
      if (!(c > 0.0 && c < 1.0)) throw DomainError("mu_hom: c must lie in (0,1)");
      return std::log(c / (1.0 - c)) + p.chi * (1.0 - 2.0 * c);
    case Constitutive::GHom:
      if (!(c > 0.0 && c < 1.0)) throw DomainError("g_hom: c must lie in (0,1)");
      return c * std::log(c) + (1.0 - c) * std::log(1.0 - c) + p.chi * c * (1.0 - c);
    case Constitutive::D: return 1.0 - c;
    case Constitutive::M: return c * (1.0 - c);
    case Constitutive::R0: return c * (1.0 - c);
  }
  return 0.0;
}

inline double mu_hom(double c, const PhysParams& p = {}) { return constitutive(c, Constitutive::MuHom, p); }

template <class T>
struct TrajectoryT {
  SystemKind system = SystemKind::CH;
  PhysParams params;
  std::uint64_t seed = 0;
  std::vector<double> times;
  std::vector<Field<T>> snapshots;

  std::size_t size() const { return snapshots.size(); }
  double spacing() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
};

using Trajectory = TrajectoryT<double>;
using ComplexTrajectory = TrajectoryT<cplx>;

namespace detail {

inline RealField spectral_apply(const SpectralField& s, int ox, int oy) {
  return real_part(idft2(spectral_derivative(s, ox, oy)));
}

inline RealField laplacian_spectral(const SpectralField& s) {
  auto lxx = spectral_derivative(s, 2, 0);
  const auto lyy = spectral_derivative(s, 0, 2);
  for (std::size_t k = 0; k < lxx.modes.size(); ++k) lxx.modes[k] += lyy.modes[k];
  return real_part(idft2(lxx));
}

inline ComplexField laplacian_spectral_c(const SpectralField& s) {
  auto lxx = spectral_derivative(s, 2, 0);
  const auto lyy = spectral_derivative(s, 0, 2);
  for (std::size_t k = 0; k < lxx.modes.size(); ++k) lxx.modes[k] += lyy.modes[k];
  return idft2(lxx);
}

inline void require_state_finite(const RealField& f) {
  if (!f.finite()) throw DomainError("pde_rhs: non-finite state");
}

/// μ = μ_hom(clamped c) − κ∇²c, spectral Laplacian.
inline RealField chemical_potential(const RealField& c, const SpectralField& c_hat, const PhysParams& p) {
  const RealField lap = laplacian_spectral(c_hat);
  RealField mu(c.grid);
  for (std::size_t k = 0; k < c.size(); ++k)
    mu[k] = mu_hom(clamp_concentration(c[k]), p) - p.kappa * lap[k];
  return mu;
}

}  // namespace detail

/// Right-hand side of the real-valued systems (CH, AC, dKPZ), spectral in space.
inline RealField pde_rhs(const RealField& u, SystemKind system, const PhysParams& p = {}) {
  detail::require_state_finite(u);
  const auto& g = u.grid;
  const SpectralField u_hat = dft2(u);
  switch (system) {
    case SystemKind::CH: {
      const RealField mu = detail::chemical_potential(u, u_hat, p);
      const SpectralField mu_hat = dft2(mu);
      RealField fx = detail::spectral_apply(mu_hat, 1, 0);
      RealField fy = detail::spectral_apply(mu_hat, 0, 1);
      for (std::size_t k = 0; k < u.size(); ++k) {
        const double m = constitutive(clamp_concentration(u[k]), Constitutive::M, p);
        fx[k] *= m;
        fy[k] *= m;
      }
      auto div = spectral_derivative(dft2(fx), 1, 0);
      const auto dy = spectral_derivative(dft2(fy), 0, 1);
      for (std::size_t k = 0; k < div.modes.size(); ++k) div.modes[k] += dy.modes[k];
      return real_part(idft2(div));
    }
    case SystemKind::AC: {
      RealField mu = detail::chemical_potential(u, u_hat, p);
      for (std::size_t k = 0; k < u.size(); ++k)
        mu[k] *= -constitutive(clamp_concentration(u[k]), Constitutive::R0, p);
      return mu;
    }
    case SystemKind::DKPZ: {
      RealField out = detail::laplacian_spectral(u_hat);
      const RealField hx = detail::spectral_apply(u_hat, 1, 0);
      const RealField hy = detail::spectral_apply(u_hat, 0, 1);
      for (std::size_t k = 0; k < u.size(); ++k)
        out[k] = p.nu * out[k] + 0.5 * p.lambda_kpz * (hx[k] * hx[k] + hy[k] * hy[k]);
      return out;
    }
    case SystemKind::CGL:
      throw ConfigError("pde_rhs: CGL state is complex");
  }
  (void)g;
  return u;
}

/// Right-hand side of the complex Ginzburg-Landau equation.
inline ComplexField pde_rhs(const ComplexField& u, SystemKind system, const PhysParams& p = {}) {
  if (system != SystemKind::CGL) throw ConfigError("pde_rhs: complex state requires CGL");
  if (!u.finite()) throw DomainError("pde_rhs: non-finite state");
  ComplexField lap = detail::laplacian_spectral_c(dft2(u));
  const cplx a{1.0, p.alpha};
  const cplx b{1.0, p.beta};
  for (std::size_t k = 0; k < u.size(); ++k) lap[k] = a * lap[k] + u[k] - b * std::norm(u[k]) * u[k];
  return lap;
}

/// Discrete free energy Σ[g_hom(c) + κ/2 |∇c|²]·dx·dy with spectral gradient.
inline double free_energy(const RealField& c, const PhysParams& p = {}) {
  const SpectralField c_hat = dft2(c);
  const RealField cx = detail::spectral_apply(c_hat, 1, 0);
  const RealField cy = detail::spectral_apply(c_hat, 0, 1);
  double e = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k)
    e += constitutive(clamp_concentration(c[k]), Constitutive::GHom, p) +
         0.5 * p.kappa * (cx[k] * cx[k] + cy[k] * cy[k]);
  return e * c.grid.dx * c.grid.dy;
}

struct IntegrateOptions {
  double t_end = 20.0;
  double dt = 0.002;
  std::size_t save_every = 5;
  double blowup = 1e6;
};

namespace detail {

inline std::size_t step_count(double t_end, double dt) {
  if (!(dt > 0.0)) throw ConfigError("integrate: dt must be positive");
  if (!(t_end >= 0.0)) throw ConfigError("integrate: t_end must be non-negative");
  const double ratio = t_end / dt;
  const double n = std::round(ratio);
  if (std::abs(ratio - n) > 1e-9 * std::max(1.0, n)) throw ConfigError("integrate: t_end/dt must be integral");
  return static_cast<std::size_t>(n);
}

/// (e^z − 1)/z, stable near zero.
inline cplx phi1(cplx z) {
  if (std::abs(z) < 1e-5) return 1.0 + z / 2.0 + z * z / 6.0;
  return (std::exp(z) - 1.0) / z;
}

inline double max_abs(const RealField& f) {
  double m = 0.0;
  for (double v : f.values) m = std::max(m, std::abs(v));
  return m;
}
inline double max_abs(const ComplexField& f) {
  double m = 0.0;
  for (const auto& v : f.values) m = std::max(m, std::abs(v));
  return m;
}

// Splitting mobility S = max_c c·D(c) = max_c R0(c) = 1/4.
inline constexpr double kSplitting = 0.25;

inline RealField imex_step(const RealField& u, SystemKind system, const PhysParams& p, double dt) {
  const auto& g = u.grid;
  const RealField rhs = pde_rhs(u, system, p);
  SpectralField u_hat = dft2(u);
  if (system == SystemKind::DKPZ) {
    RealField nonlin(g);
    const RealField hx = spectral_apply(u_hat, 1, 0);
    const RealField hy = spectral_apply(u_hat, 0, 1);
    for (std::size_t k = 0; k < u.size(); ++k) nonlin[k] = 0.5 * p.lambda_kpz * (hx[k] * hx[k] + hy[k] * hy[k]);
    const SpectralField n_hat = dft2(nonlin);
    for (std::size_t k1 = 0; k1 < g.nx; ++k1)
      for (std::size_t k2 = 0; k2 < g.ny; ++k2) {
        const auto [kx, ky] = wavenumber(g, k1, k2);
        const double z = -p.nu * (kx * kx + ky * ky) * dt;
        u_hat(k1, k2) = std::exp(z) * u_hat(k1, k2) + dt * phi1(z) * n_hat(k1, k2);
      }
    return real_part(idft2(u_hat));
  }
  const SpectralField r_hat = dft2(rhs);
  for (std::size_t k1 = 0; k1 < g.nx; ++k1)
    for (std::size_t k2 = 0; k2 < g.ny; ++k2) {
      const auto [kx, ky] = wavenumber(g, k1, k2);
      const double k2sum = kx * kx + ky * ky;
      const double stiff = system == SystemKind::CH ? kSplitting * p.kappa * k2sum * k2sum
                                                    : kSplitting * p.kappa * k2sum;
      u_hat(k1, k2) += dt * r_hat(k1, k2) / (1.0 + dt * stiff);
    }
  return real_part(idft2(u_hat));
}

inline ComplexField imex_step(const ComplexField& u, SystemKind, const PhysParams& p, double dt) {
  const auto& g = u.grid;
  ComplexField nonlin(g);
  const cplx b{1.0, p.beta};
  for (std::size_t k = 0; k < u.size(); ++k) nonlin[k] = u[k] - b * std::norm(u[k]) * u[k];
  SpectralField u_hat = dft2(u);
  const SpectralField n_hat = dft2(nonlin);
  const cplx a{1.0, p.alpha};
  for (std::size_t k1 = 0; k1 < g.nx; ++k1)
    for (std::size_t k2 = 0; k2 < g.ny; ++k2) {
      const auto [kx, ky] = wavenumber(g, k1, k2);
      const cplx z = -a * (kx * kx + ky * ky) * dt;
      u_hat(k1, k2) = std::exp(z) * u_hat(k1, k2) + dt * phi1(z) * n_hat(k1, k2);
    }
  return idft2(u_hat);
}

template <class T>
Field<T> stored(const Field<T>& u, SystemKind system) {
  if constexpr (std::is_same_v<T, double>) {
    if (system == SystemKind::DKPZ) {
      RealField out = u;
      const double m = mean(u);
      for (auto& v : out.values) v -= m;
      return out;
    }
  }
  return u;
}

}  // namespace detail

/// Advances a single first-order semi-implicit spectral step.
/// CH/AC: constant-coefficient stabilized splitting; dKPZ/CGL: exact linear part.
template <class T>
Field<T> solver_step(const Field<T>& u, SystemKind system, const PhysParams& p, double dt) {
  if constexpr (std::is_same_v<T, cplx>) {
    if (system != SystemKind::CGL) throw ConfigError("integrate: complex state requires CGL");
  } else {
    if (system == SystemKind::CGL) throw ConfigError("integrate: CGL requires a complex state");
  }
  return detail::imex_step(u, system, p, dt);
}

template <class T>
TrajectoryT<T> integrate(const Field<T>& ic, SystemKind system, const PhysParams& p,
                         const IntegrateOptions& opt, std::uint64_t seed = 0) {
  ic.grid.validate();
  p.validate();
  if (opt.save_every == 0) throw ConfigError("integrate: save_every must be >= 1");
  if (!ic.finite()) throw NumericError("integrate: non-finite initial condition", 0);
  const std::size_t n_steps = detail::step_count(opt.t_end, opt.dt);
  if (n_steps % opt.save_every != 0) throw ConfigError("integrate: step count must be a multiple of save_every");

  TrajectoryT<T> traj;
  traj.system = system;
  traj.params = p;
  traj.seed = seed;
  traj.times.push_back(0.0);
  traj.snapshots.push_back(detail::stored(ic, system));
  Field<T> u = ic;
  for (std::size_t step = 1; step <= n_steps; ++step) {
    u = solver_step(u, system, p, opt.dt);
    if (!u.finite() || detail::max_abs(u) > opt.blowup) throw NumericError("integrate: blow-up", step);
    if (step % opt.save_every == 0) {
      traj.times.push_back(static_cast<double>(step) * opt.dt);
      traj.snapshots.push_back(detail::stored(u, system));
    }
  }
  return traj;
}

namespace detail {
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
}  // namespace detail

/// CH/AC: 0.5 + U(−0.05, 0.05); dKPZ: U(−0.1, 0.1).
inline RealField initial_condition(SystemKind system, std::uint64_t seed, const GridSpec& grid = {}) {
  grid.validate();
  if (system == SystemKind::CGL) throw ConfigError("initial_condition: CGL state is complex");
  std::mt19937_64 rng(seed);
  RealField f(grid);
  for (auto& v : f.values) {
    const double u = 2.0 * detail::uniform01(rng) - 1.0;
    v = system == SystemKind::DKPZ ? 0.1 * u : 0.5 + 0.05 * u;
  }
  return f;
}

/// CGL: uniform over the complex disc of radius 0.1.
inline ComplexField initial_condition_complex(std::uint64_t seed, const GridSpec& grid = {}) {
  grid.validate();
  std::mt19937_64 rng(seed);
  ComplexField f(grid);
  for (auto& v : f.values) {
    const double r = 0.1 * std::sqrt(detail::uniform01(rng));
    const double th = 2.0 * std::numbers::pi * detail::uniform01(rng);
    v = std::polar(r, th);
  }
  return f;
}

/// Keeps snapshots at t ∈ {0, dt_obs, 2·dt_obs, …}, optionally up to t_max.
template <class T>
TrajectoryT<T> sample_sparse(const TrajectoryT<T>& traj, double dt_obs,
                             double t_max = std::numeric_limits<double>::infinity()) {
  if (traj.size() == 0) throw ConfigError("sample_sparse: empty trajectory");
  if (!(dt_obs > 0.0)) throw ConfigError("sample_sparse: dt_obs must be positive");
  std::size_t stride = 1;
  if (traj.size() > 1) {
    const double ratio = dt_obs / traj.spacing();
    const double r = std::round(ratio);
    if (r < 1.0 || std::abs(ratio - r) > 1e-6) throw ConfigError("sample_sparse: dt_obs is not a multiple of the trajectory spacing");
    stride = static_cast<std::size_t>(r);
  }
  TrajectoryT<T> out;
  out.system = traj.system;
  out.params = traj.params;
  out.seed = traj.seed;
  const double t0 = traj.times.front();
  for (std::size_t k = 0; k < traj.size(); k += stride) {
    if (traj.times[k] - t0 > t_max + 1e-9) break;
    out.times.push_back(traj.times[k]);
    out.snapshots.push_back(traj.snapshots[k]);
  }
  return out;
}

struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// truth + R·σ·(max − min)/2 with max/min over the whole trajectory.
/// `draw` supplies R per cell per snapshot (complex data: real part, then imaginary part).
template <class T>
TrajectoryT<T> add_noise(const TrajectoryT<T>& traj, double sigma, const std::function<double()>& draw) {
  if (sigma < 0.0) throw ConfigError("add_noise: sigma must be non-negative");
  TrajectoryT<T> out = traj;
  if (sigma == 0.0 || traj.size() == 0) return out;
  auto range_of = [&](auto proj) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : traj.snapshots)
      for (const auto& v : s.values) {
        lo = std::min(lo, proj(v));
        hi = std::max(hi, proj(v));
      }
    return hi - lo;
  };
  if constexpr (std::is_same_v<T, cplx>) {
    const double sr = sigma * range_of([](cplx v) { return v.real(); }) / 2.0;
    const double si = sigma * range_of([](cplx v) { return v.imag(); }) / 2.0;
    for (auto& s : out.snapshots)
      for (auto& v : s.values) {
        const double re = draw() * sr;
        const double im = draw() * si;
        v += cplx{re, im};
      }
  } else {
    const double scale = sigma * range_of([](double v) { return v; }) / 2.0;
    for (auto& s : out.snapshots)
      for (auto& v : s.values) v += draw() * scale;
  }
  return out;
}

template <class T>
TrajectoryT<T> add_noise(const TrajectoryT<T>& traj, const NoiseSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return add_noise(traj, spec.sigma, [&] { return normal(rng); });
}

/// Real observable fed to the learned model: the state itself, or |u| for CGL.
inline Trajectory observable(const ComplexTrajectory& traj) {
  Trajectory out;
  out.system = traj.system;
  out.params = traj.params;
  out.seed = traj.seed;
  out.times = traj.times;
  for (const auto& s : traj.snapshots) out.snapshots.push_back(abs_field(s));
  return out;
}

}  // namespace hpe
