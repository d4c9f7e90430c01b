// Acceptance run: one PASS/FAIL line per criterion. Criteria 8-10 depend on training
// budgets and are reported without gating the exit code.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hpe/discovery.hpp"
#include "hpe/io.hpp"
#include "hpe/trainer.hpp"
#include "test_util.hpp"

using namespace hpe;
using hpe::testing::band_limited;
using hpe::testing::grid;
using hpe::testing::random_field;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;
std::FILE* report_file = nullptr;

// stdout plus the report file
void emit(const char* f, auto... args) {
  std::printf(f, args...);
  std::fflush(stdout);
  if (report_file) {
    std::fprintf(report_file, f, args...);
    std::fflush(report_file);
  }
}

void report(int id, bool gated, bool pass, const std::string& detail) {
  const char* tag = gated ? (pass ? "PASS" : "FAIL") : (pass ? "PASS (report)" : "FAIL (report)");
  emit("[%s] criterion %d: %s\n", tag, id, detail.c_str());
  if (gated && !pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ad::Tensor random_tensor(ad::Shape s, std::uint64_t seed, bool cx = false, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(std::move(s), cx);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

ad::Var real_dot(ad::Tape& t, ad::Var out, std::uint64_t seed) {
  auto w = [&](ad::Var v, std::uint64_t s) { return ad::sum(ad::mul(v, t.constant(random_tensor(v.shape(), s)))); };
  if (!out.complex()) return w(out, seed);
  return ad::add(w(ad::real(out), seed), w(ad::imag(out), seed + 1));
}

// ------------------------------------------------------------------ 1

void spectral_core() {
  const auto t0 = Clock::now();
  double rt = 0.0, pars = 0.0, brute = 0.0;
  for (std::size_t n : {4, 8, 16, 32, 64, 128}) {
    const auto f = hpe::testing::random_complex(grid(n), n);
    const auto back = idft2(dft2(f));
    for (std::size_t k = 0; k < f.size(); ++k) rt = std::max(rt, std::abs(back[k] - f[k]));
    const auto s = dft2(f);
    double ex = 0.0, es = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      ex += std::norm(f[k]);
      es += std::norm(s.modes[k]);
    }
    pars = std::max(pars, std::abs(es / static_cast<double>(f.size()) - ex) / ex);
  }
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto f = random_field(grid(4), 100 + seed);
    const auto s = dft2(f);
    const auto b = hpe::testing::brute_dft(f);
    for (std::size_t k = 0; k < b.size(); ++k) brute = std::max(brute, std::abs(s.modes[k] - b[k]));
  }
  const double sec = seconds_since(t0);
  report(1, true, rt <= 1e-12 && pars <= 1e-10 && brute <= 1e-12 && sec < 1.0,
         fmt("spectral core: round trip %.2e (<=1e-12), Parseval %.2e (<=1e-10), 4x4 brute force %.2e (<=1e-12), "
             "%.3f s (<1 s)",
             rt, pars, brute, sec));
}

// ------------------------------------------------------------------ 2

double cgl_frequency_error() {
  PhysParams p;
  const GridSpec g{64, 4, 1.0, 1.0};
  const double q = 2.0 * std::numbers::pi * 3.0 / 64.0;
  ComplexField ic(g);
  for (std::size_t i = 0; i < g.nx; ++i)
    for (std::size_t j = 0; j < g.ny; ++j) ic(i, j) = std::polar(0.8, q * static_cast<double>(i));
  const auto traj = integrate(ic, SystemKind::CGL, p, {20.0, 0.002, 5});
  const std::size_t first = traj.size() / 2;
  double unwrapped = std::arg(traj.snapshots[first](0, 0)), prev = unwrapped;
  const double start = unwrapped;
  for (std::size_t k = first + 1; k < traj.size(); ++k) {
    const double a = std::arg(traj.snapshots[k](0, 0));
    double d = a - prev;
    while (d > std::numbers::pi) d -= 2.0 * std::numbers::pi;
    while (d < -std::numbers::pi) d += 2.0 * std::numbers::pi;
    unwrapped += d;
    prev = a;
  }
  const double omega = -(unwrapped - start) / (traj.times.back() - traj.times[first]);
  const double expect = p.alpha * q * q + p.beta * (1.0 - q * q);
  return std::abs(omega - expect) / std::abs(expect);
}

void solver_physics() {
  const auto t0 = Clock::now();
  // CH mass and energy over 2000 steps, every step saved
  const auto ic = initial_condition(SystemKind::CH, 3, grid(64));
  const auto ch = integrate(ic, SystemKind::CH, {}, {4.0, 0.002, 1});
  double drift = 0.0;
  const double m0 = mean(ic);
  for (const auto& s : ch.snapshots) drift = std::max(drift, std::abs(mean(s) - m0));
  double rise = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k < ch.size(); ++k)
    rise = std::max(rise, free_energy(ch.snapshots[k]) - free_energy(ch.snapshots[k - 1]));
  const auto ac = integrate(initial_condition(SystemKind::AC, 5, grid(64)), SystemKind::AC, {}, {4.0, 0.002, 1});
  for (std::size_t k = 1; k < ac.size(); ++k)
    rise = std::max(rise, free_energy(ac.snapshots[k]) - free_energy(ac.snapshots[k - 1]));

  // dKPZ with λ = 0 against exact heat-kernel decay of every mode
  PhysParams p;
  p.lambda_kpz = 0.0;
  const auto g = grid(32);
  const auto h0 = random_field(g, 8, -0.1, 0.1);
  const auto kpz = integrate(h0, SystemKind::DKPZ, p, {1.0, 0.002, 500});
  auto modes = dft2(h0);
  for (std::size_t k1 = 0; k1 < g.nx; ++k1)
    for (std::size_t k2 = 0; k2 < g.ny; ++k2) {
      const auto [kx, ky] = wavenumber(g, k1, k2);
      modes(k1, k2) *= std::exp(-p.nu * (kx * kx + ky * ky));
    }
  modes(0, 0) = 0.0;
  const double heat = hpe::testing::max_abs_diff(kpz.snapshots.back(), real_part(idft2(modes)));

  const double cgl = cgl_frequency_error();
  const double sec = seconds_since(t0);
  report(2, true, drift < 1e-8 && rise <= 1e-6 && heat <= 1e-6 && cgl < 0.01 && sec < 120.0,
         fmt("solver physics: CH mass drift %.2e (<1e-8) over 2000 steps, max per-step free-energy rise %.2e "
             "(<=1e-6, CH and AC), dKPZ heat decay %.2e (<=1e-6), CGL plane-wave frequency rel. error %.2e (<1%%), "
             "%.1f s (<120 s)",
             drift, rise, heat, cgl, sec));
}

// ------------------------------------------------------------------ 3

void differentiation() {
  using namespace hpe::ad;
  const auto t0 = Clock::now();
  double smooth = 0.0, kinked = 0.0, model = 0.0;
  {
    Parameter x("x", random_tensor({6, 5}, 32)), w("w", random_tensor({5, 4}, 33));
    smooth = std::max(smooth, grad_check([&](Tape& t) { return mean(gelu(matmul(t.param(x), t.param(w)))); },
                                         {&x, &w}).max_rel_error);
  }
  {
    Tensor v = random_tensor({80}, 34, false, 0.03, 1.0);
    for (std::size_t k = 0; k < v.data.size(); k += 2) v.data[k] = -v.data[k];
    Parameter x("x", v);
    const Tensor wt = random_tensor({80}, 35);
    smooth = std::max(smooth, grad_check([&](Tape& t) { return sum(mul(softshrink(t.param(x), 0.01), t.constant(wt))); },
                                         {&x}).max_rel_error);
  }
  {
    Parameter zc("zc", random_tensor({4, 4, 3}, 40, true)), xr("xr", random_tensor({4, 4, 3}, 41));
    Parameter w("w", random_tensor({2, 3, 2}, 42, true)), wr("wr", random_tensor({4, 3}, 49));
    Parameter b("b", random_tensor({4}, 43, true));
    auto f = [&](Tape& t) {
      Var z = add(dft2(t.param(xr)), t.param(zc));
      Var m = add_bias(block_matmul(reshape(z, {8, 6}), t.param(w)), t.param(b));
      m = dropout(softshrink(gelu(m), 0.01), 0.3, 5, true);
      Var back = idft2(reshape(m, {4, 2, 4}));
      Var r = sub(real(back), imag(back));
      Var rr = matmul(reshape(r, {8, 4}), select(stack({t.param(wr), t.param(wr)}), 1));
      return add(real_dot(t, rr, 45), real_dot(t, mul(t.param(xr), t.param(xr)), 46));
    };
    kinked = std::max(kinked, grad_check(f, {&zc, &xr, &w, &wr, &b}).max_rel_error);
  }
  {
    Parameter f("f", random_tensor({6, 8}, 50)), c("c", random_tensor({6, 8}, 51, false, 0.2, 0.8));
    auto fn = [&](Tape& t) {
      Var fv = t.param(f), cv = t.param(c);
      Var lap = fd_laplacian(fv, 0.5, 2.0);
      Var div = fd_div(mul(cv, fd_diff(fv, 0, 0.5)), fd_diff(cv, 1, 2.0), 0.5, 2.0);
      Var k = kernel_map(fv, cv, 0.1, 1e-3);
      return add(add(real_dot(t, lap, 52), real_dot(t, div, 53)), real_dot(t, k, 54));
    };
    kinked = std::max(kinked, grad_check(fn, {&f, &c}).max_rel_error);
  }
  for (Scenario sc : {Scenario::BlackBlack, Scenario::WhiteBlack, Scenario::BlackWhite, Scenario::Discovery}) {
    auto m = make_model(sc, grid(16), {}, {}, 0.01, {}, 20);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto* p : m.params())
      for (auto& v : p->value.data) v += u(rng);
    const auto c = random_field(grid(16), 22, 0.3, 0.7);
    const auto target = random_field(grid(16), 23, -0.1, 0.1);
    auto f = [&](Tape& t) {
      Var d = sub(f_hat(t, m, t.constant(to_tensor(c)), true, 4), t.constant(to_tensor(target)));
      return mean(mul(d, d));
    };
    model = std::max(model, grad_check(f, m.params()).max_rel_error);
  }
  const double sec = seconds_since(t0);
  report(3, true, smooth < 1e-6 && kinked < 1e-4 && model < 1e-4 && sec < 300.0,
         fmt("differentiation: smooth primitives %.2e (<1e-6), all primitives incl. softshrink/dropout/stencils/kernel "
             "map %.2e (<1e-4), full HPE forward at 16x16 (4 scenarios) %.2e (<1e-4), %.1f s (<300 s)",
             smooth, kinked, model, sec));
}

// ------------------------------------------------------------------ 4

void exact_formulas() {
  double worst = 0.0;
  std::string where;
  auto check = [&](const char* what, double a, double b) {
    const double e = std::abs(a - b);
    if (!(e <= worst)) {
      worst = e;
      where = what;
    }
  };
  const PhysParams p;
  for (int i = 1; i < 100; ++i) {
    const double c = i / 100.0;
    check("mu_hom", mu_hom(c), std::log(c) - std::log1p(-c) + 3.0 * (1.0 - 2.0 * c));
    check("g_hom", constitutive(c, Constitutive::GHom), c * std::log(c) + (1 - c) * std::log(1 - c) + 3.0 * c * (1 - c));
    check("D", constitutive(c, Constitutive::D), 1.0 - c);
    check("M", constitutive(c, Constitutive::M), c - c * c);
    check("R0", constitutive(c, Constitutive::R0), c - c * c);
  }
  {
    // truth + R·σ·(max − min)/2 with R from a fixed-seed standard normal stream
    Trajectory tr;
    for (int k = 0; k < 3; ++k) {
      tr.times.push_back(0.1 * k);
      tr.snapshots.push_back(random_field(grid(8), 60 + k, -0.2, 1.3));
    }
    const double sigma = 0.1;
    const auto noisy = add_noise(tr, NoiseSpec{sigma, 77});
    double lo = 1e300, hi = -1e300;
    for (const auto& s : tr.snapshots)
      for (double v : s.values) lo = std::min(lo, v), hi = std::max(hi, v);
    std::mt19937_64 rng(77);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t k = 0; k < tr.size(); ++k)
      for (std::size_t i = 0; i < tr.snapshots[k].size(); ++i) {
        const double r = n01(rng);
        check("noise", noisy.snapshots[k][i], tr.snapshots[k][i] + r * sigma * (hi - lo) / 2.0);
      }
  }
  {
    const auto a = random_field(grid(16), 70), b = random_field(grid(16), 71);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    check("rmse", rmse(a, b), std::sqrt(s / 256.0));
  }
  for (double x : {0.005, 0.02, -0.02, 0.01, -0.0099, 1.7, -3.2})
    check("softshrink", ad::softshrink(x, 0.01), (x > 0 ? 1.0 : -1.0) * std::max(std::abs(x) - 0.01, 0.0));
  {
    const auto raw = random_field(grid(8), 72);
    const auto c = random_field(grid(8), 73, 0.0, 1.0);
    const KernelMapConfig kc{0.05, 1e-8};
    const auto out = kernel_consistency_map(raw, c, kc);
    const double n = static_cast<double>(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < c.size(); ++j) {
        const double k = std::exp(-(c[i] - c[j]) * (c[i] - c[j]) / (2.0 * kc.sigma * kc.sigma));
        num += k * raw[j];
        den += k;
      }
      check("kernel map", out[i], num / (den + n * kc.epsilon));
    }
  }
  {
    const dsr::TokenLibrary lib;
    const auto pol = dsr::init_policy(lib, 32, 4);
    for (std::uint64_t s = 0; s < 200; ++s) {
      std::vector<double> trace;
      const auto t = dsr::sample_expression(pol, lib, 24, s, &trace);
      double prod = 1.0;
      for (double v : trace) prod *= v;
      const auto l = dsr::sequence_likelihood(pol, lib, t, 24);
      check("likelihood", l.prob, prod);
      double lp = 0.0;
      for (double v : trace) lp += std::log(v);
      check("log likelihood", l.log_prob, lp);
    }
    const dsr::TokenLibrary small{{dsr::Op::Add, dsr::Op::Mul, dsr::Op::Var, dsr::Op::Const}};
    dsr::PolicyNet flat = dsr::init_policy(small, 8, 0);
    for (auto* q : flat.params()) std::fill(q->value.data.begin(), q->value.data.end(), 0.0);
    dsr::ExpressionTree seq;
    seq.tokens = {dsr::Op::Add, dsr::Op::Mul, dsr::Op::Var, dsr::Op::Const, dsr::Op::Var};
    seq.constants = {1.0};
    check("uniform likelihood", dsr::sequence_likelihood(flat, small, seq, 24).prob, std::pow(4.0, -5.0));
  }
  {
    std::mt19937_64 rng(80);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double eps : {0.05, 0.2, 0.5, 1.0}) {
      std::vector<double> r(137);
      for (auto& v : r) v = std::round(u(rng) * 40.0) / 40.0;
      std::vector<double> sorted = r;
      std::sort(sorted.begin(), sorted.end());
      const double pos = (1.0 - eps) * static_cast<double>(sorted.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      const double q = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
      const auto f = dsr::risk_filter(r, eps);
      check("quantile", f.threshold, q);
      std::vector<std::size_t> kept;
      for (std::size_t i = 0; i < r.size(); ++i)
        if (r[i] >= q) kept.push_back(i);
      check("filter membership", kept == f.kept ? 0.0 : 1.0, 0.0);
    }
  }
  report(4, true, worst <= 1e-12,
         fmt("exact formulas: constitutive laws, noise, RMSE, softshrink, kernel map, likelihood, quantile filter; "
             "worst deviation %.2e in %s (<=1e-12)",
             worst, where.empty() ? "-" : where.c_str()));
}

// ------------------------------------------------------------------ 5

std::size_t afno_count(std::size_t in, std::size_t out, std::size_t tokens) {
  const std::size_t d = 32, p = 16;
  const std::size_t freq = 2 * 2 * (16 * 32 + 32 * 16) + 2 * d;  // complex weights and bias, as reals
  return in * p * d + d + tokens * d + freq + (d * 64 + 64 + 64 * d + d) + (d * out * p + out * p);
}

void architecture() {
  AFNOConfig c;
  auto p = init_afno(c, 64, 64, 1);
  ad::Tape t;
  const ad::Var tok = patch_embed(t, t.constant(random_tensor({1, 64, 64}, 2)), p);
  const bool tokens_ok = p.h_tokens() == 16 && p.w_tokens() == 16 && tok.shape() == ad::Shape{256, 32};
  const bool freq_ok = frequency_layer_complex_count(c) == 2u * (16 * 32 + 32 * 16) + 32;
  auto bb = make_model(Scenario::BlackBlack, grid(64), {}, {}, 0.01, {}, 3);
  auto wb = make_model(Scenario::WhiteBlack, grid(64));
  auto bw = make_model(Scenario::BlackWhite, grid(64));
  auto dv = make_model(Scenario::Discovery, grid(64));
  const bool count_ok = bb.scalar_count() == afno_count(1, 3, 256) + afno_count(4, 1, 256) &&
                        wb.scalar_count() == afno_count(4, 1, 256) && bw.scalar_count() == afno_count(1, 3, 256) &&
                        dv.scalar_count() == afno_count(1, 2, 256);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  for (auto* q : bb.params())
    for (auto& v : q->value.data) v = n01(rng);
  const auto path = std::filesystem::temp_directory_path() / "hpe_acceptance.hpew";
  io::save_model(path, bb);
  auto back = io::load_model(path);
  bool bitwise = back.params().size() == bb.params().size();
  for (std::size_t i = 0; bitwise && i < bb.params().size(); ++i)
    bitwise = std::memcmp(bb.params()[i]->value.data.data(), back.params()[i]->value.data.data(),
                          bb.params()[i]->value.data.size() * sizeof(double)) == 0;
  std::filesystem::remove(path);
  report(5, true, tokens_ok && freq_ok && count_ok && bitwise,
         fmt("architecture: 64x64 -> %zux%zux%zu tokens, frequency layer %zu complex entries, scenario parameter "
             "counts %s (black-black %zu), checkpoint round trip %s",
             p.h_tokens(), p.w_tokens(), tok.shape().back(), frequency_layer_complex_count(c),
             count_ok ? "exact" : "MISMATCH", bb.scalar_count(), bitwise ? "bitwise" : "NOT bitwise"));
}

// ------------------------------------------------------------------ 6

struct Law {
  const char* name;
  std::function<double(double)> f;
  bool exact;  // algebraic recovery required, otherwise max-abs on (0.05, 0.95)
};

void dsr_recovery(std::size_t seeds) {
  const std::vector<Law> laws{{"1-c", [](double c) { return 1.0 - c; }, true},
                              {"c(1-c)", [](double c) { return c * (1.0 - c); }, true},
                              {"mu_hom", [](double c) { return mu_hom(c); }, false}};
  bool all = true;
  std::string detail;
  for (const auto& law : laws) {
    const auto table = dsr::law_table(law.f);
    std::size_t ok = 0;
    double slowest = 0.0, total = 0.0;
    std::string shown;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
      dsr::DSRConfig cfg;
      cfg.seed = seed;
      const auto r = dsr::discover(table, cfg);
      slowest = std::max(slowest, r.seconds);
      total += r.seconds;
      double dev = 0.0;
      const double lo = law.exact ? 1e-3 : 0.05, hi = law.exact ? 1.0 - 1e-3 : 0.95;
      for (int i = 0; i < 2000; ++i) {
        const double c = lo + (hi - lo) * (i + 0.5) / 2000.0;
        const auto v = dsr::evaluate_expression(r.best, c);
        dev = std::max(dev, v ? std::abs(*v - law.f(c)) : std::numeric_limits<double>::infinity());
      }
      // algebraic equality is judged numerically on a dense grid
      const bool pass = law.exact ? (r.best_score.nrmse < 1e-4 && dev < 1e-8) : dev < 0.05;
      ok += pass;
      emit("    %-7s seed %llu: %s  nrmse %.3e  max-abs %.3e  iterations %zu  %.1f s  %s\n", law.name,
                  static_cast<unsigned long long>(seed), pass ? "ok  " : "miss", r.best_score.nrmse, dev,
                  r.iterations_run, r.seconds, dsr::infix(r.best).c_str());
      if (seed == 0) shown = dsr::infix(r.best);
    }
    const bool law_ok = ok >= std::min<std::size_t>(3, seeds) && slowest < 600.0;
    all = all && law_ok;
    detail += fmt("%s %zu/%zu (slowest run %.0f s, total %.0f s); ", law.name, ok, seeds, slowest, total);
  }
  report(6, true, all, "DSR recovery: " + detail + "need >=3 of 5 seeds, <=2000 iterations, <600 s per run");
}

// ------------------------------------------------------------------ 7

void discovery_structure() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = band_limited(grid(64), seed, 0.5, 0.2);
    const auto ch = known_term_channels(c);
    worst = std::max(worst, hpe::testing::rms_diff(known_combination(ch[0], ch[1], ch[2]), pde_rhs(c, SystemKind::CH)));
  }
  report(7, true, worst < 0.05,
         fmt("discovery-mode structure: oracle channels through known_combination vs spectral CH rhs, worst RMS %.3e "
             "(<0.05) over 5 band-limited fields",
             worst));
}

// ------------------------------------------------------------------ 8-10

struct Budget {
  std::size_t n = 32;
  std::size_t epochs = 20;
  std::size_t sweep_epochs = 10;
  std::size_t seeds = 3;
  std::string sweep_csv = "acceptance_sweep.csv";
};

struct ChData {
  Trajectory truth;  // 0.1 s spacing over [0, 20]
  Trajectory obs;    // 91 snapshots over [0, 9]
};

ChData ch_data(std::size_t n) {
  const auto dense = integrate(initial_condition(SystemKind::CH, 11, grid(n)), SystemKind::CH, {}, {20.0, 0.002, 5});
  ChData d;
  d.truth = sample_sparse(dense, 0.1);
  d.obs = sample_sparse(dense, 0.1, 9.0);
  return d;
}

EvalReport fit(const ChData& d, Scenario sc, std::uint64_t seed, std::size_t epochs) {
  auto m = make_model(sc, d.obs.snapshots.front().grid, {}, d.obs.params, 0.01, {}, seed);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  train(m, ObservationSet(d.obs), cfg);
  return evaluate(m, d.truth.snapshots.front(), d.truth, 9.0);
}

void training_criteria(const Budget& b) {
  const auto t0 = Clock::now();
  const ChData d = ch_data(b.n);
  emit("    budget: %zux%zu grid, %zu epochs, %zu seeds, %zu observations (reference setup: 64x64)\n",
              b.n, b.n, b.epochs, b.seeds, d.obs.size());
  double ia[3] = {0, 0, 0}, ea[3] = {0, 0, 0};
  const Scenario scs[3] = {Scenario::BlackBlack, Scenario::WhiteBlack, Scenario::BlackWhite};
  for (int s = 0; s < 3; ++s)
    for (std::uint64_t seed = 0; seed < b.seeds; ++seed) {
      const auto rep = fit(d, scs[s], seed, b.epochs);
      emit("    %-11s seed %llu: interp %.4f  extrap %.4f\n", to_string(scs[s]).c_str(),
           static_cast<unsigned long long>(seed), rep.interp_avg, rep.extrap_avg);
      ia[s] += rep.interp_avg / static_cast<double>(b.seeds);
      ea[s] += rep.extrap_avg / static_cast<double>(b.seeds);
    }
  report(8, false, ia[0] <= 0.05 && ea[0] <= 0.15,
         fmt("CH forward task (black-black): interpolation avg RMSE %.4f (target <=0.05, reference 0.021), extrapolation "
             "%.4f (target <=0.15, reference 0.077)",
             ia[0], ea[0]));
  const double gain_wb = 1.0 - ea[1] / ea[0], gain_bw = 1.0 - ea[2] / ea[0];
  report(9, false, gain_wb >= 0.10 && gain_bw > 0.0,
         fmt("physics-embedding ordering: extrapolation white-black %.4f (%+.1f%% vs black-black, target >=10%%, reference "
             "23.7%%), black-white %.4f (%+.1f%%, target >0, reference 17.3%%)",
             ea[1], 100.0 * gain_wb, ea[2], 100.0 * gain_bw));

  SweepSpec spec;
  spec.dt_obs = {0.1, 0.2, 0.4, 0.8};
  spec.sigma = {0.0, 0.05, 0.1, 0.2};
  spec.seeds = {0};
  TrainConfig cfg;
  cfg.epochs = b.sweep_epochs;
  const GridSpec g = d.truth.snapshots.front().grid;
  const auto cells = robustness_sweep(
      d.truth, spec, [&](std::uint64_t seed) { return make_model(Scenario::BlackBlack, g, {}, d.truth.params, 0.01, {}, seed); },
      cfg);
  std::vector<std::vector<double>> rows;
  double lo = 1e300, hi = 0.0;
  for (const auto& c : cells) {
    rows.push_back({c.dt_obs, c.sigma, c.interp_avg, c.extrap_avg, static_cast<double>(c.runs)});
    lo = std::min(lo, c.interp_avg);
    hi = std::max(hi, c.interp_avg);
  }
  io::write_csv(b.sweep_csv, {"dt_obs", "sigma", "interp_avg", "extrap_avg", "runs"}, rows);
  report(10, false, cells.size() == 16,
         fmt("robustness sweep: %zu cells written to %s, interpolation RMSE range %.4f..%.4f (ratio %.2f), %.0f s total "
             "for criteria 8-10",
             cells.size(), b.sweep_csv.c_str(), lo, hi, hi / lo, seconds_since(t0)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Budget b;
  std::size_t dsr_seeds = 5;
  bool skip_soft = false;
  app.add_option("--grid", b.n, "grid side for the training criteria")->capture_default_str();
  app.add_option("--epochs", b.epochs, "epochs per training run")->capture_default_str();
  app.add_option("--sweep-epochs", b.sweep_epochs)->capture_default_str();
  app.add_option("--train-seeds", b.seeds)->capture_default_str();
  app.add_option("--sweep-csv", b.sweep_csv)->capture_default_str();
  app.add_option("--dsr-seeds", dsr_seeds)->capture_default_str();
  app.add_flag("--skip-soft", skip_soft, "skip criteria 8-10");
  std::string report_path = "acceptance_report.txt";
  app.add_option("--report", report_path, "copy of the output")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  report_file = std::fopen(report_path.c_str(), "w");

  spectral_core();
  solver_physics();
  differentiation();
  exact_formulas();
  architecture();
  discovery_structure();
  dsr_recovery(dsr_seeds);
  if (!skip_soft) training_criteria(b);
  emit("%s: %d hard criteria failed\n", failures ? "FAILED" : "OK", failures);
  if (report_file) std::fclose(report_file);
  return failures ? 1 : 0;
}
