#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hpe/trainer.hpp"
#include "test_util.hpp"

using namespace hpe;
using hpe::testing::grid;
using hpe::testing::random_field;

namespace toy {

// F̂(u) = a ⊙ u with a learnable per-cell rate
struct LinearModel {
  double dt = 0.01;
  ad::Parameter a{"a", ad::Tensor({4, 4}, std::vector<double>(16, 0.0))};
  std::vector<ad::Parameter*> params() { return {&a}; }
};

inline ad::Var f_hat(ad::Tape& t, LinearModel& m, ad::Var u, bool, std::uint64_t) { return ad::mul(t.param(m.a), u); }

// the spectral CH right-hand side, nothing learnable
struct OracleModel {
  double dt = 0.01;
  GridSpec grid;
  std::vector<ad::Parameter*> params() { return {}; }
};

inline ad::Var f_hat(ad::Tape& t, OracleModel& m, ad::Var u, bool, std::uint64_t) {
  return t.constant(to_tensor(pde_rhs(to_field(u, m.grid), SystemKind::CH)));
}

}  // namespace toy

namespace {

Trajectory exponential_obs(double rate, std::size_t n_obs, double dt_obs, std::uint64_t seed) {
  Trajectory tr;
  RealField u = random_field(grid(4), seed, 0.5, 1.5);
  const double factor = std::pow(1.0 + 0.01 * rate, std::llround(dt_obs / 0.01));
  for (std::size_t k = 0; k < n_obs; ++k) {
    tr.times.push_back(static_cast<double>(k) * dt_obs);
    tr.snapshots.push_back(u);
    for (auto& v : u.values) v *= factor;
  }
  return tr;
}

}  // namespace

TEST(MseLoss, Values) {
  const auto a = random_field(grid(4), 1);
  EXPECT_EQ(mse_loss({a}, {a}), 0.0);
  RealField b = a;
  for (auto& v : b.values) v += 0.1;
  EXPECT_NEAR(mse_loss({b}, {a}), 0.01, 1e-15);
  const auto c = random_field(grid(4), 2), d = random_field(grid(4), 3);
  double s = 0.0;
  for (std::size_t i = 0; i < 16; ++i) s += (a[i] - c[i]) * (a[i] - c[i]) + (b[i] - d[i]) * (b[i] - d[i]);
  EXPECT_NEAR(mse_loss({a, b}, {c, d}), s / 32.0, 1e-14);
  EXPECT_THROW(mse_loss({a}, {a, b}), ConfigError);
}

TEST(Rmse, Values) {
  const auto a = random_field(grid(4), 4);
  EXPECT_EQ(rmse(a, a), 0.0);
  RealField b = a;
  for (auto& v : b.values) v += 0.1;
  EXPECT_NEAR(rmse(b, a), 0.1, 1e-15);
  // [0, 1] against [1, 1]: sqrt(1/2)
  RealField p(grid(4), 1.0), q = p;
  for (std::size_t i = 0; i < 8; ++i) p[i] = 0.0;
  EXPECT_NEAR(rmse(p, q), 0.707107, 1e-6);
}

TEST(Adam, FirstStepMagnitude) {
  ad::Parameter p("p", ad::Tensor({3}, {0.0, 1.0, -2.0}));
  p.grad = {1.0, -1.0, 1.0};
  AdamState s;
  TrainConfig c;
  const auto before = p.value.data;
  ASSERT_TRUE(adam_update({&p}, s, c, 0));
  for (std::size_t k = 0; k < 3; ++k) {
    const double d = std::abs(p.value.data[k] - before[k]);
    EXPECT_GT(d, 0.9 * c.lr);
    EXPECT_LE(d, c.lr);
    EXPECT_NEAR(d, c.lr / (1.0 + c.eps), 1e-15);
  }
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  ad::Parameter p("p", ad::Tensor({2}, {0.5, -0.5}));
  AdamState s;
  TrainConfig c;
  p.grad = {1.0, 1.0};
  adam_update({&p}, s, c, 0);
  const auto after_first = p.value.data;
  const double m0 = s.m[0][0], v0 = s.v[0][0];
  p.grad = {0.0, 0.0};
  adam_update({&p}, s, c, 0);
  EXPECT_NEAR(s.m[0][0], 0.9 * m0, 1e-18);
  EXPECT_NEAR(s.v[0][0], 0.999 * v0, 1e-18);
  // the decayed first moment still moves the parameter; a fresh state does not
  AdamState fresh;
  ad::Parameter q("q", ad::Tensor({2}, {0.5, -0.5}));
  q.grad = {0.0, 0.0};
  adam_update({&q}, fresh, c, 0);
  EXPECT_EQ(q.value.data, (std::vector<double>{0.5, -0.5}));
  EXPECT_NE(p.value.data, after_first);
}

TEST(Adam, StepDecaySchedule) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(effective_lr(c, 0), 1e-3);
  EXPECT_DOUBLE_EQ(effective_lr(c, 499), 1e-3);
  EXPECT_DOUBLE_EQ(effective_lr(c, 500), 5e-4);
  EXPECT_DOUBLE_EQ(effective_lr(c, 1000), 2.5e-4);
}

TEST(Adam, LrScaleCovariance) {
  auto step = [](double lr) {
    ad::Parameter p("p", ad::Tensor({2}, {0.25, 0.75}));
    p.grad = {0.3, -7.0};
    AdamState s;
    TrainConfig c;
    c.lr = lr;
    adam_update({&p}, s, c, 0);
    return p.value.data[1] - 0.75;
  };
  EXPECT_NEAR(step(2e-3), 2.0 * step(1e-3), 1e-15);
}

TEST(Adam, NonFiniteGradientSkips) {
  ad::Parameter p("p", ad::Tensor({2}, {1.0, 2.0}));
  p.grad = {std::nan(""), 1.0};
  AdamState s;
  EXPECT_FALSE(adam_update({&p}, s, TrainConfig{}, 0));
  EXPECT_EQ(s.skipped, 1u);
  EXPECT_EQ(s.t, 0u);
  EXPECT_EQ(p.value.data, (std::vector<double>{1.0, 2.0}));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.bptt_window = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ToyLossDecreasesMonotonically) {
  toy::LinearModel m;
  ObservationSet obs(exponential_obs(-0.5, 2, 0.1, 5));
  TrainConfig c;
  c.epochs = 5;
  c.lr = 1e-2;
  const auto r = train(m, obs, c);
  ASSERT_EQ(r.loss_history.size(), 5u);
  EXPECT_EQ(r.steps, 5u);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_LT(r.loss_history[k], r.loss_history[k - 1]);
}

TEST(Train, ToyRecoversRate) {
  toy::LinearModel m;
  ObservationSet obs(exponential_obs(-0.5, 11, 0.1, 6));
  TrainConfig c;
  c.epochs = 300;
  c.lr = 2e-2;
  train(m, obs, c);
  for (double a : m.a.value.data) EXPECT_NEAR(a, -0.5, 0.02);
}

TEST(Train, BitwiseReproducible) {
  auto run = [] {
    auto m = make_model(Scenario::WhiteBlack, grid(16), {}, {}, 0.01, {}, 7);
    Trajectory tr;
    for (std::size_t k = 0; k < 3; ++k) {
      tr.times.push_back(0.1 * k);
      tr.snapshots.push_back(random_field(grid(16), 8 + k, 0.3, 0.7));
    }
    ObservationSet obs(tr);
    TrainConfig c;
    c.epochs = 2;
    c.seed = 3;
    return train(m, obs, c).loss_history;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, OracleModelTakesNoSteps) {
  IntegrateOptions opt;
  opt.t_end = 0.5;
  opt.dt = 0.001;
  opt.save_every = 100;
  const auto truth = integrate(hpe::testing::band_limited(grid(16), 9, 0.5, 0.1), SystemKind::CH, {}, opt);
  const double sigma = 0.02;
  ObservationSet obs(add_noise(truth, NoiseSpec{sigma, 10}));
  toy::OracleModel m;
  m.grid = grid(16);
  TrainConfig c;
  c.epochs = 1;
  const auto r = train(m, obs, c);
  EXPECT_EQ(r.steps, 0u);
  ASSERT_EQ(r.loss_history.size(), 1u);
  // noise floor: two independent noisy endpoints
  double lo = 1e9, hi = -1e9;
  for (const auto& s : truth.snapshots)
    for (double v : s.values) lo = std::min(lo, v), hi = std::max(hi, v);
  const double noise_var = std::pow(sigma * (hi - lo) / 2.0, 2);
  EXPECT_GT(r.loss_history[0], 0.5 * noise_var);
  EXPECT_LT(r.loss_history[0], 4.0 * noise_var);
}

TEST(Train, ReadsOnlyObservations) {
  toy::LinearModel m;
  ObservationSet obs(exponential_obs(-0.5, 6, 0.1, 11));
  TrainConfig c;
  c.epochs = 3;
  c.bptt_window = 2;
  train(m, obs, c);
  // 4 segments per epoch, each reading its start plus two targets
  EXPECT_EQ(obs.reads(), 3u * 4u * 3u);
}

TEST(Train, RejectsIncommensurateSpacing) {
  toy::LinearModel m;
  m.dt = 0.03;
  ObservationSet obs(exponential_obs(-0.5, 3, 0.1, 12));
  EXPECT_THROW(train(m, obs, TrainConfig{}), ConfigError);
}

TEST(Train, EarlyStopsWithoutImprovement) {
  toy::OracleModel m;
  m.grid = grid(16);
  Trajectory tr;
  for (std::size_t k = 0; k < 3; ++k) {
    tr.times.push_back(0.1 * k);
    tr.snapshots.push_back(RealField(grid(16), 0.5));
  }
  ObservationSet obs(tr);
  TrainConfig c;
  c.epochs = 50;
  c.patience = 4;
  const auto r = train(m, obs, c);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.epochs_run, 5u);
}

TEST(Evaluate, AveragesMatchCurve) {
  const auto u0 = hpe::testing::band_limited(grid(16), 13, 0.5, 0.1);
  Trajectory truth;
  for (std::size_t k = 0; k <= 20; ++k) {
    truth.times.push_back(k * 1.0);
    RealField f = u0;
    for (auto& v : f.values) v += 0.01 * k;
    truth.snapshots.push_back(f);
  }
  // zero right-hand side: error at t = k is exactly 0.01·k
  const auto rep = evaluate([](const RealField& u) { return RealField(u.grid, 0.0); }, 0.5, u0, truth, 9.0);
  ASSERT_EQ(rep.rmse_per_time.size(), 21u);
  double si = 0.0, se = 0.0;
  for (std::size_t k = 1; k <= 9; ++k) si += rep.rmse_per_time[k];
  for (std::size_t k = 10; k <= 20; ++k) se += rep.rmse_per_time[k];
  EXPECT_NEAR(rep.interp_avg, si / 9.0, 1e-12);
  EXPECT_NEAR(rep.extrap_avg, se / 11.0, 1e-12);
  EXPECT_NEAR(rep.rmse_per_time[7], 0.07, 1e-12);
}

TEST(Evaluate, RejectsOffGridTimes) {
  Trajectory truth;
  truth.times = {0.0, 0.015};
  truth.snapshots = {RealField(grid(4)), RealField(grid(4))};
  EXPECT_THROW(evaluate([](const RealField& u) { return u; }, 0.01, RealField(grid(4)), truth), ConfigError);
}

TEST(Sweep, CountsRunsAndCells) {
  IntegrateOptions opt;
  opt.t_end = 0.4;
  opt.dt = 0.01;
  opt.save_every = 1;
  const auto truth = integrate(hpe::testing::band_limited(grid(16), 14, 0.5, 0.1), SystemKind::CH, {}, opt);
  std::size_t made = 0;
  auto make = [&](std::uint64_t seed) {
    ++made;
    return make_model(Scenario::WhiteBlack, grid(16), {}, {}, 0.01, {}, seed);
  };
  TrainConfig c;
  c.epochs = 1;
  SweepSpec spec{{0.1, 0.2}, {0.0, 0.05}, {1, 2}, 0.3, 0.3};
  const auto cells = robustness_sweep(truth, spec, make, c);
  EXPECT_EQ(made, 8u);
  ASSERT_EQ(cells.size(), 4u);
  for (const auto& cell : cells) {
    EXPECT_EQ(cell.runs, 2u);
    EXPECT_TRUE(std::isfinite(cell.interp_avg));
    EXPECT_TRUE(std::isfinite(cell.extrap_avg));
  }
}

TEST(Sweep, SingleCellEqualsEvaluate) {
  IntegrateOptions opt;
  opt.t_end = 0.4;
  opt.dt = 0.01;
  opt.save_every = 1;
  const auto truth = integrate(hpe::testing::band_limited(grid(16), 15, 0.5, 0.1), SystemKind::CH, {}, opt);
  auto make = [](std::uint64_t seed) { return make_model(Scenario::WhiteBlack, grid(16), {}, {}, 0.01, {}, seed); };
  TrainConfig c;
  c.epochs = 2;
  SweepSpec spec{{0.1}, {0.0}, {4}, 0.3, 0.3};
  const auto cells = robustness_sweep(truth, spec, make, c);
  auto m = make(4);
  c.seed = 4;
  train(m, ObservationSet(sample_sparse(truth, 0.1, 0.3)), c);
  const auto rep = evaluate(m, truth.snapshots.front(), truth, 0.3);
  EXPECT_EQ(cells[0].interp_avg, rep.interp_avg);
  EXPECT_EQ(cells[0].extrap_avg, rep.extrap_avg);
}
