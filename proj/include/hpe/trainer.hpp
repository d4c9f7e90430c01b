#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hpe/adam.hpp"
#include "hpe/diff.hpp"
#include "hpe/error.hpp"
#include "hpe/field.hpp"
#include "hpe/hpe_model.hpp"
#include "hpe/pde.hpp"

namespace hpe {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t step_size = 500;
  double gamma = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 3000;
  std::size_t bptt_window = 1;
  std::size_t patience = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train: gamma must lie in (0, 1]");
    if (step_size == 0) throw ConfigError("train: step_size must be >= 1");
    if (bptt_window == 0) throw ConfigError("train: bptt_window must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train: eps must be positive");
  }
};

// ------------------------------------------------------------------- Adam

inline double effective_lr(const TrainConfig& c, std::size_t epoch) {
  return c.lr * std::pow(c.gamma, static_cast<double>(epoch / c.step_size));
}

inline bool adam_update(const std::vector<ad::Parameter*>& params, AdamState& s, const TrainConfig& c, std::size_t epoch) {
  return adam_step(params, s, AdamHyper{effective_lr(c, epoch), c.beta1, c.beta2, c.eps});
}

// ----------------------------------------------------------------- metrics

inline double mse_loss(const std::vector<RealField>& pred, const std::vector<RealField>& obs) {
  if (pred.empty() || pred.size() != obs.size()) throw ConfigError("mse_loss: prediction/observation count mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    pred[k].check_same(obs[k]);
    for (std::size_t i = 0; i < pred[k].size(); ++i) {
      const double d = pred[k][i] - obs[k][i];
      s += d * d;
    }
    n += pred[k].size();
  }
  return s / static_cast<double>(n);
}

inline double rmse(const RealField& pred, const RealField& truth) { return std::sqrt(mse_loss({pred}, {truth})); }

struct EvalReport {
  std::vector<double> times;
  std::vector<double> rmse_per_time;
  double interp_avg = 0.0;
  double extrap_avg = 0.0;
  double t_split = 9.0;
};

/// Averages of a per-time RMSE curve on either side of t_split; t = 0 is excluded.
inline void summarize(EvalReport& r) {
  double si = 0.0, se = 0.0;
  std::size_t ni = 0, ne = 0;
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    if (r.times[k] <= 0.0) continue;
    if (r.times[k] <= r.t_split + 1e-9) {
      si += r.rmse_per_time[k];
      ++ni;
    } else {
      se += r.rmse_per_time[k];
      ++ne;
    }
  }
  r.interp_avg = ni ? si / static_cast<double>(ni) : 0.0;
  r.extrap_avg = ne ? se / static_cast<double>(ne) : 0.0;
}

/// Rolls out from the clean initial field and scores every truth snapshot.
inline EvalReport evaluate(const std::function<RealField(const RealField&)>& rhs, double dt, const RealField& ic,
                           const Trajectory& truth, double t_split = 9.0) {
  if (truth.size() < 2) throw ConfigError("evaluate: truth trajectory needs at least two snapshots");
  if (!(dt > 0.0)) throw ConfigError("evaluate: model dt must be positive");
  const double t0 = truth.times.front();
  std::vector<std::size_t> step_of(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double r = (truth.times[k] - t0) / dt;
    if (std::abs(r - std::round(r)) > 1e-6) throw ConfigError("evaluate: truth times are not on the model time grid");
    step_of[k] = static_cast<std::size_t>(std::llround(r));
  }
  EvalReport rep;
  rep.t_split = t_split;
  RealField u = ic;
  std::size_t step = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    while (step < step_of[k]) {
      const RealField f = rhs(u);
      for (std::size_t i = 0; i < u.size(); ++i) u[i] += dt * f[i];
      ++step;
      if (!u.finite()) throw NumericError("evaluate: non-finite rollout state", step);
    }
    rep.times.push_back(truth.times[k] - t0);
    rep.rmse_per_time.push_back(rmse(u, truth.snapshots[k]));
  }
  summarize(rep);
  return rep;
}

inline EvalReport evaluate(HPEModel& m, const RealField& ic, const Trajectory& truth, double t_split = 9.0) {
  return evaluate([&m](const RealField& u) { return f_hat(m, u); }, m.dt, ic, truth, t_split);
}

// ---------------------------------------------------------------- training

/// Observations visible to training; every snapshot read is counted.
class ObservationSet {
 public:
  ObservationSet() = default;
  explicit ObservationSet(Trajectory obs) : traj_(std::move(obs)) {
    if (traj_.size() < 2) throw ConfigError("observations: need at least two snapshots");
    const double dt = traj_.spacing();
    for (std::size_t k = 1; k < traj_.size(); ++k)
      if (std::abs(traj_.times[k] - traj_.times[k - 1] - dt) > 1e-9)
        throw ConfigError("observations: snapshots must be uniformly spaced");
  }

  std::size_t size() const { return traj_.size(); }
  double spacing() const { return traj_.spacing(); }
  const GridSpec& grid() const { return traj_.snapshots.front().grid; }

  const RealField& at(std::size_t k) const {
    ++reads_;
    return traj_.snapshots.at(k);
  }
  std::size_t reads() const { return reads_; }

 private:
  Trajectory traj_;
  mutable std::size_t reads_ = 0;
};

template <class M>
concept TrainableModel = requires(M& m, ad::Tape& t, ad::Var u, bool train, std::uint64_t seed) {
  { m.params() } -> std::same_as<std::vector<ad::Parameter*>>;
  { m.dt } -> std::convertible_to<double>;
  { f_hat(t, m, u, train, seed) } -> std::same_as<ad::Var>;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean segment loss per completed epoch
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  std::vector<std::size_t> aborted_epochs;
};

/// Truncated BPTT with teacher forcing: each segment starts from an observed
/// snapshot and rolls bptt_window observation intervals of Euler steps.
template <TrainableModel M>
TrainResult train(M& model, const ObservationSet& obs, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_epoch = {}) {
  cfg.validate();
  const double dt = model.dt;
  if (!(dt > 0.0)) throw ConfigError("train: model dt must be positive");
  const double ratio = obs.spacing() / dt;
  const auto inner = static_cast<std::size_t>(std::llround(ratio));
  if (inner == 0 || std::abs(ratio - static_cast<double>(inner)) > 1e-6)
    throw ConfigError("train: model dt must divide the observation spacing");
  if (obs.size() <= cfg.bptt_window) throw ConfigError("train: not enough observations for one segment");
  const std::size_t n_seg = obs.size() - cfg.bptt_window;

  auto params = model.params();
  AdamState adam;
  TrainResult res;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n_seg);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    bool aborted = false;
    for (std::size_t k : order) {
      const std::uint64_t step_seed = rng();
      ad::Tape tape(!params.empty());
      ad::Var u = tape.constant(to_tensor(obs.at(k)));
      ad::Var loss;
      for (std::size_t w = 1; w <= cfg.bptt_window; ++w) {
        for (std::size_t s = 0; s < inner; ++s) {
          ad::Var f = f_hat(tape, model, u, true, step_seed + (w - 1) * inner + s);
          u = ad::add(u, ad::scale(f, dt));
        }
        ad::Var d = ad::sub(u, tape.constant(to_tensor(obs.at(k + w))));
        ad::Var term = ad::scale(ad::mean(ad::mul(d, d)), 1.0 / static_cast<double>(cfg.bptt_window));
        loss = w == 1 ? term : ad::add(loss, term);
      }
      const double lv = loss.value().data[0];
      if (!std::isfinite(lv)) {
        aborted = true;
        break;
      }
      total += lv;
      if (params.empty()) continue;
      for (auto* p : params) p->zero_grad();
      tape.backward(loss);
      if (adam_update(params, adam, cfg, epoch)) ++res.steps;
    }
    res.epochs_run = epoch + 1;
    if (aborted) {
      res.aborted_epochs.push_back(epoch);
      continue;
    }
    const double epoch_loss = total / static_cast<double>(n_seg);
    res.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (epoch_loss < best) {
      best = epoch_loss;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  res.skipped_steps = adam.skipped;
  return res;
}

// ------------------------------------------------------------------- sweep

struct SweepCell {
  double dt_obs = 0.0;
  double sigma = 0.0;
  double interp_avg = 0.0;
  double extrap_avg = 0.0;
  std::size_t runs = 0;
};

struct SweepSpec {
  std::vector<double> dt_obs;
  std::vector<double> sigma;
  std::vector<std::uint64_t> seeds;
  double t_obs_max = 9.0;
  double t_split = 9.0;
};

/// One training run per (dt_obs, σ, seed); cells hold seed-averaged RMSE.
/// `make` builds a fresh model for a seed; `truth` is the dense clean trajectory.
inline std::vector<SweepCell> robustness_sweep(const Trajectory& truth, const SweepSpec& spec,
                                               const std::function<HPEModel(std::uint64_t)>& make,
                                               const TrainConfig& base_cfg) {
  if (spec.dt_obs.empty() || spec.sigma.empty() || spec.seeds.empty()) throw ConfigError("sweep: empty grid");
  std::vector<SweepCell> cells;
  for (double dto : spec.dt_obs)
    for (double sigma : spec.sigma) {
      SweepCell cell{dto, sigma, 0.0, 0.0, 0};
      for (std::uint64_t seed : spec.seeds) {
        const auto sparse = sample_sparse(truth, dto, spec.t_obs_max);
        ObservationSet obs(add_noise(sparse, NoiseSpec{sigma, seed}));
        HPEModel m = make(seed);
        TrainConfig cfg = base_cfg;
        cfg.seed = seed;
        train(m, obs, cfg);
        const auto rep = evaluate(m, truth.snapshots.front(), truth, spec.t_split);
        cell.interp_avg += rep.interp_avg;
        cell.extrap_avg += rep.extrap_avg;
        ++cell.runs;
      }
      cell.interp_avg /= static_cast<double>(cell.runs);
      cell.extrap_avg /= static_cast<double>(cell.runs);
      cells.push_back(cell);
    }
  return cells;
}

}  // namespace hpe
