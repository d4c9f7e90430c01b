#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hpe/adam.hpp"
#include "hpe/diff.hpp"
#include "hpe/error.hpp"
#include "hpe/field.hpp"

namespace hpe::dsr {

// ------------------------------------------------------------------ binning

struct BinTable {
  std::size_t n_bins = 0;
  std::vector<double> midpoints;
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<std::size_t> counts;

  /// Bins that enter the regression target.
  std::vector<std::size_t> included(std::size_t min_count) const {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < n_bins; ++b)
      if (counts[b] > 0 && counts[b] >= min_count) out.push_back(b);
    return out;
  }
};

/// Uniform bins over [0, 1]; concentrations outside the interval are dropped.
inline BinTable bin_analysis(const std::vector<RealField>& c_fields, const std::vector<RealField>& term_fields,
                             std::size_t n_bins = 50) {
  if (c_fields.empty()) throw ConfigError("bin_analysis: empty input");
  if (c_fields.size() != term_fields.size()) throw ConfigError("bin_analysis: field lists differ in length");
  if (n_bins == 0) throw ConfigError("bin_analysis: n_bins must be >= 1");
  BinTable t;
  t.n_bins = n_bins;
  t.counts.assign(n_bins, 0);
  std::vector<double> sum(n_bins, 0.0), sum2(n_bins, 0.0);
  for (std::size_t k = 0; k < c_fields.size(); ++k) {
    c_fields[k].check_same(term_fields[k]);
    for (std::size_t i = 0; i < c_fields[k].size(); ++i) {
      const double c = c_fields[k][i];
      if (!(c >= 0.0 && c <= 1.0)) continue;
      const auto b = std::min(n_bins - 1, static_cast<std::size_t>(c * static_cast<double>(n_bins)));
      const double v = term_fields[k][i];
      ++t.counts[b];
      sum[b] += v;
      sum2[b] += v * v;
    }
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    t.midpoints.push_back((static_cast<double>(b) + 0.5) / static_cast<double>(n_bins));
    const auto n = static_cast<double>(t.counts[b]);
    const double mean = t.counts[b] ? sum[b] / n : 0.0;
    t.means.push_back(mean);
    t.stds.push_back(t.counts[b] ? std::sqrt(std::max(0.0, sum2[b] / n - mean * mean)) : 0.0);
  }
  return t;
}

/// Noise-free table of f evaluated at the bin midpoints.
inline BinTable law_table(const std::function<double(double)>& f, std::size_t n_bins = 50, std::size_t count = 100) {
  BinTable t;
  t.n_bins = n_bins;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double m = (static_cast<double>(b) + 0.5) / static_cast<double>(n_bins);
    t.midpoints.push_back(m);
    t.means.push_back(f(m));
    t.stds.push_back(0.0);
    t.counts.push_back(count);
  }
  return t;
}

// ------------------------------------------------------------------ tokens

enum class Op : std::uint8_t { Add, Sub, Mul, Div, Log, Exp, Var, Const };

inline std::size_t arity(Op op) {
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Log:
    case Op::Exp: return 1;
    default: return 0;
  }
}

inline std::string symbol(Op op) {
  switch (op) {
    case Op::Add: return "+";
    case Op::Sub: return "-";
    case Op::Mul: return "*";
    case Op::Div: return "/";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Var: return "c";
    case Op::Const: return "const";
  }
  return "?";
}

inline Op parse_op(const std::string& s) {
  for (Op op : {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Log, Op::Exp, Op::Var, Op::Const})
    if (symbol(op) == s) return op;
  throw ConfigError("unknown token '" + s + "'");
}

struct TokenLibrary {
  std::vector<Op> ops{Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Log, Op::Exp, Op::Var, Op::Const};

  std::size_t size() const { return ops.size(); }

  std::size_t index_of(Op op) const {
    const auto it = std::find(ops.begin(), ops.end(), op);
    if (it == ops.end()) throw ConfigError("token '" + symbol(op) + "' is not in the library");
    return static_cast<std::size_t>(it - ops.begin());
  }

  void validate() const {
    if (ops.empty()) throw ConfigError("library: empty");
    bool terminal = false;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      terminal = terminal || arity(ops[i]) == 0;
      for (std::size_t j = 0; j < i; ++j)
        if (ops[i] == ops[j]) throw ConfigError("library: duplicate token '" + symbol(ops[i]) + "'");
    }
    if (!terminal) throw ConfigError("library: needs at least one terminal");
  }
};

// ------------------------------------------------------------- expressions

struct ExpressionTree {
  std::vector<Op> tokens;
  std::vector<double> constants;

  std::size_t const_count() const { return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), Op::Const)); }
};

inline bool is_valid_prefix(const std::vector<Op>& tokens) {
  std::size_t open = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (open == 0) return false;
    open = open - 1 + arity(tokens[i]);
  }
  return !tokens.empty() && open == 0;
}

namespace detail {

inline constexpr double kDivGuard = 1e-12;

/// Reverse scan of the prefix sequence on a flat operand stack.
inline bool eval_into(const std::vector<Op>& tokens, std::span<const double> consts, std::span<const double> c,
                      std::vector<double>& stack, std::vector<double>& out) {
  const std::size_t n = c.size();
  stack.resize((tokens.size() + 1) * n);
  std::size_t sp = 0;
  std::size_t ci = consts.size();
  for (std::size_t r = tokens.size(); r-- > 0;) {
    const Op op = tokens[r];
    double* top = stack.data() + sp * n;
    switch (op) {
      case Op::Var:
        std::copy(c.begin(), c.end(), top);
        ++sp;
        break;
      case Op::Const:
        std::fill(top, top + n, consts[--ci]);
        ++sp;
        break;
      case Op::Log: {
        double* a = top - n;
        for (std::size_t i = 0; i < n; ++i) {
          if (!(a[i] > 0.0)) return false;
          a[i] = std::log(a[i]);
        }
        break;
      }
      case Op::Exp: {
        double* a = top - n;
        for (std::size_t i = 0; i < n; ++i) a[i] = std::exp(a[i]);
        break;
      }
      default: {
        double* lhs = top - n;
        double* rhs = top - 2 * n;
        for (std::size_t i = 0; i < n; ++i) {
          switch (op) {
            case Op::Add: rhs[i] = lhs[i] + rhs[i]; break;
            case Op::Sub: rhs[i] = lhs[i] - rhs[i]; break;
            case Op::Mul: rhs[i] = lhs[i] * rhs[i]; break;
            default:
              if (!(std::abs(rhs[i]) >= kDivGuard)) return false;
              rhs[i] = lhs[i] / rhs[i];
          }
        }
        --sp;
      }
    }
  }
  out.assign(stack.begin(), stack.begin() + static_cast<std::ptrdiff_t>(n));
  return std::all_of(out.begin(), out.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace detail

/// Values of the expression at each c; nullopt when a guard trips or a value is non-finite.
inline std::optional<std::vector<double>> evaluate_expression(const ExpressionTree& tree, std::span<const double> c) {
  if (!is_valid_prefix(tree.tokens)) throw ConfigError("evaluate_expression: invalid prefix sequence");
  if (tree.constants.size() != tree.const_count()) throw ConfigError("evaluate_expression: constant count mismatch");
  std::vector<double> stack, out;
  if (!detail::eval_into(tree.tokens, tree.constants, c, stack, out)) return std::nullopt;
  return out;
}

inline std::optional<double> evaluate_expression(const ExpressionTree& tree, double c) {
  const auto v = evaluate_expression(tree, std::span<const double>(&c, 1));
  if (!v) return std::nullopt;
  return v->front();
}

inline std::string infix(const ExpressionTree& tree) {
  std::size_t pos = 0, ci = 0;
  std::function<std::string()> rec = [&]() -> std::string {
    const Op op = tree.tokens.at(pos++);
    switch (arity(op)) {
      case 0: {
        if (op == Op::Var) return "c";
        if (ci >= tree.constants.size()) return "const";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", tree.constants[ci++]);
        return buf;
      }
      case 1: return symbol(op) + "(" + rec() + ")";
      default: {
        std::string a = rec();
        std::string b = rec();
        return "(" + a + " " + symbol(op) + " " + b + ")";
      }
    }
  };
  return rec();
}

// ---------------------------------------------------------------- rewards

struct DSRConfig {
  double epsilon_risk = 0.05;
  std::size_t batch_size = 500;
  std::size_t iterations = 2000;
  double lr = 5e-4;
  std::size_t max_length = 24;
  std::uint64_t seed = 0;
  std::size_t hidden = 32;
  std::size_t min_count = 10;
  std::size_t const_iterations = 50;
  std::size_t const_sweeps = 8;
  double const_lo = -10.0;
  double const_hi = 10.0;
  double stop_nrmse = 1e-6;

  void validate() const {
    if (!(epsilon_risk > 0.0 && epsilon_risk <= 1.0)) throw ConfigError("dsr: epsilon_risk must lie in (0, 1]");
    if (batch_size == 0) throw ConfigError("dsr: batch_size must be >= 1");
    if (iterations == 0) throw ConfigError("dsr: iterations must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("dsr: lr must be positive");
    if (max_length == 0) throw ConfigError("dsr: max_length must be >= 1");
    if (hidden == 0) throw ConfigError("dsr: hidden must be >= 1");
    if (!(const_lo < const_hi)) throw ConfigError("dsr: constant interval is empty");
  }
};

struct Score {
  bool valid = false;
  double nrmse = std::numeric_limits<double>::infinity();
  double reward = 0.0;
};

/// Regression target: included midpoints and means, with the population std of the means.
struct Target {
  std::vector<double> x, y;
  double scale = 1.0;

  Target(const BinTable& t, std::size_t min_count) {
    for (std::size_t b : t.included(min_count)) {
      x.push_back(t.midpoints[b]);
      y.push_back(t.means[b]);
    }
    if (x.empty()) throw ConfigError("dsr: no bin has enough samples");
    const double m = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    double s = 0.0;
    for (double v : y) s += (v - m) * (v - m);
    const double sd = std::sqrt(s / static_cast<double>(y.size()));
    scale = sd > 0.0 ? sd : 1.0;
  }
};

namespace detail {

inline double rmse_of(const std::vector<Op>& tokens, std::span<const double> consts, const Target& t,
                      std::vector<double>& stack, std::vector<double>& out) {
  if (!eval_into(tokens, consts, t.x, stack, out)) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += (out[i] - t.y[i]) * (out[i] - t.y[i]);
  const double r = std::sqrt(s / static_cast<double>(out.size()));
  return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

/// Minimizer of f on [lo, hi] after `iters` golden-section reductions.
inline std::pair<double, double> golden_section(const std::function<double(double)>& f, double lo, double hi,
                                                std::size_t iters) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (std::size_t i = 0; i < iters; ++i) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    }
  }
  return f1 <= f2 ? std::pair{x1, f1} : std::pair{x2, f2};
}

}  // namespace detail

inline Score score_of(double rmse, const Target& t) {
  Score s;
  if (!std::isfinite(rmse)) return s;
  s.valid = true;
  s.nrmse = rmse / t.scale;
  s.reward = 1.0 / (1.0 + s.nrmse);
  return s;
}

namespace detail {

/// Golden-section minimization of the RMSE along direction d from tree.constants.
struct LineSearch {
  ExpressionTree& tree;
  const Target& t;
  const DSRConfig& cfg;
  double best;
  std::vector<double> stack, out, trial;

  double operator()(const std::vector<double>& d, double lo, double hi) {
    auto& x = tree.constants;
    trial = x;
    auto f = [&](double s) {
      for (std::size_t j = 0; j < x.size(); ++j) trial[j] = x[j] + s * d[j];
      return rmse_of(tree.tokens, trial, t, stack, out);
    };
    const auto [s, fs] = golden_section(f, lo, hi, cfg.const_iterations);
    if (!(fs < best)) return 0.0;
    best = fs;
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += s * d[j];
    return s;
  }
};

}  // namespace detail

/// Coordinate-wise golden-section fit of every const token over [const_lo, const_hi];
/// with `refine`, followed by refine_constants.
inline Score fit_constants(ExpressionTree& tree, const Target& t, const DSRConfig& cfg = {}, bool refine = true);

/// Powell direction-set refinement of the current constants with golden-section line searches.
inline Score refine_constants(ExpressionTree& tree, const Target& t, const DSRConfig& cfg = {}) {
  const std::size_t k = tree.const_count();
  if (tree.constants.size() != k) throw ConfigError("refine_constants: constant count mismatch");
  detail::LineSearch line{tree, t, cfg, 0.0, {}, {}, {}};
  line.best = detail::rmse_of(tree.tokens, tree.constants, t, line.stack, line.out);
  if (k < 2 || !std::isfinite(line.best)) return score_of(line.best, t);
  const double span = cfg.const_hi - cfg.const_lo;
  std::vector<std::vector<double>> dirs(k, std::vector<double>(k, 0.0));
  for (std::size_t j = 0; j < k; ++j) dirs[j][j] = 1.0;
  auto& x = tree.constants;
  for (std::size_t it = 0; it < cfg.const_sweeps && line.best > 0.0; ++it) {
    const double before = line.best;
    const std::vector<double> x0 = x;
    std::size_t biggest = 0;
    double drop = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double f0 = line.best;
      double n = 0.0;
      for (double v : dirs[j]) n = std::max(n, std::abs(v));
      line(dirs[j], -span / n, span / n);
      if (f0 - line.best > drop) {
        drop = f0 - line.best;
        biggest = j;
      }
    }
    std::vector<double> d(k);
    double n = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      d[j] = x[j] - x0[j];
      n = std::max(n, std::abs(d[j]));
    }
    if (n > 0.0) {
      for (auto& v : d) v /= n;
      line(d, -span, span);
      dirs[biggest] = dirs.back();
      dirs.back() = d;
    }
    if (!(line.best < before * (1.0 - 1e-6))) break;
  }
  return score_of(line.best, t);
}

inline Score fit_constants(ExpressionTree& tree, const Target& t, const DSRConfig& cfg, bool refine) {
  if (!is_valid_prefix(tree.tokens)) throw ConfigError("fit_constants: invalid prefix sequence");
  const std::size_t k = tree.const_count();
  tree.constants.assign(k, 1.0);
  detail::LineSearch line{tree, t, cfg, 0.0, {}, {}, {}};
  line.best = detail::rmse_of(tree.tokens, tree.constants, t, line.stack, line.out);
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> d(k, 0.0);
    d[j] = 1.0;
    line(d, cfg.const_lo - tree.constants[j], cfg.const_hi - tree.constants[j]);
  }
  if (refine && k >= 2 && std::isfinite(line.best)) return refine_constants(tree, t, cfg);
  return score_of(line.best, t);
}

/// Reward 1/(1 + NRMSE) after constant fitting; 0 for invalid expressions.
inline double reward(ExpressionTree tree, const BinTable& table, const DSRConfig& cfg = {}) {
  return fit_constants(tree, Target(table, cfg.min_count), cfg).reward;
}

/// NRMSE of the tree with its current constants.
inline Score score(const ExpressionTree& tree, const BinTable& table, std::size_t min_count = 10) {
  const Target t(table, min_count);
  std::vector<double> stack, out;
  return score_of(detail::rmse_of(tree.tokens, tree.constants, t, stack, out), t);
}

// ------------------------------------------------------------------ policy

struct PolicyNet {
  std::size_t n_tokens = 0;
  std::size_t hidden = 32;
  ad::Parameter wx;  // [hidden, 2(n_tokens + 1)]: parent one-hot then sibling one-hot
  ad::Parameter wh;  // [hidden, hidden]
  ad::Parameter bh;  // [hidden]
  ad::Parameter wo;  // [n_tokens, hidden]
  ad::Parameter bo;  // [n_tokens]

  std::size_t inputs() const { return 2 * (n_tokens + 1); }
  std::size_t none() const { return n_tokens; }
  std::vector<ad::Parameter*> params() { return {&wx, &wh, &bh, &wo, &bo}; }
};

inline PolicyNet init_policy(const TokenLibrary& lib, std::size_t hidden = 32, std::uint64_t seed = 0) {
  lib.validate();
  if (hidden == 0) throw ConfigError("policy: hidden must be >= 1");
  PolicyNet p;
  p.n_tokens = lib.size();
  p.hidden = hidden;
  std::mt19937_64 rng(seed);
  auto uniform = [&](ad::Shape s, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    ad::Tensor t(s);
    for (auto& v : t.data) v = u(rng);
    return t;
  };
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(p.inputs() + hidden));
  const double out_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.wx = ad::Parameter("wx", uniform({hidden, p.inputs()}, in_bound));
  p.wh = ad::Parameter("wh", uniform({hidden, hidden}, in_bound));
  p.bh = ad::Parameter("bh", ad::Tensor({hidden}));
  p.wo = ad::Parameter("wo", uniform({lib.size(), hidden}, out_bound));
  p.bo = ad::Parameter("bo", ad::Tensor({lib.size()}));
  return p;
}

namespace detail {

/// Prefix-expansion bookkeeping shared by sampling and likelihood.
struct Expansion {
  struct Frame {
    std::size_t token, arity, filled, last_child;
  };
  std::vector<Frame> stack;
  std::size_t length = 0;
  std::size_t open = 1;
  std::size_t none = 0;

  explicit Expansion(std::size_t none_index) : none(none_index) {}

  bool done() const { return open == 0; }
  std::size_t parent() const { return stack.empty() ? none : stack.back().token; }
  std::size_t sibling() const { return stack.empty() || stack.back().filled == 0 ? none : stack.back().last_child; }

  /// Length budget, no log directly under log or exp (and no exp under log),
  /// no constant as the sole child of a unary op or next to a constant sibling.
  std::vector<char> mask(const TokenLibrary& lib, std::size_t max_length) const {
    std::vector<char> m(lib.size(), 0);
    const bool has_parent = !stack.empty();
    const Op parent_op = has_parent ? lib.ops[stack.back().token] : Op::Var;
    const bool unary_parent = has_parent && arity(parent_op) == 1;
    const bool const_sibling = sibling() != none && lib.ops[sibling()] == Op::Const;
    for (std::size_t j = 0; j < lib.size(); ++j) {
      const Op op = lib.ops[j];
      bool ok = length + 1 + (open - 1 + arity(op)) <= max_length;
      if (has_parent && op == Op::Log && (parent_op == Op::Log || parent_op == Op::Exp)) ok = false;
      if (has_parent && op == Op::Exp && parent_op == Op::Log) ok = false;
      if (op == Op::Const && (unary_parent || const_sibling)) ok = false;
      m[j] = ok;
    }
    return m;
  }

  void push(std::size_t token, std::size_t a) {
    ++length;
    open = open - 1 + a;
    if (a > 0) {
      stack.push_back({token, a, 0, none});
      return;
    }
    std::size_t finished = token;
    while (!stack.empty()) {
      auto& f = stack.back();
      ++f.filled;
      f.last_child = finished;
      if (f.filled < f.arity) break;
      finished = f.token;
      stack.pop_back();
    }
  }
};

/// h = tanh(Wx·x + Wh·h_prev + bh); probs = masked softmax(Wo·h + bo).
inline void policy_step(const PolicyNet& p, const std::vector<double>& h_prev, std::size_t parent, std::size_t sibling,
                        const std::vector<char>& mask, std::vector<double>& h, std::vector<double>& probs) {
  const std::size_t H = p.hidden, I = p.inputs(), L = p.n_tokens;
  const auto& wx = p.wx.value.data;
  const auto& wh = p.wh.value.data;
  h.assign(H, 0.0);
  for (std::size_t r = 0; r < H; ++r) {
    double a = p.bh.value.data[r] + wx[r * I + parent] + wx[r * I + L + 1 + sibling];
    for (std::size_t c = 0; c < H; ++c) a += wh[r * H + c] * h_prev[c];
    h[r] = std::tanh(a);
  }
  probs.assign(L, 0.0);
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < L; ++j) {
    if (!mask[j]) continue;
    double z = p.bo.value.data[j];
    for (std::size_t c = 0; c < H; ++c) z += p.wo.value.data[j * H + c] * h[c];
    probs[j] = z;
    zmax = std::max(zmax, z);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < L; ++j) {
    probs[j] = mask[j] ? std::exp(probs[j] - zmax) : 0.0;
    total += probs[j];
  }
  for (auto& v : probs) v /= total;
}

}  // namespace detail

/// Autoregressive draw under the grammar masks; `trace` receives each chosen token's probability.
inline ExpressionTree sample_expression(const PolicyNet& p, const TokenLibrary& lib, std::size_t max_length,
                                        std::uint64_t seed, std::vector<double>* trace = nullptr) {
  if (max_length == 0) throw ConfigError("sample_expression: max_length must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  detail::Expansion ex(p.none());
  std::vector<double> h(p.hidden, 0.0), h_next, probs;
  ExpressionTree tree;
  if (trace) trace->clear();
  while (!ex.done()) {
    const auto mask = ex.mask(lib, max_length);
    detail::policy_step(p, h, ex.parent(), ex.sibling(), mask, h_next, probs);
    const double u = unif(rng);
    std::size_t pick = lib.size();
    double cum = 0.0;
    for (std::size_t j = 0; j < lib.size(); ++j) {
      if (!mask[j]) continue;
      cum += probs[j];
      pick = j;
      if (u < cum) break;
    }
    tree.tokens.push_back(lib.ops[pick]);
    if (trace) trace->push_back(probs[pick]);
    ex.push(pick, arity(lib.ops[pick]));
    h.swap(h_next);
  }
  tree.constants.assign(tree.const_count(), 1.0);
  return tree;
}

struct Likelihood {
  double prob = 0.0;
  double log_prob = -std::numeric_limits<double>::infinity();
};

/// Π p(τ_i | τ_{1:i−1}) under the masked policy; zero for sequences the masks forbid.
inline Likelihood sequence_likelihood(const PolicyNet& p, const TokenLibrary& lib, const ExpressionTree& tree,
                                      std::size_t max_length) {
  if (!is_valid_prefix(tree.tokens)) throw ConfigError("sequence_likelihood: invalid prefix sequence");
  detail::Expansion ex(p.none());
  std::vector<double> h(p.hidden, 0.0), h_next, probs;
  Likelihood out{1.0, 0.0};
  for (Op op : tree.tokens) {
    const std::size_t j = lib.index_of(op);
    const auto mask = ex.mask(lib, max_length);
    if (!mask[j]) return {};
    detail::policy_step(p, h, ex.parent(), ex.sibling(), mask, h_next, probs);
    out.prob *= probs[j];
    out.log_prob += std::log(probs[j]);
    ex.push(j, arity(op));
    h.swap(h_next);
  }
  return out;
}

/// Adds weight·∇ log p(τ) into the policy gradients.
inline void accumulate_log_prob_grad(PolicyNet& p, const TokenLibrary& lib, const ExpressionTree& tree,
                                     std::size_t max_length, double weight) {
  const std::size_t H = p.hidden, I = p.inputs(), L = p.n_tokens, T = tree.tokens.size();
  detail::Expansion ex(p.none());
  std::vector<std::vector<double>> hs(T + 1, std::vector<double>(H, 0.0)), ps(T);
  std::vector<std::size_t> parents(T), siblings(T), choice(T);
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t j = lib.index_of(tree.tokens[i]);
    const auto mask = ex.mask(lib, max_length);
    if (!mask[j]) throw ConfigError("accumulate_log_prob_grad: sequence violates the sampling masks");
    parents[i] = ex.parent();
    siblings[i] = ex.sibling();
    choice[i] = j;
    detail::policy_step(p, hs[i], parents[i], siblings[i], mask, hs[i + 1], ps[i]);
    ex.push(j, arity(tree.tokens[i]));
  }
  auto& gx = p.wx.grad;
  auto& gh = p.wh.grad;
  auto& gbh = p.bh.grad;
  auto& go = p.wo.grad;
  auto& gbo = p.bo.grad;
  const auto& wh = p.wh.value.data;
  const auto& wo = p.wo.value.data;
  std::vector<double> dh_next(H, 0.0), dh(H), da(H), dz(L);
  for (std::size_t i = T; i-- > 0;) {
    const auto& h = hs[i + 1];
    const auto& hp = hs[i];
    for (std::size_t j = 0; j < L; ++j) dz[j] = weight * ((j == choice[i] ? 1.0 : 0.0) - ps[i][j]);
    dh = dh_next;
    for (std::size_t j = 0; j < L; ++j) {
      if (dz[j] == 0.0) continue;
      gbo[j] += dz[j];
      for (std::size_t c = 0; c < H; ++c) {
        go[j * H + c] += dz[j] * h[c];
        dh[c] += wo[j * H + c] * dz[j];
      }
    }
    for (std::size_t r = 0; r < H; ++r) da[r] = dh[r] * (1.0 - h[r] * h[r]);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t r = 0; r < H; ++r) {
      gbh[r] += da[r];
      gx[r * I + parents[i]] += da[r];
      gx[r * I + L + 1 + siblings[i]] += da[r];
      for (std::size_t c = 0; c < H; ++c) {
        gh[r * H + c] += da[r] * hp[c];
        dh_next[c] += wh[r * H + c] * da[r];
      }
    }
  }
}

// --------------------------------------------------------- risk seeking

/// Linear-interpolation empirical quantile (q in [0, 1]).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("quantile: empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

struct RiskFilter {
  double threshold = 0.0;
  std::vector<std::size_t> kept;
};

/// Samples with reward ≥ the empirical (1 − ε)-quantile.
inline RiskFilter risk_filter(const std::vector<double>& rewards, double epsilon_risk) {
  if (!(epsilon_risk > 0.0 && epsilon_risk <= 1.0)) throw ConfigError("risk_filter: epsilon must lie in (0, 1]");
  RiskFilter f;
  f.threshold = quantile(rewards, 1.0 - epsilon_risk);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    if (rewards[i] >= f.threshold) f.kept.push_back(i);
  return f;
}

struct UpdateStats {
  double threshold = 0.0;
  std::size_t kept = 0;
  bool stepped = false;
};

/// REINFORCE on the risk-filtered subset with baseline q_ε, followed by one Adam step.
inline UpdateStats policy_update(PolicyNet& p, AdamState& adam, const TokenLibrary& lib,
                                 const std::vector<ExpressionTree>& batch, const std::vector<double>& rewards,
                                 const DSRConfig& cfg) {
  if (batch.empty()) throw ConfigError("policy_update: empty batch");
  if (batch.size() != rewards.size()) throw ConfigError("policy_update: batch and rewards differ in length");
  const auto filt = risk_filter(rewards, cfg.epsilon_risk);
  UpdateStats st{filt.threshold, filt.kept.size(), false};
  auto params = p.params();
  for (auto* q : params) q->zero_grad();
  const double norm = 1.0 / static_cast<double>(filt.kept.size());
  for (std::size_t i : filt.kept) {
    const double adv = rewards[i] - filt.threshold;
    if (adv != 0.0) accumulate_log_prob_grad(p, lib, batch[i], cfg.max_length, -adv * norm);
  }
  st.stepped = adam_step(params, adam, AdamHyper{cfg.lr});
  return st;
}

// --------------------------------------------------------------- search

struct DiscoveryResult {
  ExpressionTree best;
  Score best_score;
  std::vector<double> best_reward_history;  // best-ever reward after each iteration
  std::vector<double> threshold_history;    // q_ε per iteration
  std::size_t iterations_run = 0;
  std::size_t evaluations = 0;
  double seconds = 0.0;
};

inline std::uint64_t candidate_seed(std::uint64_t master, std::uint64_t index) {
  return ad::detail::splitmix64(master ^ ad::detail::splitmix64(index + 0x5851f42d4c957f2dULL));
}

/// Sample, fit, score, filter, update; stops early once the best NRMSE drops below stop_nrmse.
inline DiscoveryResult discover(const BinTable& table, const DSRConfig& cfg = {}, const TokenLibrary& lib = {},
                                const std::function<void(std::size_t, const DiscoveryResult&)>& on_iteration = {}) {
  cfg.validate();
  lib.validate();
  const auto start = std::chrono::steady_clock::now();
  const Target target(table, cfg.min_count);
  PolicyNet policy = init_policy(lib, cfg.hidden, cfg.seed);
  AdamState adam;
  struct Cached {
    Score score;
    std::vector<double> constants;
    bool refined = false;
  };
  std::unordered_map<std::string, Cached> cache;
  DiscoveryResult res;
  std::vector<ExpressionTree> batch(cfg.batch_size);
  std::vector<double> rewards(cfg.batch_size);
  std::vector<Cached*> entry(cfg.batch_size);
  auto consider = [&](const ExpressionTree& tree, const Score& s) {
    // exact fits tie; keep the shortest
    const bool tie = s.valid && res.best_score.valid &&
                     (s.nrmse == res.best_score.nrmse ||
                      (s.nrmse < cfg.stop_nrmse && res.best_score.nrmse < cfg.stop_nrmse));
    if ((s.valid && s.nrmse < res.best_score.nrmse && !tie) ||
        (tie && tree.tokens.size() < res.best.tokens.size())) {
      res.best = tree;
      res.best_score = s;
    }
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      auto& tree = batch[b];
      tree = sample_expression(policy, lib, cfg.max_length, candidate_seed(cfg.seed, it * cfg.batch_size + b));
      std::string key(tree.tokens.size(), '\0');
      for (std::size_t i = 0; i < tree.tokens.size(); ++i) key[i] = static_cast<char>(tree.tokens[i]);
      auto found = cache.find(key);
      if (found == cache.end()) {
        const Score s = fit_constants(tree, target, cfg, false);
        ++res.evaluations;
        found = cache.emplace(std::move(key), Cached{s, tree.constants, tree.const_count() < 2}).first;
      }
      entry[b] = &found->second;
      rewards[b] = found->second.score.reward;
    }
    // refinement only where it can change the update: candidates at or above q_ε
    const double q = quantile(rewards, 1.0 - cfg.epsilon_risk);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      Cached& c = *entry[b];
      if (!c.refined && c.score.valid && c.score.reward >= q) {
        batch[b].constants = c.constants;
        const Score s = refine_constants(batch[b], target, cfg);
        if (s.nrmse <= c.score.nrmse) {
          c.score = s;
          c.constants = batch[b].constants;
        }
        c.refined = true;
      }
    }
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      batch[b].constants = entry[b]->constants;
      rewards[b] = entry[b]->score.reward;
      consider(batch[b], entry[b]->score);
    }
    const auto st = policy_update(policy, adam, lib, batch, rewards, cfg);
    res.best_reward_history.push_back(res.best_score.reward);
    res.threshold_history.push_back(st.threshold);
    res.iterations_run = it + 1;
    if (on_iteration) on_iteration(it, res);
    if (res.best_score.nrmse < cfg.stop_nrmse) break;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace hpe::dsr
