#pragma once

#include <cmath>
#include <vector>

#include "hpe/diff.hpp"

namespace hpe {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
  std::size_t skipped = 0;
};

/// One bias-corrected Adam step from the accumulated Parameter gradients.
/// Returns false (and counts a skip) when any gradient is non-finite.
inline bool adam_step(const std::vector<ad::Parameter*>& params, AdamState& s, const AdamHyper& h) {
  for (const auto* p : params)
    for (double g : p->grad)
      if (!std::isfinite(g)) {
        ++s.skipped;
        return false;
      }
  if (s.m.size() != params.size()) {
    s.m.clear();
    s.v.clear();
    for (const auto* p : params) {
      s.m.emplace_back(p->grad.size(), 0.0);
      s.v.emplace_back(p->grad.size(), 0.0);
    }
  }
  ++s.t;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t k = 0; k < p.grad.size(); ++k) {
      const double g = p.grad[k];
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g;
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g * g;
      p.value.data[k] -= h.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + h.eps);
    }
  }
  return true;
}

}  // namespace hpe
