#pragma once

// Periodic 2-D grids, sampled fields, discrete Fourier transforms and the
// finite-difference / spectral derivative operators built on them.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "hpe/error.hpp"
#include "hpe/fft.hpp"

namespace hpe {

using cplx = std::complex<double>;

/// Uniform periodic grid. Index (i, j) has i along x (rows) and j along y.
struct GridSpec {
  std::size_t nx = 64;
  std::size_t ny = 64;
  double dx = 1.0;
  double dy = 1.0;

  std::size_t size() const { return nx * ny; }

  void validate() const {
    if (nx < 4 || ny < 4) throw ConfigError("grid: nx and ny must be >= 4");
    if (nx % 2 != 0 || ny % 2 != 0) throw ConfigError("grid: nx and ny must be even");
    if (!(dx > 0.0) || !(dy > 0.0)) throw ConfigError("grid: spacing must be positive");
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

template <class T>
struct Field {
  GridSpec grid;
  std::vector<T> values;

  Field() = default;
  explicit Field(const GridSpec& g, T fill = T{}) : grid(g), values(g.size(), fill) {}
  Field(const GridSpec& g, std::vector<T> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) throw ConfigError("field: value count does not match grid");
  }

  std::size_t size() const { return values.size(); }
  T& operator()(std::size_t i, std::size_t j) { return values[i * grid.ny + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return values[i * grid.ny + j]; }
  T& operator[](std::size_t k) { return values[k]; }
  const T& operator[](std::size_t k) const { return values[k]; }

  bool finite() const {
    for (const auto& v : values) {
      if constexpr (std::is_same_v<T, cplx>) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
      } else {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  Field& operator+=(const Field& o) {
    check_same(o);
    for (std::size_t k = 0; k < size(); ++k) values[k] += o.values[k];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_same(o);
    for (std::size_t k = 0; k < size(); ++k) values[k] -= o.values[k];
    return *this;
  }
  Field& operator*=(T s) {
    for (auto& v : values) v *= s;
    return *this;
  }
  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(T s, Field a) { return a *= s; }

  void check_same(const Field& o) const {
    if (!(grid == o.grid)) throw ConfigError("field: grid mismatch");
  }
};

using RealField = Field<double>;
using ComplexField = Field<cplx>;

/// Fourier coefficients: unnormalized forward, 1/(nx·ny) on the inverse.
struct SpectralField {
  GridSpec grid;
  std::vector<cplx> modes;

  cplx& operator()(std::size_t k1, std::size_t k2) { return modes[k1 * grid.ny + k2]; }
  const cplx& operator()(std::size_t k1, std::size_t k2) const { return modes[k1 * grid.ny + k2]; }
};

namespace detail {
template <class T>
void require_finite(const Field<T>& f, const char* op) {
  if (!f.finite()) throw DomainError(std::string(op) + ": non-finite input");
}
}  // namespace detail

template <class T>
SpectralField dft2(const Field<T>& f) {
  f.grid.validate();
  detail::require_finite(f, "dft2");
  SpectralField s{f.grid, std::vector<cplx>(f.values.begin(), f.values.end())};
  fft::transform2(s.modes, f.grid.nx, f.grid.ny, -1);
  return s;
}

inline ComplexField idft2(const SpectralField& s) {
  s.grid.validate();
  if (s.modes.size() != s.grid.size()) throw ConfigError("idft2: mode count does not match grid");
  ComplexField out(s.grid, s.modes);
  fft::transform2(out.values, s.grid.nx, s.grid.ny, +1);
  const double inv = 1.0 / static_cast<double>(s.grid.size());
  for (auto& v : out.values) v *= inv;
  return out;
}

inline RealField real_part(const ComplexField& f) {
  RealField out(f.grid);
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = f[k].real();
  return out;
}

inline RealField abs_field(const ComplexField& f) {
  RealField out(f.grid);
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = std::abs(f[k]);
  return out;
}

inline ComplexField to_complex(const RealField& f) {
  return ComplexField(f.grid, std::vector<cplx>(f.values.begin(), f.values.end()));
}

/// Angular wavenumbers along x and y for mode (k1, k2).
inline std::pair<double, double> wavenumber(const GridSpec& g, std::size_t k1, std::size_t k2) {
  const double tau = 2.0 * std::numbers::pi;
  return {tau * static_cast<double>(fft::wrap(k1, g.nx)) / (static_cast<double>(g.nx) * g.dx),
          tau * static_cast<double>(fft::wrap(k2, g.ny)) / (static_cast<double>(g.ny) * g.dy)};
}

namespace detail {
inline cplx ipow(double kappa, int order) {
  cplx r{1.0, 0.0};
  const cplx ik{0.0, kappa};
  for (int n = 0; n < order; ++n) r *= ik;
  return r;
}
}  // namespace detail

/// Multiplies mode (k1,k2) by (iκx)^ox (iκy)^oy; Nyquist zeroed for odd orders.
inline SpectralField spectral_derivative(const SpectralField& s, int order_x, int order_y) {
  if (order_x < 0 || order_y < 0) throw ConfigError("spectral_derivative: negative order");
  SpectralField out = s;
  const auto& g = s.grid;
  for (std::size_t k1 = 0; k1 < g.nx; ++k1) {
    const bool nyq_x = (order_x % 2 == 1) && k1 == g.nx / 2;
    for (std::size_t k2 = 0; k2 < g.ny; ++k2) {
      const bool nyq_y = (order_y % 2 == 1) && k2 == g.ny / 2;
      if (nyq_x || nyq_y) {
        out(k1, k2) = 0.0;
        continue;
      }
      const auto [kx, ky] = wavenumber(g, k1, k2);
      out(k1, k2) *= detail::ipow(kx, order_x) * detail::ipow(ky, order_y);
    }
  }
  return out;
}

/// Forward differences with periodic wrap.
inline std::pair<RealField, RealField> fd_grad(const RealField& f) {
  const auto& g = f.grid;
  RealField gx(g), gy(g);
  for (std::size_t i = 0; i < g.nx; ++i) {
    const std::size_t ip = (i + 1) % g.nx;
    for (std::size_t j = 0; j < g.ny; ++j) {
      const std::size_t jp = (j + 1) % g.ny;
      gx(i, j) = (f(ip, j) - f(i, j)) / g.dx;
      gy(i, j) = (f(i, jp) - f(i, j)) / g.dy;
    }
  }
  return {std::move(gx), std::move(gy)};
}

/// Backward-difference divergence; the negative adjoint of fd_grad.
inline RealField fd_div(const RealField& fx, const RealField& fy) {
  fx.check_same(fy);
  const auto& g = fx.grid;
  RealField out(g);
  for (std::size_t i = 0; i < g.nx; ++i) {
    const std::size_t im = (i + g.nx - 1) % g.nx;
    for (std::size_t j = 0; j < g.ny; ++j) {
      const std::size_t jm = (j + g.ny - 1) % g.ny;
      out(i, j) = (fx(i, j) - fx(im, j)) / g.dx + (fy(i, j) - fy(i, jm)) / g.dy;
    }
  }
  return out;
}

inline RealField fd_laplacian(const RealField& f) {
  auto [gx, gy] = fd_grad(f);
  return fd_div(gx, gy);
}

template <class T>
T mean(const Field<T>& f) {
  T acc{};
  for (const auto& v : f.values) acc += v;
  return acc / static_cast<double>(f.size());
}

/// Σ a·b over all cells (no cell-area weight).
inline double inner(const RealField& a, const RealField& b) {
  a.check_same(b);
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

}  // namespace hpe
