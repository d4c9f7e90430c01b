#pragma once

// Reverse-mode differentiation over a dynamically recorded tape.
//
// Tensors hold real or complex values; complex data is stored interleaved
// (re, im) and differentiated as pairs of reals, so every adjoint below is
// the transpose of the forward map under the real inner product.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hpe/error.hpp"
#include "hpe/fft.hpp"

namespace hpe::ad {

using Shape = std::vector<std::size_t>;
using cplx = std::complex<double>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool complex = false;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, bool is_complex = false)
      : shape(std::move(s)), data(numel(shape) * (is_complex ? 2 : 1), 0.0), complex(is_complex) {}
  Tensor(Shape s, std::vector<double> values, bool is_complex = false)
      : shape(std::move(s)), data(std::move(values)), complex(is_complex) {
    if (data.size() != numel(shape) * (complex ? 2 : 1))
      throw ConfigError("tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  }

  Tensor(Shape s, std::initializer_list<double> values) : Tensor(std::move(s), std::vector<double>(values)) {}

  std::size_t size() const { return numel(shape); }
  cplx at_c(std::size_t k) const { return {data[2 * k], data[2 * k + 1]}; }
  void set_c(std::size_t k, cplx v) {
    data[2 * k] = v.real();
    data[2 * k + 1] = v.imag();
  }
};

/// A persistent learnable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.data.size(), 0.0) {
    value.requires_grad = true;
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  std::size_t scalar_count() const { return value.data.size(); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool complex() const { return value().complex; }
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backprop back;
    bool needs_grad = false;
    Parameter* param = nullptr;
  };

  Tape() = default;
  /// A non-recording tape treats parameters as constants and builds no adjoints.
  explicit Tape(bool record) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Tensor t) {
    t.requires_grad = false;
    return push(std::move(t), false);
  }

  Var param(Parameter& p) {
    if (!record_) return constant(p.value);
    Var v = push(p.value, true);
    nodes_.back().param = &p;
    return v;
  }

  Var push(Tensor t, bool needs_grad, Backprop back = {}) {
    Node n;
    n.value = std::move(t);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Adjoint buffer of a node, allocated on first use.
  std::vector<double>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a real scalar; leaf gradients are added to their Parameters.
  void backward(Var out) {
    const auto& v = nodes_.at(out.id).value;
    if (v.complex || v.size() != 1)
      throw ConfigError("backward: output must be a real scalar, got shape " + shape_str(v.shape));
    for (auto& n : nodes_) n.grad.clear();
    grad(out.id)[0] = 1.0;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.param == nullptr || n.grad.empty()) continue;
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }

 private:
  std::deque<Node> nodes_;
  bool record_ = true;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape() || a.complex() != b.complex())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + (a.complex() ? "c" : "") +
                      " vs " + shape_str(b.shape()) + (b.complex() ? "c" : ""));
}

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

inline void accumulate(Tape& t, const Var& v, const std::vector<double>& g, double s = 1.0) {
  if (!t.needs_grad(v.id)) return;
  auto& dst = t.grad(v.id);
  for (std::size_t k = 0; k < g.size(); ++k) dst[k] += s * g[k];
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double hash_uniform(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(splitmix64(splitmix64(seed) ^ index) >> 11) * 0x1.0p-53;
}

/// Complex conversion of a (possibly real) tensor's values.
inline std::vector<cplx> as_complex(const Tensor& t) {
  std::vector<cplx> out(t.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = t.complex ? t.at_c(k) : cplx(t.data[k], 0.0);
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace detail

inline double softshrink(double x, double lambda) {
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

// ---------------------------------------------------------------- arithmetic

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += b.value().data[k];
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] -= b.value().data[k];
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g, -1.0);
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= s;
  return a.tape->push(std::move(out), detail::any_grad({a}), [a, s](Tape& t, std::size_t self) {
    detail::accumulate(t, a, t.grad(self), s);
  });
}

/// Elementwise product (both real or both complex).
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  const bool cx = a.complex();
  Tensor out = a.value();
  const auto& bv = b.value();
  if (!cx) {
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] *= bv.data[k];
  } else {
    for (std::size_t k = 0; k < out.size(); ++k) out.set_c(k, a.value().at_c(k) * bv.at_c(k));
  }
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b, cx](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (!cx) {
      if (t.needs_grad(a.id)) {
        auto& ga = t.grad(a.id);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * bv.data[k];
      }
      if (t.needs_grad(b.id)) {
        auto& gb = t.grad(b.id);
        for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * av.data[k];
      }
      return;
    }
    const std::size_t n = av.size();
    if (t.needs_grad(a.id)) {
      auto& ga = t.grad(a.id);
      for (std::size_t k = 0; k < n; ++k) {
        const cplx r = cplx(g[2 * k], g[2 * k + 1]) * std::conj(bv.at_c(k));
        ga[2 * k] += r.real();
        ga[2 * k + 1] += r.imag();
      }
    }
    if (t.needs_grad(b.id)) {
      auto& gb = t.grad(b.id);
      for (std::size_t k = 0; k < n; ++k) {
        const cplx r = cplx(g[2 * k], g[2 * k + 1]) * std::conj(av.at_c(k));
        gb[2 * k] += r.real();
        gb[2 * k + 1] += r.imag();
      }
    }
  });
}

/// x[..., n] + b[n], broadcasting the bias over leading dimensions.
inline Var add_bias(Var x, Var b) {
  const auto& xs = x.shape();
  detail::require(!xs.empty() && b.shape().size() == 1 && b.shape()[0] == xs.back() && x.complex() == b.complex(),
                  "add_bias: shape mismatch " + shape_str(xs) + " vs " + shape_str(b.shape()));
  const std::size_t width = xs.back() * (x.complex() ? 2 : 1);
  Tensor out = x.value();
  const auto& bv = b.value().data;
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += bv[k % width];
  return x.tape->push(std::move(out), detail::any_grad({x, b}), [x, b, width](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    detail::accumulate(t, x, g);
    if (t.needs_grad(b.id)) {
      auto& gb = t.grad(b.id);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k % width] += g[k];
    }
  });
}

// ------------------------------------------------------------------ matmul

/// Block-diagonal product: x[m, nb·bi] times blocks w[nb, bi, bo] gives [m, nb·bo].
/// Either operand may be complex; a real operand is promoted.
inline Var block_matmul(Var x, Var w) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  detail::require(xs.size() == 2 && ws.size() == 3 && xs[1] == ws[0] * ws[1],
                  "block_matmul: shape mismatch " + shape_str(xs) + " vs " + shape_str(ws));
  const std::size_t m = xs[0], nb = ws[0], bi = ws[1], bo = ws[2];
  const bool cx = x.complex() || w.complex();
  Tensor out({m, nb * bo}, cx);
  if (!cx) {
    const auto& xv = x.value().data;
    const auto& wv = w.value().data;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t blk = 0; blk < nb; ++blk)
        for (std::size_t i = 0; i < bi; ++i) {
          const double a = xv[r * nb * bi + blk * bi + i];
          const double* wrow = &wv[(blk * bi + i) * bo];
          double* orow = &out.data[r * nb * bo + blk * bo];
          for (std::size_t o = 0; o < bo; ++o) orow[o] += a * wrow[o];
        }
  } else {
    const auto xv = detail::as_complex(x.value());
    const auto wv = detail::as_complex(w.value());
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t blk = 0; blk < nb; ++blk)
        for (std::size_t o = 0; o < bo; ++o) {
          double re = 0.0, im = 0.0;
          for (std::size_t i = 0; i < bi; ++i) {
            const cplx a = xv[r * nb * bi + blk * bi + i];
            const cplx b = wv[(blk * bi + i) * bo + o];
            re += a.real() * b.real() - a.imag() * b.imag();
            im += a.real() * b.imag() + a.imag() * b.real();
          }
          out.set_c(r * nb * bo + blk * bo + o, {re, im});
        }
  }
  return x.tape->push(std::move(out), detail::any_grad({x, w}), [x, w, m, nb, bi, bo, cx](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (!cx) {
      const auto& xv = x.value().data;
      const auto& wv = w.value().data;
      if (t.needs_grad(x.id)) {
        auto& gx = t.grad(x.id);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t blk = 0; blk < nb; ++blk)
            for (std::size_t i = 0; i < bi; ++i) {
              const double* wrow = &wv[(blk * bi + i) * bo];
              const double* grow = &g[r * nb * bo + blk * bo];
              double acc = 0.0;
              for (std::size_t o = 0; o < bo; ++o) acc += grow[o] * wrow[o];
              gx[r * nb * bi + blk * bi + i] += acc;
            }
      }
      if (t.needs_grad(w.id)) {
        auto& gw = t.grad(w.id);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t blk = 0; blk < nb; ++blk)
            for (std::size_t i = 0; i < bi; ++i) {
              const double a = xv[r * nb * bi + blk * bi + i];
              const double* grow = &g[r * nb * bo + blk * bo];
              double* gwrow = &gw[(blk * bi + i) * bo];
              for (std::size_t o = 0; o < bo; ++o) gwrow[o] += a * grow[o];
            }
      }
      return;
    }
    const auto xv = detail::as_complex(x.value());
    const auto wv = detail::as_complex(w.value());
    auto gc = [&](std::size_t k) { return cplx(g[2 * k], g[2 * k + 1]); };
    if (t.needs_grad(x.id)) {
      auto& gx = t.grad(x.id);
      const bool xc = x.complex();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t blk = 0; blk < nb; ++blk)
          for (std::size_t i = 0; i < bi; ++i) {
            cplx acc{0.0, 0.0};
            for (std::size_t o = 0; o < bo; ++o) acc += gc(r * nb * bo + blk * bo + o) * std::conj(wv[(blk * bi + i) * bo + o]);
            const std::size_t k = r * nb * bi + blk * bi + i;
            if (xc) {
              gx[2 * k] += acc.real();
              gx[2 * k + 1] += acc.imag();
            } else {
              gx[k] += acc.real();
            }
          }
    }
    if (t.needs_grad(w.id)) {
      auto& gw = t.grad(w.id);
      const bool wc = w.complex();
      for (std::size_t blk = 0; blk < nb; ++blk)
        for (std::size_t i = 0; i < bi; ++i)
          for (std::size_t o = 0; o < bo; ++o) {
            cplx acc{0.0, 0.0};
            for (std::size_t r = 0; r < m; ++r) acc += std::conj(xv[r * nb * bi + blk * bi + i]) * gc(r * nb * bo + blk * bo + o);
            const std::size_t k = (blk * bi + i) * bo + o;
            if (wc) {
              gw[2 * k] += acc.real();
              gw[2 * k + 1] += acc.imag();
            } else {
              gw[k] += acc.real();
            }
          }
    }
  });
}

/// a[m, k] · b[k, n].
inline Var matmul(Var a, Var b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  detail::require(as.size() == 2 && bs.size() == 2 && as[1] == bs[0],
                  "matmul: shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
  const Tensor& bv = b.value();
  // View b as a single block without copying the tape entry's semantics.
  Var b3 = b.tape->push(Tensor({1, bs[0], bs[1]}, bv.data, bv.complex), b.tape->needs_grad(b.id),
                        [b](Tape& t, std::size_t self) { detail::accumulate(t, b, t.grad(self)); });
  return block_matmul(a, b3);
}

// ----------------------------------------------------------------- complex

inline Var complex_join(Var re, Var im) {
  detail::same_shape(re, im, "complex_join");
  detail::require(!re.complex(), "complex_join: inputs must be real");
  Tensor out(re.shape(), true);
  for (std::size_t k = 0; k < out.size(); ++k) out.set_c(k, {re.value().data[k], im.value().data[k]});
  return re.tape->push(std::move(out), detail::any_grad({re, im}), [re, im](Tape& t, std::size_t self) {
    const auto g = t.grad(self);
    if (t.needs_grad(re.id)) {
      auto& gr = t.grad(re.id);
      for (std::size_t k = 0; k < gr.size(); ++k) gr[k] += g[2 * k];
    }
    if (t.needs_grad(im.id)) {
      auto& gi = t.grad(im.id);
      for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += g[2 * k + 1];
    }
  });
}

namespace detail {
inline Var component(Var z, int part) {
  require(z.complex(), "complex split: input must be complex");
  Tensor out(z.shape(), false);
  for (std::size_t k = 0; k < out.size(); ++k) out.data[k] = z.value().data[2 * k + part];
  return z.tape->push(std::move(out), any_grad({z}), [z, part](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gz = t.grad(z.id);
    for (std::size_t k = 0; k < g.size(); ++k) gz[2 * k + part] += g[k];
  });
}
}  // namespace detail

inline Var real(Var z) { return detail::component(z, 0); }
inline Var imag(Var z) { return detail::component(z, 1); }

// --------------------------------------------------------------------- DFT

namespace detail {
/// Unnormalized 2-D transform over the two leading axes of x[h, w, d...].
inline std::vector<cplx> dft_leading(const std::vector<cplx>& in, std::size_t h, std::size_t w, std::size_t d, int sign) {
  std::vector<cplx> out(in.size());
  std::vector<cplx> plane(h * w);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) plane[p] = in[p * d + c];
    fft::transform2(plane, h, w, sign);
    for (std::size_t p = 0; p < h * w; ++p) out[p * d + c] = plane[p];
  }
  return out;
}

inline Var dft_op(Var x, int sign, double norm) {
  const auto& s = x.shape();
  require(s.size() >= 2, "dft2: need at least two axes, got " + shape_str(s));
  const std::size_t h = s[0], w = s[1], d = numel(s) / (h * w);
  const auto in = as_complex(x.value());
  auto outv = dft_leading(in, h, w, d, sign);
  Tensor out(s, true);
  for (std::size_t k = 0; k < outv.size(); ++k) out.set_c(k, outv[k] * norm);
  return x.tape->push(std::move(out), any_grad({x}), [x, h, w, d, sign, norm](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    std::vector<cplx> gc(g.size() / 2);
    for (std::size_t k = 0; k < gc.size(); ++k) gc[k] = {g[2 * k], g[2 * k + 1]};
    // adjoint of the sign-s transform is the unnormalized sign −s transform
    const auto back = dft_leading(gc, h, w, d, -sign);
    auto& gx = t.grad(x.id);
    if (x.complex()) {
      for (std::size_t k = 0; k < back.size(); ++k) {
        gx[2 * k] += norm * back[k].real();
        gx[2 * k + 1] += norm * back[k].imag();
      }
    } else {
      for (std::size_t k = 0; k < back.size(); ++k) gx[k] += norm * back[k].real();
    }
  });
}
}  // namespace detail

/// Unnormalized forward DFT over the two leading axes; output is complex.
inline Var dft2(Var x) { return detail::dft_op(x, -1, 1.0); }

/// Inverse DFT over the two leading axes with 1/(h·w) normalization.
inline Var idft2(Var z) {
  const auto& s = z.shape();
  detail::require(s.size() >= 2, "idft2: need at least two axes");
  return detail::dft_op(z, +1, 1.0 / static_cast<double>(s[0] * s[1]));
}

/// Zeroes the modes of z[h, w, ...] whose mask entry (h·w, row-major) is 0.
inline Var mask_modes(Var z, const std::vector<double>& mask) {
  const auto& s = z.shape();
  detail::require(s.size() >= 2 && mask.size() == s[0] * s[1], "mask_modes: mask size mismatch");
  const std::size_t per = z.value().data.size() / mask.size();
  Tensor out = z.value();
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] *= mask[k / per];
  return z.tape->push(std::move(out), detail::any_grad({z}), [z, mask, per](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gz = t.grad(z.id);
    for (std::size_t k = 0; k < g.size(); ++k) gz[k] += g[k] * mask[k / per];
  });
}

// ------------------------------------------------------------ nonlinearity

/// Componentwise map on the stored values (real and imaginary parts independently).
inline Var map(Var x, const std::function<double(double)>& f, const std::function<double(double)>& df) {
  Tensor out = x.value();
  for (auto& v : out.data) v = f(v);
  return x.tape->push(std::move(out), detail::any_grad({x}), [x, df](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = x.value().data;
    auto& gx = t.grad(x.id);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * df(xv[k]);
  });
}

inline Var gelu(Var x) { return map(x, detail::gelu, detail::gelu_grad); }

/// sign(x)·max(|x| − λ, 0); subgradient 0 inside (−λ, λ), 1 outside.
inline Var softshrink(Var x, double lambda) {
  return map(
      x, [lambda](double v) { return ad::softshrink(v, lambda); },
      [lambda](double v) { return std::abs(v) > lambda ? 1.0 : 0.0; });
}

/// Inverted dropout with a mask derived from (seed, element index); identity when !train or p == 0.
inline Var dropout(Var x, double p, std::uint64_t seed, bool train) {
  detail::require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  const std::size_t n = x.value().data.size();
  std::vector<double> mask(n);
  const double keep = 1.0 / (1.0 - p);
  for (std::size_t k = 0; k < n; ++k) mask[k] = detail::hash_uniform(seed, k) >= p ? keep : 0.0;
  Tensor out = x.value();
  for (std::size_t k = 0; k < n; ++k) out.data[k] *= mask[k];
  return x.tape->push(std::move(out), detail::any_grad({x}), [x, mask = std::move(mask)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * mask[k];
  });
}

// -------------------------------------------------------------- reductions

inline Var sum(Var x) {
  detail::require(!x.complex(), "sum: real input required");
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return x.tape->push(Tensor({}, {s}), detail::any_grad({x}), [x](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(x.id)) v += g;
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

// ------------------------------------------------------------------ layout

inline Var reshape(Var x, Shape s) {
  detail::require(numel(s) == x.value().size(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  Tensor out = x.value();
  out.shape = std::move(s);
  return x.tape->push(std::move(out), detail::any_grad({x}),
                      [x](Tape& t, std::size_t self) { detail::accumulate(t, x, t.grad(self)); });
}

/// Stacks equally-shaped tensors along a new leading axis.
inline Var stack(const std::vector<Var>& xs) {
  detail::require(!xs.empty(), "stack: empty input");
  for (const auto& x : xs) detail::same_shape(xs[0], x, "stack");
  Shape s = xs[0].shape();
  s.insert(s.begin(), xs.size());
  Tensor out(s, xs[0].complex());
  const std::size_t chunk = xs[0].value().data.size();
  bool ng = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::copy(xs[i].value().data.begin(), xs[i].value().data.end(), out.data.begin() + i * chunk);
    ng = ng || xs[i].tape->needs_grad(xs[i].id);
  }
  return xs[0].tape->push(std::move(out), ng, [xs, chunk](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!t.needs_grad(xs[i].id)) continue;
      auto& gx = t.grad(xs[i].id);
      for (std::size_t k = 0; k < chunk; ++k) gx[k] += g[i * chunk + k];
    }
  });
}

/// Slice index i of the leading axis.
inline Var select(Var x, std::size_t i) {
  const auto& s = x.shape();
  detail::require(!s.empty() && i < s[0], "select: index out of range for " + shape_str(s));
  Shape rest(s.begin() + 1, s.end());
  const std::size_t chunk = x.value().data.size() / s[0];
  Tensor out(rest, std::vector<double>(x.value().data.begin() + i * chunk, x.value().data.begin() + (i + 1) * chunk),
             x.complex());
  return x.tape->push(std::move(out), detail::any_grad({x}), [x, i, chunk](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    for (std::size_t k = 0; k < chunk; ++k) gx[i * chunk + k] += g[k];
  });
}

namespace detail {
// patch token r = (bi·wt + bj), feature f = (c·p_h + di)·p_w + dj
template <class F>
void for_each_patch(std::size_t c_n, std::size_t h, std::size_t w, std::size_t ph, std::size_t pw, F&& f) {
  const std::size_t wt = w / pw;
  const std::size_t feat = c_n * ph * pw;
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t tok = (i / ph) * wt + j / pw;
        const std::size_t fi = (c * ph + i % ph) * pw + j % pw;
        f((c * h + i) * w + j, tok * feat + fi);
      }
}
}  // namespace detail

/// x[C, H, W] → tokens[(H/ph)·(W/pw), C·ph·pw] of non-overlapping patches.
inline Var patchify(Var x, std::size_t ph, std::size_t pw) {
  const auto& s = x.shape();
  detail::require(s.size() == 3 && !x.complex(), "patchify: expected real [C,H,W], got " + shape_str(s));
  detail::require(ph > 0 && pw > 0 && s[1] % ph == 0 && s[2] % pw == 0,
                  "patchify: grid " + shape_str(s) + " not divisible by patch");
  const std::size_t c_n = s[0], h = s[1], w = s[2];
  Tensor out({(h / ph) * (w / pw), c_n * ph * pw});
  const auto& xv = x.value().data;
  detail::for_each_patch(c_n, h, w, ph, pw, [&](std::size_t src, std::size_t dst) { out.data[dst] = xv[src]; });
  return x.tape->push(std::move(out), detail::any_grad({x}), [x, c_n, h, w, ph, pw](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x.id);
    detail::for_each_patch(c_n, h, w, ph, pw, [&](std::size_t src, std::size_t dst) { gx[src] += g[dst]; });
  });
}

/// Inverse of patchify: tokens[T, C·ph·pw] → [C, H, W].
inline Var unpatchify(Var tokens, std::size_t c_n, std::size_t h, std::size_t w, std::size_t ph, std::size_t pw) {
  const auto& s = tokens.shape();
  detail::require(s.size() == 2 && s[0] == (h / ph) * (w / pw) && s[1] == c_n * ph * pw && !tokens.complex(),
                  "unpatchify: shape mismatch " + shape_str(s));
  Tensor out({c_n, h, w});
  const auto& tv = tokens.value().data;
  detail::for_each_patch(c_n, h, w, ph, pw, [&](std::size_t dst, std::size_t src) { out.data[dst] = tv[src]; });
  return tokens.tape->push(std::move(out), detail::any_grad({tokens}), [tokens, c_n, h, w, ph, pw](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(tokens.id);
    detail::for_each_patch(c_n, h, w, ph, pw, [&](std::size_t src_field, std::size_t tok) { gt[tok] += g[src_field]; });
  });
}

// ------------------------------------------------------- grid differences

/// Forward difference along axis (0: x, 1: y) of a real field f[nx, ny], periodic.
inline Var fd_diff(Var f, int axis, double spacing) {
  const auto& s = f.shape();
  detail::require(s.size() == 2 && !f.complex(), "fd_diff: expected real [nx,ny], got " + shape_str(s));
  const std::size_t nx = s[0], ny = s[1];
  auto next = [nx, ny, axis](std::size_t i, std::size_t j) {
    return axis == 0 ? ((i + 1) % nx) * ny + j : i * ny + (j + 1) % ny;
  };
  Tensor out(s);
  const auto& v = f.value().data;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) out.data[i * ny + j] = (v[next(i, j)] - v[i * ny + j]) / spacing;
  return f.tape->push(std::move(out), detail::any_grad({f}), [f, nx, ny, next, spacing](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gf = t.grad(f.id);
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t j = 0; j < ny; ++j) {
        const double d = g[i * ny + j] / spacing;
        gf[next(i, j)] += d;
        gf[i * ny + j] -= d;
      }
  });
}

/// Backward-difference divergence of (fx, fy), periodic; negative adjoint of the forward differences.
inline Var fd_div(Var fx, Var fy, double dx, double dy) {
  detail::same_shape(fx, fy, "fd_div");
  const auto& s = fx.shape();
  detail::require(s.size() == 2 && !fx.complex(), "fd_div: expected real [nx,ny]");
  const std::size_t nx = s[0], ny = s[1];
  Tensor out(s);
  const auto& a = fx.value().data;
  const auto& b = fy.value().data;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      const std::size_t im = (i + nx - 1) % nx, jm = (j + ny - 1) % ny;
      out.data[i * ny + j] = (a[i * ny + j] - a[im * ny + j]) / dx + (b[i * ny + j] - b[i * ny + jm]) / dy;
    }
  return fx.tape->push(std::move(out), detail::any_grad({fx, fy}), [fx, fy, nx, ny, dx, dy](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(fx.id)) {
      auto& ga = t.grad(fx.id);
      for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) {
          const std::size_t im = (i + nx - 1) % nx;
          ga[i * ny + j] += g[i * ny + j] / dx;
          ga[im * ny + j] -= g[i * ny + j] / dx;
        }
    }
    if (t.needs_grad(fy.id)) {
      auto& gb = t.grad(fy.id);
      for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j) {
          const std::size_t jm = (j + ny - 1) % ny;
          gb[i * ny + j] += g[i * ny + j] / dy;
          gb[i * ny + jm] -= g[i * ny + j] / dy;
        }
    }
  });
}

inline Var fd_laplacian(Var f, double dx, double dy) { return fd_div(fd_diff(f, 0, dx), fd_diff(f, 1, dy), dx, dy); }

// ---------------------------------------------------------- kernel mapping

/// out(i) = Σ_j K(c_i,c_j)·raw(j) / Σ_j (K(c_i,c_j) + ε), K = exp(−(c_i−c_j)²/2σ²).
/// Differentiable in both raw and c.
inline Var kernel_map(Var raw, Var c, double sigma, double eps) {
  detail::same_shape(raw, c, "kernel_map");
  detail::require(!raw.complex(), "kernel_map: real inputs required");
  detail::require(sigma > 0.0 && eps > 0.0, "kernel_map: sigma and epsilon must be positive");
  const std::size_t n = raw.value().size();
  const auto& rv = raw.value().data;
  const auto& cv = c.value().data;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  Tensor out(raw.shape());
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = cv[i] - cv[j];
      const double k = std::exp(-d * d * inv2s2);
      num += k * rv[j];
      den += k;
    }
    z[i] = den + static_cast<double>(n) * eps;
    out.data[i] = num / z[i];
  }
  std::vector<double> outv = out.data;
  return raw.tape->push(std::move(out), detail::any_grad({raw, c}),
                        [raw, c, n, inv2s2, z = std::move(z), outv = std::move(outv)](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& rv = raw.value().data;
    const auto& cv = c.value().data;
    const bool gr = t.needs_grad(raw.id), gc = t.needs_grad(c.id);
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = g[i] / z[i];
    std::vector<double> dr(n, 0.0), dc(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double d = cv[i] - cv[j];
        const double k = std::exp(-d * d * inv2s2);
        if (gr) dr[j] += a[i] * k;
        if (gc) {
          // ∂L/∂K_ij = a_i (raw_j − out_i); ∂K_ij/∂c_i = −2d·K·inv2s2
          const double dk = a[i] * (rv[j] - outv[i]) * k * (-2.0 * d * inv2s2);
          dc[i] += dk;
          dc[j] -= dk;
        }
      }
    }
    if (gr) detail::accumulate(t, raw, dr);
    if (gc) detail::accumulate(t, c, dc);
  });
}

// ------------------------------------------------------------ grad checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

struct GradCheckOptions {
  double h = 1e-6;
  std::size_t per_tensor = 64;
  std::uint64_t seed = 0;
  // denominator floor of the relative error, guarding near-zero gradients
  double floor = 1e-6;
};

/// Compares tape gradients of a scalar function against central differences,
/// probing a fixed-seed subsample of at least `per_tensor` coordinates per parameter.
inline GradCheckReport grad_check(const std::function<Var(Tape&)>& f, const std::vector<Parameter*>& params,
                                  const GradCheckOptions& opt = {}) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  auto eval = [&] {
    Tape tape;
    return f(tape).value().data[0];
  };
  GradCheckReport rep;
  std::mt19937_64 rng(opt.seed);
  for (auto* p : params) {
    const std::size_t n = p->scalar_count();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opt.per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.per_tensor);
    }
    for (std::size_t k : idx) {
      const double saved = p->value.data[k];
      p->value.data[k] = saved + opt.h;
      const double fp = eval();
      p->value.data[k] = saved - opt.h;
      const double fm = eval();
      p->value.data[k] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double analytic = p->grad[k];
      const double abs_err = std::abs(numeric - analytic);
      const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic), opt.floor});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = p->name + "[" + std::to_string(k) + "]";
      }
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace hpe::ad
