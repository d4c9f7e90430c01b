#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hpe/diff.hpp"
#include "hpe/error.hpp"
#include "hpe/fft.hpp"

namespace hpe {

enum class Activation { Gelu, Identity };

struct AFNOConfig {
  std::size_t patch_h = 4;
  std::size_t patch_w = 4;
  std::size_t embed_dim = 32;
  std::size_t in_channels = 1;
  std::size_t out_channels = 3;
  std::size_t num_blocks = 2;
  std::size_t depth = 1;
  double mlp_ratio = 2.0;
  double dropout = 0.3;
  double sparsity_threshold = 0.01;
  double hard_threshold_fraction = 1.0;
  // hidden width of each frequency-MLP block, as a multiple of the block size
  std::size_t freq_hidden_factor = 2;
  Activation activation = Activation::Gelu;
  bool positional = true;

  void validate() const {
    if (embed_dim == 0 || num_blocks == 0 || embed_dim % num_blocks != 0)
      throw ConfigError("afno: embed_dim " + std::to_string(embed_dim) + " not divisible by num_blocks " +
                        std::to_string(num_blocks));
    if (patch_h == 0 || patch_w == 0) throw ConfigError("afno: patch sides must be positive");
    if (in_channels == 0 || out_channels == 0) throw ConfigError("afno: channel counts must be positive");
    if (!(hard_threshold_fraction > 0.0 && hard_threshold_fraction <= 1.0))
      throw ConfigError("afno: hard_threshold_fraction must lie in (0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("afno: dropout must lie in [0, 1)");
    if (!(mlp_ratio > 0.0) || freq_hidden_factor == 0) throw ConfigError("afno: hidden widths must be positive");
    if (!(sparsity_threshold >= 0.0)) throw ConfigError("afno: sparsity threshold must be non-negative");
  }

  void validate_grid(std::size_t nx, std::size_t ny) const {
    validate();
    if (nx % patch_h != 0 || ny % patch_w != 0)
      throw ConfigError("afno: grid " + std::to_string(nx) + "x" + std::to_string(ny) + " not divisible by patch " +
                        std::to_string(patch_h) + "x" + std::to_string(patch_w));
  }

  std::size_t block_size() const { return embed_dim / num_blocks; }
  std::size_t mlp_hidden() const { return static_cast<std::size_t>(std::llround(embed_dim * mlp_ratio)); }
  std::size_t patch_features(std::size_t channels) const { return channels * patch_h * patch_w; }
};

struct AFNOLayer {
  ad::Parameter w1, w2, b;  // frequency MLP: complex [nb, bs, hb], [nb, hb, bs], [d]
  ad::Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct AFNOParams {
  AFNOConfig cfg;
  std::size_t nx = 0, ny = 0;
  ad::Parameter patch_w, patch_b, pos;
  std::vector<AFNOLayer> layers;
  ad::Parameter proj_w, proj_b;

  std::size_t h_tokens() const { return nx / cfg.patch_h; }
  std::size_t w_tokens() const { return ny / cfg.patch_w; }

  std::vector<ad::Parameter*> params() {
    std::vector<ad::Parameter*> out{&patch_w, &patch_b};
    if (cfg.positional) out.push_back(&pos);
    for (auto& l : layers)
      for (auto* p : {&l.w1, &l.w2, &l.b, &l.mlp_w1, &l.mlp_b1, &l.mlp_w2, &l.mlp_b2}) out.push_back(p);
    out.push_back(&proj_w);
    out.push_back(&proj_b);
    return out;
  }

  /// Number of real scalars over all learnable tensors.
  std::size_t scalar_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->scalar_count();
    return n;
  }
};

/// Complex entries of one frequency MLP: block weights of both layers plus the bias.
inline std::size_t frequency_layer_complex_count(const AFNOConfig& c) {
  const std::size_t bs = c.block_size(), hb = bs * c.freq_hidden_factor;
  return c.num_blocks * (bs * hb + hb * bs) + c.embed_dim;
}

inline AFNOParams init_afno(const AFNOConfig& cfg, std::size_t nx, std::size_t ny, std::uint64_t seed) {
  cfg.validate_grid(nx, ny);
  AFNOParams p;
  p.cfg = cfg;
  p.nx = nx;
  p.ny = ny;
  std::mt19937_64 rng(seed);
  auto uniform = [&](const std::string& name, ad::Shape s, std::size_t fan_in) {
    ad::Tensor t(std::move(s));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-a, a);
    for (auto& v : t.data) v = u(rng);
    return ad::Parameter(name, std::move(t));
  };
  auto normal_c = [&](const std::string& name, ad::Shape s, double scale) {
    ad::Tensor t(std::move(s), true);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : t.data) v = scale * n(rng);
    return ad::Parameter(name, std::move(t));
  };
  auto zeros = [](const std::string& name, ad::Shape s, bool cx = false) {
    return ad::Parameter(name, ad::Tensor(std::move(s), cx));
  };
  const std::size_t d = cfg.embed_dim, fin = cfg.patch_features(cfg.in_channels);
  const std::size_t fout = cfg.patch_features(cfg.out_channels);
  const std::size_t nb = cfg.num_blocks, bs = cfg.block_size(), hb = bs * cfg.freq_hidden_factor;
  const std::size_t hid = cfg.mlp_hidden();
  p.patch_w = uniform("patch_w", {fin, d}, fin);
  p.patch_b = zeros("patch_b", {d});
  p.pos = zeros("pos", {p.h_tokens() * p.w_tokens(), d});
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    AFNOLayer layer;
    layer.w1 = normal_c(pre + "freq_w1", {nb, bs, hb}, 0.02);
    layer.w2 = normal_c(pre + "freq_w2", {nb, hb, bs}, 0.02);
    layer.b = zeros(pre + "freq_b", {d}, true);
    layer.mlp_w1 = uniform(pre + "mlp_w1", {d, hid}, d);
    layer.mlp_b1 = zeros(pre + "mlp_b1", {hid});
    layer.mlp_w2 = uniform(pre + "mlp_w2", {hid, d}, hid);
    layer.mlp_b2 = zeros(pre + "mlp_b2", {d});
    p.layers.push_back(std::move(layer));
  }
  p.proj_w = uniform("proj_w", {d, fout}, d);
  p.proj_b = zeros("proj_b", {fout});
  return p;
}

namespace afno_detail {

inline ad::Var activate(ad::Var x, Activation a) { return a == Activation::Gelu ? ad::gelu(x) : x; }

inline std::uint64_t site_seed(std::uint64_t seed, std::uint64_t site) {
  return ad::detail::splitmix64(seed * 0x100000001b3ULL + site);
}

/// 1 for modes with |k1| ≤ f·h/2 and |k2| ≤ f·w/2, else 0.
inline std::vector<double> mode_mask(std::size_t h, std::size_t w, double fraction) {
  std::vector<double> m(h * w, 0.0);
  const double rh = fraction * static_cast<double>(h) / 2.0, rw = fraction * static_cast<double>(w) / 2.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      if (std::abs(fft::wrap(i, h)) <= rh && std::abs(fft::wrap(j, w)) <= rw) m[i * w + j] = 1.0;
  return m;
}

}  // namespace afno_detail

/// fields [C, nx, ny] → tokens [h·w, d] with the positional table added.
inline ad::Var patch_embed(ad::Tape& t, ad::Var fields, AFNOParams& p) {
  const auto& s = fields.shape();
  if (s.size() != 3 || s[0] != p.cfg.in_channels || s[1] != p.nx || s[2] != p.ny)
    throw ConfigError("patch_embed: expected [" + std::to_string(p.cfg.in_channels) + "," + std::to_string(p.nx) +
                      "," + std::to_string(p.ny) + "], got " + ad::shape_str(s));
  ad::Var tok = ad::patchify(fields, p.cfg.patch_h, p.cfg.patch_w);
  tok = ad::add_bias(ad::matmul(tok, t.param(p.patch_w)), t.param(p.patch_b));
  if (p.cfg.positional) tok = ad::add(tok, t.param(p.pos));
  return tok;
}

/// Token mixing in the Fourier domain of the token lattice, with residual.
inline ad::Var fourier_mix(ad::Tape& t, ad::Var tokens, AFNOLayer& l, const AFNOConfig& cfg, std::size_t h,
                           std::size_t w) {
  const std::size_t d = cfg.embed_dim;
  if (tokens.shape() != ad::Shape{h * w, d})
    throw ConfigError("fourier_mix: expected [" + std::to_string(h * w) + "," + std::to_string(d) + "], got " +
                      ad::shape_str(tokens.shape()));
  ad::Var z = ad::reshape(ad::dft2(ad::reshape(tokens, {h, w, d})), {h * w, d});
  z = ad::block_matmul(afno_detail::activate(ad::block_matmul(z, t.param(l.w1)), cfg.activation), t.param(l.w2));
  z = ad::softshrink(ad::add_bias(z, t.param(l.b)), cfg.sparsity_threshold);
  ad::Var zg = ad::reshape(z, {h, w, d});
  if (cfg.hard_threshold_fraction < 1.0) zg = ad::mask_modes(zg, afno_detail::mode_mask(h, w, cfg.hard_threshold_fraction));
  ad::Var y = ad::reshape(ad::real(ad::idft2(zg)), {h * w, d});
  return ad::add(y, tokens);
}

/// Tokenwise d → hidden → d MLP with dropout, with residual.
inline ad::Var channel_mlp(ad::Tape& t, ad::Var tokens, AFNOLayer& l, const AFNOConfig& cfg, bool train,
                           std::uint64_t seed) {
  ad::Var hdn = afno_detail::activate(ad::add_bias(ad::matmul(tokens, t.param(l.mlp_w1)), t.param(l.mlp_b1)), cfg.activation);
  hdn = ad::dropout(hdn, cfg.dropout, afno_detail::site_seed(seed, 1), train);
  ad::Var y = ad::add_bias(ad::matmul(hdn, t.param(l.mlp_w2)), t.param(l.mlp_b2));
  y = ad::dropout(y, cfg.dropout, afno_detail::site_seed(seed, 2), train);
  return ad::add(y, tokens);
}

/// fields [in, nx, ny] → [out, nx, ny].
inline ad::Var afno_forward(ad::Tape& t, ad::Var fields, AFNOParams& p, bool train, std::uint64_t seed = 0) {
  ad::Var x = patch_embed(t, fields, p);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    x = fourier_mix(t, x, p.layers[l], p.cfg, p.h_tokens(), p.w_tokens());
    x = channel_mlp(t, x, p.layers[l], p.cfg, train, afno_detail::site_seed(seed, 100 + l));
  }
  x = ad::add_bias(ad::matmul(x, t.param(p.proj_w)), t.param(p.proj_b));
  return ad::unpatchify(x, p.cfg.out_channels, p.nx, p.ny, p.cfg.patch_h, p.cfg.patch_w);
}

}  // namespace hpe
