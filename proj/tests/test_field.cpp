#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hpe/field.hpp"
#include "test_util.hpp"

using namespace hpe;
using hpe::testing::grid;
using hpe::testing::random_field;

TEST(Dft2, ConstantFieldOnlyDc) {
  RealField f(grid(4), 0.7);
  const auto s = dft2(f);
  EXPECT_NEAR(s(0, 0).real(), 11.2, 1e-12);
  EXPECT_NEAR(s(0, 0).imag(), 0.0, 1e-12);
  for (std::size_t k = 1; k < 16; ++k) EXPECT_LT(std::abs(s.modes[k]), 1e-12);
}

TEST(Dft2, MatchesBruteForce4x4) {
  const auto f = random_field(grid(4), 11);
  const auto s = dft2(f);
  const auto ref = hpe::testing::brute_dft(f);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_LT(std::abs(s.modes[k] - ref[k]), 1e-12);
}

TEST(Dft2, MatchesBruteForceNonPowerOfTwo) {
  const auto f = random_field(GridSpec{6, 10, 1.0, 1.0}, 12);
  const auto s = dft2(f);
  const auto ref = hpe::testing::brute_dft(f);
  for (std::size_t k = 0; k < f.size(); ++k) EXPECT_LT(std::abs(s.modes[k] - ref[k]), 1e-12);
}

TEST(Dft2, RoundTripAllSizes) {
  for (std::size_t n : {4, 8, 16, 64}) {
    const auto f = hpe::testing::random_complex(grid(n), n);
    const auto back = idft2(dft2(f));
    double err = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      err = std::max(err, std::abs(back[k] - f[k]));
      norm = std::max(norm, std::abs(f[k]));
    }
    EXPECT_LT(err / norm, 1e-12) << n;
  }
}

TEST(Dft2, RealRoundTripHasTinyImaginary) {
  const auto f = random_field(grid(16), 3);
  const auto back = idft2(dft2(f));
  for (std::size_t k = 0; k < f.size(); ++k) {
    EXPECT_LT(std::abs(back[k].imag()), 1e-12);
    EXPECT_NEAR(back[k].real(), f[k], 1e-12);
  }
}

TEST(Dft2, Parseval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = random_field(grid(16), seed);
    const auto s = dft2(f);
    double lhs = 0.0, rhs = 0.0;
    for (double v : f.values) lhs += v * v;
    for (const auto& m : s.modes) rhs += std::norm(m);
    rhs /= f.size();
    EXPECT_LT(std::abs(lhs - rhs) / lhs, 1e-10);
  }
}

TEST(Dft2, RejectsNonFinite) {
  RealField f(grid(4), 0.0);
  f[3] = std::nan("");
  EXPECT_THROW(dft2(f), DomainError);
}

TEST(Dft2, RejectsOddGrid) {
  RealField f(GridSpec{5, 4, 1.0, 1.0});
  EXPECT_THROW(dft2(f), ConfigError);
}

TEST(Idft2, ZeroAndDcNormalization) {
  SpectralField s{grid(4), std::vector<cplx>(16, 0.0)};
  for (const auto& v : idft2(s).values) EXPECT_EQ(v, cplx(0.0));
  s.modes[0] = 16.0;
  for (const auto& v : idft2(s).values) EXPECT_NEAR(v.real(), 1.0, 1e-15);
}

TEST(Idft2, SineTransformPair) {
  // sin(2πi/n) ↔ modes ±1 carrying ∓i·n·ny/2
  const std::size_t n = 8;
  SpectralField s{grid(n), std::vector<cplx>(n * n, 0.0)};
  const double half = static_cast<double>(n * n) / 2.0;
  s(1, 0) = cplx(0.0, -half);
  s(n - 1, 0) = cplx(0.0, half);
  const auto f = idft2(s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      EXPECT_NEAR(f(i, j).real(), std::sin(2.0 * std::numbers::pi * i / n), 1e-12);
}

TEST(SpectralDerivative, ConstantAndIdentity) {
  RealField f(grid(8), 2.5);
  const auto s = dft2(f);
  for (auto [ox, oy] : {std::pair{1, 0}, {0, 1}, {2, 0}, {1, 1}, {0, 4}}) {
    const auto d = idft2(spectral_derivative(s, ox, oy));
    for (const auto& v : d.values) EXPECT_LT(std::abs(v), 1e-12);
  }
  const auto g = random_field(grid(8), 5);
  const auto id = real_part(idft2(spectral_derivative(dft2(g), 0, 0)));
  EXPECT_LT(hpe::testing::max_abs_diff(id, g), 1e-12);
}

TEST(SpectralDerivative, SecondDerivativeOfSine) {
  const std::size_t n = 32;
  const double dx = 0.5;
  const double L = n * dx;
  RealField f(grid(n, dx));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) f(i, j) = std::sin(2.0 * std::numbers::pi * i * dx / L);
  const auto d2 = real_part(idft2(spectral_derivative(dft2(f), 2, 0)));
  const double k = 2.0 * std::numbers::pi / L;
  for (std::size_t k0 = 0; k0 < f.size(); ++k0) EXPECT_NEAR(d2[k0], -k * k * f[k0], 1e-10);
}

TEST(SpectralDerivative, FirstTwiceEqualsSecondModuloNyquist) {
  const auto f = random_field(grid(16), 9);
  auto s = dft2(f);
  for (std::size_t k2 = 0; k2 < 16; ++k2) s(8, k2) = 0.0;  // drop the x-Nyquist row
  const auto a = spectral_derivative(spectral_derivative(s, 1, 0), 1, 0);
  const auto b = spectral_derivative(s, 2, 0);
  for (std::size_t k = 0; k < s.modes.size(); ++k) EXPECT_LT(std::abs(a.modes[k] - b.modes[k]), 1e-12 * 256);
  const auto ra = real_part(idft2(a)), rb = real_part(idft2(b));
  EXPECT_LT(hpe::testing::max_abs_diff(ra, rb), 1e-12);
}

TEST(FiniteDifference, ConstantGivesZero) {
  RealField f(grid(8), 3.0);
  auto [gx, gy] = fd_grad(f);
  for (std::size_t k = 0; k < f.size(); ++k) {
    EXPECT_EQ(gx[k], 0.0);
    EXPECT_EQ(gy[k], 0.0);
  }
  for (double v : fd_div(f, f).values) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, SawtoothWrap) {
  const std::size_t n = 8;
  const double dx = 0.25;
  RealField f(grid(n, dx));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) f(i, j) = i * dx;
  auto [gx, gy] = fd_grad(f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_NEAR(gx(i, j), i == n - 1 ? -(double(n) - 1.0) : 1.0, 1e-14);
      EXPECT_EQ(gy(i, j), 0.0);
    }
}

TEST(FiniteDifference, GradIsLinear) {
  const auto f = random_field(grid(8), 1), g = random_field(grid(8), 2);
  const double a = 0.5, b = -2.0;  // exactly representable scalings
  const auto lhs = fd_grad(a * f + b * g);
  const auto fg = fd_grad(f), gg = fd_grad(g);
  for (std::size_t k = 0; k < f.size(); ++k) {
    EXPECT_NEAR(lhs.first[k], a * fg.first[k] + b * gg.first[k], 1e-15);
    EXPECT_NEAR(lhs.second[k], a * fg.second[k] + b * gg.second[k], 1e-15);
  }
}

TEST(FiniteDifference, ImpulseLaplacianIsFivePointStencil) {
  RealField f(grid(4), 0.0);
  f(1, 2) = 1.0;
  const auto lap = fd_laplacian(f);
  RealField expect(grid(4), 0.0);
  expect(1, 2) = -4.0;
  expect(0, 2) = expect(2, 2) = expect(1, 1) = expect(1, 3) = 1.0;
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(lap[k], expect[k]);
}

TEST(FiniteDifference, DivergenceSumsToZero) {
  const auto fx = random_field(grid(16), 4), fy = random_field(grid(16), 5);
  double s = 0.0;
  for (double v : fd_div(fx, fy).values) s += v;
  EXPECT_NEAR(s, 0.0, 1e-12);
}

TEST(FiniteDifference, DivIsNegativeAdjointOfGrad) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GridSpec g{8, 12, 0.5, 2.0};
    const auto f = random_field(g, seed);
    const auto gx = random_field(g, seed + 100), gy = random_field(g, seed + 200);
    auto [fx, fy] = fd_grad(f);
    const double lhs = inner(fx, gx) + inner(fy, gy);
    const double rhs = -inner(f, fd_div(gx, gy));
    EXPECT_NEAR(lhs, rhs, 1e-13 * std::max(1.0, std::abs(lhs)) * 10);
  }
}

TEST(FiniteDifference, DivRejectsGridMismatch) {
  RealField a(grid(4)), b(grid(8));
  EXPECT_THROW(fd_div(a, b), ConfigError);
}
