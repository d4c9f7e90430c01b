#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <tuple>

namespace hpe::fft {

using cplx = std::complex<double>;

namespace detail {

// FFTW_ESTIMATE gives reproducible plans; FFTW_UNALIGNED keeps the codelet
// choice independent of where a buffer happens to land in memory.
inline fftw_plan plan(std::size_t rows, std::size_t cols, int sign) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> cache;
  std::lock_guard lock(mu);
  auto& p = cache[{rows, cols, sign}];
  if (p == nullptr) {
    auto* buf = fftw_alloc_complex(rows * cols);
    p = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf, buf,
                         sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(buf);
  }
  return p;
}

}  // namespace detail

/// In-place unnormalized 2-D transform of a row-major rows×cols array with kernel e^{sign·2πi(...)}.
inline void transform2(std::span<cplx> data, std::size_t rows, std::size_t cols, int sign) {
  if (rows * cols <= 1) return;
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(detail::plan(rows, cols, sign), ptr, ptr);
}

/// In-place unnormalized 1-D transform.
inline void transform(std::span<cplx> x, int sign) { transform2(x, 1, x.size(), sign); }

/// Signed frequency of DFT bin k for a length-n transform.
inline long wrap(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

}  // namespace hpe::fft
