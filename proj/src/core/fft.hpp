#pragma once

#include <cstddef>
#include <vector>

namespace vqss::core {

// Iterative radix-2 complex FFT with cached plans. Only power-of-two sizes
// are supported; STFT sizes in this project are always powers of two.
struct FftPlan {
  size_t n = 0;
  std::vector<size_t> bitrev;      // permutation table
  std::vector<double> tw_re;       // e^{-2πij/n}, j in [0, n/2)
  std::vector<double> tw_im;
};

// Cached plan lookup, thread-safe. Throws std::invalid_argument if n is not a
// power of two or n < 2.
const FftPlan& fft_plan(size_t n);

// In-place transform. sign = -1: X_k = Σ_t x_t e^{-i2πkt/n} (forward).
// sign = +1: X_k = Σ_t x_t e^{+i2πkt/n} (unnormalized inverse).
void fft_inplace(const FftPlan& p, double* re, double* im, int sign);

// Real n-point forward transform; writes bins 0..n/2 (n/2+1 values each).
void rfft(const FftPlan& p, const double* x, double* out_re, double* out_im);

// Inverse of rfft for a Hermitian spectrum given as bins 0..n/2; writes n
// real samples, normalized by 1/n.
void irfft(const FftPlan& p, const double* re, const double* im, double* x);

// Adjoint of rfft as a linear map R^n -> R^{2(n/2+1)}:
// dx_t = Σ_{k<=n/2} [g_re_k cos(2πkt/n) − g_im_k sin(2πkt/n)].
void rfft_adjoint(const FftPlan& p, const double* g_re, const double* g_im, double* dx);

// Adjoint of irfft: g_re_k = (c_k/n) Σ_t gx_t cos(2πkt/n),
// g_im_k = −(c_k/n) Σ_t gx_t sin(2πkt/n); c_0 = c_{n/2} = 1, else 2.
void irfft_adjoint(const FftPlan& p, const double* gx, double* g_re, double* g_im);

}  // namespace vqss::core
