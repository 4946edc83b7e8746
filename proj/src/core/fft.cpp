#include "core/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace vqss::core {

namespace {

bool is_pow2(size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

std::unique_ptr<FftPlan> make_plan(size_t n) {
  auto p = std::make_unique<FftPlan>();
  p->n = n;
  p->bitrev.resize(n);
  size_t log2n = 0;
  while ((size_t{1} << log2n) < n) ++log2n;
  for (size_t i = 0; i < n; ++i) {
    size_t r = 0;
    for (size_t b = 0; b < log2n; ++b) r |= ((i >> b) & 1u) << (log2n - 1 - b);
    p->bitrev[i] = r;
  }
  p->tw_re.resize(n / 2);
  p->tw_im.resize(n / 2);
  for (size_t j = 0; j < n / 2; ++j) {
    const double a = -2.0 * M_PI * static_cast<double>(j) / static_cast<double>(n);
    p->tw_re[j] = std::cos(a);
    p->tw_im[j] = std::sin(a);
  }
  return p;
}

}  // namespace

const FftPlan& fft_plan(size_t n) {
  if (!is_pow2(n)) throw std::invalid_argument("fft_plan: size must be a power of two >= 2");
  static std::mutex mtx;
  static std::map<size_t, std::unique_ptr<FftPlan>> cache;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_plan(n)).first;
  return *it->second;
}

void fft_inplace(const FftPlan& p, double* re, double* im, int sign) {
  const size_t n = p.n;
  for (size_t i = 0; i < n; ++i) {
    const size_t r = p.bitrev[i];
    if (r > i) {
      std::swap(re[i], re[r]);
      std::swap(im[i], im[r]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t half = len >> 1;
    const size_t stride = n / len;
    for (size_t base = 0; base < n; base += len) {
      for (size_t j = 0; j < half; ++j) {
        const double wr = p.tw_re[j * stride];
        const double wi = sign < 0 ? p.tw_im[j * stride] : -p.tw_im[j * stride];
        const size_t a = base + j;
        const size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

void rfft(const FftPlan& p, const double* x, double* out_re, double* out_im) {
  const size_t n = p.n;
  std::vector<double> re(x, x + n), im(n, 0.0);
  fft_inplace(p, re.data(), im.data(), -1);
  for (size_t k = 0; k <= n / 2; ++k) {
    out_re[k] = re[k];
    out_im[k] = im[k];
  }
}

void irfft(const FftPlan& p, const double* re_in, const double* im_in, double* x) {
  const size_t n = p.n;
  std::vector<double> re(n), im(n);
  for (size_t k = 0; k <= n / 2; ++k) {
    re[k] = re_in[k];
    im[k] = im_in[k];
  }
  for (size_t k = n / 2 + 1; k < n; ++k) {
    re[k] = re_in[n - k];
    im[k] = -im_in[n - k];
  }
  fft_inplace(p, re.data(), im.data(), +1);
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t t = 0; t < n; ++t) x[t] = re[t] * inv;
}

void rfft_adjoint(const FftPlan& p, const double* g_re, const double* g_im, double* dx) {
  const size_t n = p.n;
  std::vector<double> re(n, 0.0), im(n, 0.0);
  for (size_t k = 0; k <= n / 2; ++k) {
    re[k] = g_re[k];
    im[k] = g_im[k];
  }
  fft_inplace(p, re.data(), im.data(), +1);
  for (size_t t = 0; t < n; ++t) dx[t] = re[t];
}

void irfft_adjoint(const FftPlan& p, const double* gx, double* g_re, double* g_im) {
  const size_t n = p.n;
  std::vector<double> re(gx, gx + n), im(n, 0.0);
  fft_inplace(p, re.data(), im.data(), -1);
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t k = 0; k <= n / 2; ++k) {
    const double c = (k == 0 || k == n / 2) ? 1.0 : 2.0;
    g_re[k] = c * inv * re[k];
    g_im[k] = c * inv * im[k];
  }
}

}  // namespace vqss::core
