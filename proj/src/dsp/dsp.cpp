#include "dsp/dsp.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "core/fft.hpp"
#include "core/parallel.hpp"

namespace vqss::dsp {

using core::fft_plan;

StftParams StftParams::hann(int fft_size, int hop_size) {
  if (fft_size < 2 || hop_size < 1 || hop_size > fft_size)
    throw std::invalid_argument("StftParams: need 0 < hop <= fft");
  StftParams p;
  p.fft_size = fft_size;
  p.hop_size = hop_size;
  p.window.resize(fft_size);
  for (int t = 0; t < fft_size; ++t)
    p.window[t] = 0.5 * (1.0 - std::cos(2.0 * M_PI * t / fft_size));
  return p;
}

int64_t stft_frame_count(int64_t len, const StftParams& p) {
  return 1 + len / p.hop_size;
}

std::vector<double> pad_reflect_center(const std::vector<double>& x, int fft_size) {
  const int64_t pad = fft_size / 2;
  const int64_t n = static_cast<int64_t>(x.size());
  if (n < fft_size) throw std::invalid_argument("stft: input shorter than one frame");
  std::vector<double> out(n + 2 * pad);
  for (int64_t i = 0; i < pad; ++i) out[i] = x[pad - i];
  for (int64_t i = 0; i < n; ++i) out[pad + i] = x[i];
  for (int64_t i = 0; i < pad; ++i) out[pad + n + i] = x[n - 2 - i];
  return out;
}

void fold_reflect_center(const std::vector<double>& g_padded, int fft_size,
                         std::vector<double>& g_out) {
  const int64_t pad = fft_size / 2;
  const int64_t n = static_cast<int64_t>(g_padded.size()) - 2 * pad;
  g_out.assign(n, 0.0);
  for (int64_t i = 0; i < pad; ++i) g_out[pad - i] += g_padded[i];
  for (int64_t i = 0; i < n; ++i) g_out[i] += g_padded[pad + i];
  for (int64_t i = 0; i < pad; ++i) g_out[n - 2 - i] += g_padded[pad + n + i];
}

std::vector<double> ola_envelope(const StftParams& p, int64_t frames) {
  const int64_t len = p.hop_size * (frames - 1) + p.fft_size;
  std::vector<double> env(len, 0.0);
  for (int64_t f = 0; f < frames; ++f) {
    const int64_t off = f * p.hop_size;
    for (int t = 0; t < p.fft_size; ++t) env[off + t] += p.window[t] * p.window[t];
  }
  return env;
}

double cola_deviation(const StftParams& p) {
  const int64_t frames = 16;
  const auto env = ola_envelope(p, frames);
  const int64_t lo = p.fft_size;
  const int64_t hi = static_cast<int64_t>(env.size()) - p.fft_size;
  if (hi <= lo) return 0.0;
  double mean = 0.0;
  for (int64_t t = lo; t < hi; ++t) mean += env[t];
  mean /= static_cast<double>(hi - lo);
  double dev = 0.0;
  for (int64_t t = lo; t < hi; ++t) dev = std::max(dev, std::abs(env[t] - mean));
  return dev / mean;
}

ComplexSpectrogram stft(const Waveform& w, const StftParams& p) {
  const auto padded = pad_reflect_center(w.samples, p.fft_size);
  const int64_t frames = stft_frame_count(w.size(), p);
  const int64_t bins = p.fft_size / 2 + 1;
  ComplexSpectrogram out;
  out.bins = bins;
  out.frames = frames;
  out.params = p;
  out.re.assign(bins * frames, 0.0);
  out.im.assign(bins * frames, 0.0);
  const auto& plan = fft_plan(static_cast<size_t>(p.fft_size));
  core::parallel_for(frames, [&](int64_t f) {
    std::vector<double> buf(p.fft_size), fre(bins), fim(bins);
    const int64_t off = f * p.hop_size;
    for (int t = 0; t < p.fft_size; ++t) buf[t] = padded[off + t] * p.window[t];
    core::rfft(plan, buf.data(), fre.data(), fim.data());
    for (int64_t b = 0; b < bins; ++b) {
      out.re[b * frames + f] = fre[b];
      out.im[b * frames + f] = fim[b];
    }
  });
  return out;
}

MagnitudeSpectrogram magnitude(const ComplexSpectrogram& s) {
  MagnitudeSpectrogram out;
  out.bins = s.bins;
  out.frames = s.frames;
  out.params = s.params;
  out.v.resize(s.re.size());
  for (size_t i = 0; i < s.re.size(); ++i) out.v[i] = std::hypot(s.re[i], s.im[i]);
  return out;
}

PhaseSpectrogram phase(const ComplexSpectrogram& s) {
  PhaseSpectrogram out;
  out.bins = s.bins;
  out.frames = s.frames;
  out.params = s.params;
  out.v.resize(s.re.size());
  for (size_t i = 0; i < s.re.size(); ++i) {
    double ph = std::atan2(s.im[i], s.re[i]);
    if (ph <= -M_PI) ph = M_PI;  // convention: (-pi, pi]
    out.v[i] = ph;
  }
  return out;
}

LogMagnitudeSpectrogram log_magnitude(const ComplexSpectrogram& s) {
  LogMagnitudeSpectrogram out;
  out.bins = s.bins;
  out.frames = s.frames;
  out.params = s.params;
  out.v.resize(s.re.size());
  for (size_t i = 0; i < s.re.size(); ++i)
    out.v[i] = std::log(std::hypot(s.re[i], s.im[i]) + kLogEps);
  return out;
}

Waveform istft_complex(const ComplexSpectrogram& s, int64_t out_len) {
  const StftParams& p = s.params;
  const int64_t frames = s.frames;
  const int64_t bins = s.bins;
  if (bins != p.fft_size / 2 + 1) throw std::invalid_argument("istft: bins do not match params");
  const int64_t ola_len = p.hop_size * (frames - 1) + p.fft_size;
  const int64_t pad = p.fft_size / 2;
  if (out_len <= 0) out_len = p.hop_size * (frames - 1);
  if (pad + out_len > ola_len)
    throw std::invalid_argument("istft: requested length exceeds covered region");

  std::vector<double> acc(ola_len, 0.0);
  const auto& plan = fft_plan(static_cast<size_t>(p.fft_size));
  std::vector<double> fre(bins), fim(bins), buf(p.fft_size);
  for (int64_t f = 0; f < frames; ++f) {
    for (int64_t b = 0; b < bins; ++b) {
      fre[b] = s.re[b * frames + f];
      fim[b] = s.im[b * frames + f];
    }
    core::irfft(plan, fre.data(), fim.data(), buf.data());
    const int64_t off = f * p.hop_size;
    for (int t = 0; t < p.fft_size; ++t) acc[off + t] += buf[t] * p.window[t];
  }
  const auto env = ola_envelope(p, frames);
  Waveform out;
  out.sample_rate = 44100.0;
  out.samples.resize(out_len);
  for (int64_t t = 0; t < out_len; ++t) {
    const double e = env[pad + t];
    out.samples[t] = acc[pad + t] / (e > 1e-12 ? e : 1e-12);
  }
  return out;
}

Waveform istft(const MagnitudeSpectrogram& mag, const PhaseSpectrogram& ph,
               const StftParams& p, int64_t out_len) {
  if (mag.bins != ph.bins || mag.frames != ph.frames)
    throw std::invalid_argument("istft: magnitude/phase geometry mismatch");
  if (mag.bins != p.fft_size / 2 + 1)
    throw std::invalid_argument("istft: spectrogram does not match params");
  ComplexSpectrogram c;
  c.bins = mag.bins;
  c.frames = mag.frames;
  c.params = p;
  c.re.resize(mag.v.size());
  c.im.resize(mag.v.size());
  for (size_t i = 0; i < mag.v.size(); ++i) {
    c.re[i] = mag.v[i] * std::cos(ph.v[i]);
    c.im[i] = mag.v[i] * std::sin(ph.v[i]);
  }
  return istft_complex(c, out_len);
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> build_mel_filterbank(int sample_rate, int fft_size) {
  const int bins = fft_size / 2 + 1;
  std::vector<double> fb(static_cast<size_t>(kMelBins) * bins, 0.0);
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(kMelBins + 2);
  for (int i = 0; i < kMelBins + 2; ++i)
    edges[i] = mel_to_hz(mel_max * i / (kMelBins + 1));
  const double bin_hz = static_cast<double>(sample_rate) / fft_size;
  for (int m = 0; m < kMelBins; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double row_sum = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > left && f < center)
        w = (f - left) / (center - left);
      else if (f >= center && f < right)
        w = (right - f) / (right - center);
      fb[static_cast<size_t>(m) * bins + k] = w;
      row_sum += w;
    }
    if (row_sum <= 0.0) {
      // narrow triangle fell between bin centers; keep the nearest bin
      int k = static_cast<int>(std::lround(center / bin_hz));
      if (k < 0) k = 0;
      if (k >= bins) k = bins - 1;
      fb[static_cast<size_t>(m) * bins + k] = 1.0;
    }
  }
  return fb;
}

}  // namespace

const std::vector<double>& mel_filterbank(int sample_rate, int fft_size) {
  static std::mutex mtx;
  static std::map<std::pair<int, int>, std::vector<double>> cache;
  std::lock_guard<std::mutex> lock(mtx);
  auto key = std::make_pair(sample_rate, fft_size);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_mel_filterbank(sample_rate, fft_size)).first;
  return it->second;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const StftParams& p) {
  const auto mag = magnitude(stft(w, p));
  const auto& fb = mel_filterbank(static_cast<int>(w.sample_rate), p.fft_size);
  MelSpectrogram out;
  out.bins = kMelBins;
  out.frames = mag.frames;
  out.fft_size = p.fft_size;
  out.sample_rate = static_cast<int>(w.sample_rate);
  out.v.assign(static_cast<size_t>(kMelBins) * mag.frames, 0.0);
  const int64_t fbins = mag.bins;
  core::parallel_for(kMelBins, [&](int64_t m) {
    for (int64_t t = 0; t < mag.frames; ++t) {
      double acc = 0.0;
      for (int64_t k = 0; k < fbins; ++k)
        acc += fb[m * fbins + k] * mag.v[k * mag.frames + t];
      out.v[m * mag.frames + t] = std::log(acc + kLogEps);
    }
  });
  return out;
}

double multiscale_spectral_distance(const Waveform& a, const Waveform& b,
                                    const std::vector<int>& scales) {
  if (a.size() != b.size())
    throw std::invalid_argument("multiscale_spectral_distance: length mismatch");
  double total = 0.0;
  for (int scale : scales) {
    const auto p = StftParams::hann(scale, scale / 4);
    const auto ma = magnitude(stft(a, p));
    const auto mb = magnitude(stft(b, p));
    double l1_mag = 0.0, l1_log = 0.0;
    for (size_t i = 0; i < ma.v.size(); ++i) {
      l1_mag += std::abs(ma.v[i] - mb.v[i]);
      l1_log += std::abs(std::log(ma.v[i] + kLogEps) - std::log(mb.v[i] + kLogEps));
    }
    total += (l1_mag + l1_log) / static_cast<double>(ma.frames);
  }
  return total;
}

}  // namespace vqss::dsp
