#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vqss::dsp {

// epsilon used by every log compression in the project
inline constexpr double kLogEps = 1e-5;

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 44100.0;

  Waveform() = default;
  Waveform(std::vector<double> s, double sr) : samples(std::move(s)), sample_rate(sr) {}
  int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

struct StftParams {
  int fft_size = 2048;
  int hop_size = 512;
  std::vector<double> window;  // length fft_size, non-negative

  // Periodic Hann taper. At hop = fft/4 the squared-window overlap-add sum is
  // exactly constant (3/2), which is the COLA condition the inverse relies on.
  static StftParams hann(int fft_size = 2048, int hop_size = 512);
};

struct ComplexSpectrogram {
  int64_t bins = 0;    // fft_size/2 + 1
  int64_t frames = 0;
  std::vector<double> re, im;  // row-major [bins, frames]
  StftParams params;

  double& re_at(int64_t b, int64_t t) { return re[b * frames + t]; }
  double& im_at(int64_t b, int64_t t) { return im[b * frames + t]; }
};

// magnitude / log-magnitude / phase share one layout
struct Spectrogram {
  int64_t bins = 0;
  int64_t frames = 0;
  std::vector<double> v;  // row-major [bins, frames]
  StftParams params;

  double& at(int64_t b, int64_t t) { return v[b * frames + t]; }
  double at(int64_t b, int64_t t) const { return v[b * frames + t]; }
};

using MagnitudeSpectrogram = Spectrogram;
using LogMagnitudeSpectrogram = Spectrogram;
using PhaseSpectrogram = Spectrogram;

inline constexpr int kMelBins = 128;

struct MelSpectrogram {
  int64_t bins = 0;  // always kMelBins
  int64_t frames = 0;
  std::vector<double> v;
  int fft_size = 0;
  int sample_rate = 0;
};

// ---- framing helpers shared with the differentiable STFT ops ----

// frames = 1 + floor(len / hop) under center padding (fft/2 reflected on both sides)
int64_t stft_frame_count(int64_t len, const StftParams& p);

// reflect-pad fft/2 samples on each side; requires len >= fft_size
std::vector<double> pad_reflect_center(const std::vector<double>& x, int fft_size);

// scatter gradient of a padded buffer back onto the unpadded signal
void fold_reflect_center(const std::vector<double>& g_padded, int fft_size, std::vector<double>& g_out);

// sum of squared shifted windows over the overlap-add span (length hop*(frames-1)+fft)
std::vector<double> ola_envelope(const StftParams& p, int64_t frames);

// maximum relative deviation of the squared-window overlap-add sum from its
// mean over the fully-overlapped interior; 0 means exact COLA
double cola_deviation(const StftParams& p);

// ---- spectra ----

ComplexSpectrogram stft(const Waveform& w, const StftParams& p);
MagnitudeSpectrogram magnitude(const ComplexSpectrogram& s);
PhaseSpectrogram phase(const ComplexSpectrogram& s);            // values in (-pi, pi]
LogMagnitudeSpectrogram log_magnitude(const ComplexSpectrogram& s);  // log(|z| + kLogEps)

// Weighted overlap-add inverse with envelope division; exact wherever the
// envelope is covered. out_len <= hop*(frames-1) + fft/2 is reconstructable;
// pass 0 to get hop*(frames-1) samples.
Waveform istft(const MagnitudeSpectrogram& mag, const PhaseSpectrogram& ph,
               const StftParams& p, int64_t out_len = 0);

// raw complex variant used internally and by the generator head
Waveform istft_complex(const ComplexSpectrogram& s, int64_t out_len = 0);

// [kMelBins, fft/2+1] triangular filterbank, HTK mel scale; rows are
// guaranteed non-empty. Deterministic for a given (sample_rate, fft_size).
const std::vector<double>& mel_filterbank(int sample_rate, int fft_size);

// log-compressed 128-bin mel spectrogram of the magnitude STFT
MelSpectrogram mel_spectrogram(const Waveform& w, const StftParams& p = StftParams::hann());

// sum over fft scales of (L1 of magnitudes + L1 of log magnitudes), each
// normalized by the scale's frame count; hop = scale/4, periodic Hann
double multiscale_spectral_distance(const Waveform& a, const Waveform& b,
                                    const std::vector<int>& scales);

inline const std::vector<int>& default_loss_scales() {
  static const std::vector<int> s{2048, 1024, 512, 256, 128, 64};
  return s;
}

}  // namespace vqss::dsp
