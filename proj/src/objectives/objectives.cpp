#include "objectives/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace vqss::objectives {

using ag::Var;

double l1_log_spectrogram(const dsp::Waveform& a, const dsp::Waveform& b,
                          const dsp::StftParams& p) {
  if (a.size() != b.size()) throw std::invalid_argument("l1_log_spectrogram: length mismatch");
  const auto la = dsp::log_magnitude(dsp::stft(a, p));
  const auto lb = dsp::log_magnitude(dsp::stft(b, p));
  double acc = 0.0;
  for (size_t i = 0; i < la.v.size(); ++i) acc += std::abs(la.v[i] - lb.v[i]);
  return acc / static_cast<double>(la.v.size());
}

double reconstruction_loss(const dsp::Waveform& pred, const dsp::Waveform& target,
                           const dsp::StftParams& p, const std::vector<int>& scales) {
  if (pred.size() != target.size())
    throw std::invalid_argument("reconstruction_loss: length mismatch");
  return l1_log_spectrogram(pred, target, p) +
         dsp::multiscale_spectral_distance(pred, target, scales);
}

double adversarial_d_loss(const std::vector<double>& real_scores,
                          const std::vector<double>& fake_scores) {
  double acc_r = 0.0, acc_f = 0.0;
  for (double s : real_scores) acc_r += std::max(0.0, 1.0 - s);
  for (double s : fake_scores) acc_f += std::max(0.0, 1.0 + s);
  return acc_r / real_scores.size() + acc_f / fake_scores.size();
}

double adversarial_g_loss(const std::vector<double>& fake_scores) {
  double acc = 0.0;
  for (double s : fake_scores) acc += s;
  return -acc / fake_scores.size();
}

double total_generator_loss(double adv_g, double rec, double vq, double lambda_rec,
                            double lambda_vq) {
  return adv_g + lambda_rec * rec + lambda_vq * vq;
}

// ---- differentiable variants ----

namespace {

// L1 between pred spectra and fixed target spectra, one scale.
// normalization 1/(elements) for the log term, 1/frames for multi-scale terms
struct TargetSpectra {
  std::vector<double> mag;
  std::vector<double> log_mag;
  int64_t bins = 0, frames = 0;
};

TargetSpectra target_spectra(const std::vector<double>& target, int64_t batch, int64_t len,
                             const dsp::StftParams& p) {
  TargetSpectra t;
  t.frames = dsp::stft_frame_count(len, p);
  t.bins = p.fft_size / 2 + 1;
  t.mag.resize(static_cast<size_t>(batch) * t.bins * t.frames);
  t.log_mag.resize(t.mag.size());
  for (int64_t b = 0; b < batch; ++b) {
    dsp::Waveform w;
    w.samples.assign(target.begin() + b * len, target.begin() + (b + 1) * len);
    const auto c = dsp::stft(w, p);
    for (size_t i = 0; i < c.re.size(); ++i) {
      const double m = std::hypot(c.re[i], c.im[i]);
      t.mag[b * t.bins * t.frames + i] = m;
      t.log_mag[b * t.bins * t.frames + i] = std::log(m + dsp::kLogEps);
    }
  }
  return t;
}

}  // namespace

ag::Var reconstruction_loss_ag(const ag::Var& pred, const std::vector<double>& target,
                               const dsp::StftParams& p, const std::vector<int>& scales,
                               const ag::Var& pred_ri) {
  if (pred.shape().size() != 2) throw std::invalid_argument("reconstruction_loss_ag: pred [B,T]");
  const int64_t B = pred.shape()[0], T = pred.shape()[1];
  if (static_cast<int64_t>(target.size()) != B * T)
    throw std::invalid_argument("reconstruction_loss_ag: length mismatch");

  // log-spectrogram L1 at the module params, mean over all elements
  const auto tp = target_spectra(target, B, T, p);
  Var ri = pred_ri.defined() ? pred_ri : ag::stft_ri(pred, p);
  Var mag = ag::complex_magnitude(ri);
  Var log_mag = ag::log_plus(mag, dsp::kLogEps);
  Var diff = ag::abs_of(ag::sub(log_mag, Var::constant(log_mag.shape(), tp.log_mag)));
  Var loss = ag::mean(diff);

  // multi-scale term: per scale, L1 of magnitudes + L1 of log magnitudes,
  // each normalized by frame count (and batch)
  for (int scale : scales) {
    const auto ps = dsp::StftParams::hann(scale, scale / 4);
    const auto ts = target_spectra(target, B, T, ps);
    Var ri_s = ag::stft_ri(pred, ps);
    Var mag_s = ag::complex_magnitude(ri_s);
    Var d_mag = ag::abs_of(ag::sub(mag_s, Var::constant(mag_s.shape(), ts.mag)));
    Var log_s = ag::log_plus(mag_s, dsp::kLogEps);
    Var d_log = ag::abs_of(ag::sub(log_s, Var::constant(log_s.shape(), ts.log_mag)));
    const double norm = 1.0 / (static_cast<double>(ts.frames) * static_cast<double>(B));
    loss = ag::add(loss, ag::mul_scalar(ag::add(ag::sum(d_mag), ag::sum(d_log)), norm));
  }
  return loss;
}

ag::Var adversarial_d_loss_ag(const ag::Var& real_scores, const ag::Var& fake_scores) {
  Var real_term = ag::mean(ag::relu(ag::add_scalar(ag::neg(real_scores), 1.0)));
  Var fake_term = ag::mean(ag::relu(ag::add_scalar(fake_scores, 1.0)));
  return ag::add(real_term, fake_term);
}

ag::Var adversarial_g_loss_ag(const ag::Var& fake_scores) {
  return ag::neg(ag::mean(fake_scores));
}

ag::Var commitment_loss_ag(const ag::Var& z_fac, const std::vector<double>& quantized_rows) {
  if (static_cast<int64_t>(quantized_rows.size()) != z_fac.size())
    throw std::invalid_argument("commitment_loss_ag: shape mismatch");
  const double batch = static_cast<double>(z_fac.shape()[0]);
  Var diff = ag::sub(z_fac, Var::constant(z_fac.shape(), quantized_rows));
  return ag::mul_scalar(ag::sum(ag::square(diff)), 1.0 / batch);
}

}  // namespace vqss::objectives
