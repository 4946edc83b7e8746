#pragma once

#include <vector>

#include "core/autograd.hpp"
#include "dsp/dsp.hpp"

namespace vqss::objectives {

inline constexpr double kLambdaRec = 2.5;
inline constexpr double kLambdaVq = 100.0;

struct LossBreakdown {
  double rec = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double vq = 0.0;
  double total = 0.0;  // adv_g + kLambdaRec*rec + kLambdaVq*vq
};

// mean L1 between log-magnitude STFTs, shared by training and evaluation
double l1_log_spectrogram(const dsp::Waveform& a, const dsp::Waveform& b,
                          const dsp::StftParams& p);

// pure-value reconstruction loss: L1 log-spectrogram term + multi-scale term
double reconstruction_loss(const dsp::Waveform& pred, const dsp::Waveform& target,
                           const dsp::StftParams& p, const std::vector<int>& scales);

// hinge losses on plain score vectors (oracle-checkable arithmetic)
double adversarial_d_loss(const std::vector<double>& real_scores,
                          const std::vector<double>& fake_scores);
double adversarial_g_loss(const std::vector<double>& fake_scores);

double total_generator_loss(double adv_g, double rec, double vq, double lambda_rec = kLambdaRec,
                            double lambda_vq = kLambdaVq);

// ---- differentiable variants ----

// pred [B,T] graph value against a fixed target batch; mean over batch.
// pred_ri, when defined, must be stft_ri(pred, p) and is reused for the
// log-spectrogram term instead of recomputing the transform.
ag::Var reconstruction_loss_ag(const ag::Var& pred, const std::vector<double>& target,
                               const dsp::StftParams& p, const std::vector<int>& scales,
                               const ag::Var& pred_ri = {});

// scores [B,1]: mean(relu(1-real)) + mean(relu(1+fake))
ag::Var adversarial_d_loss_ag(const ag::Var& real_scores, const ag::Var& fake_scores);
// -mean(fake)
ag::Var adversarial_g_loss_ag(const ag::Var& fake_scores);

// mean over batch rows of ||z_fac - sg(q)||^2
ag::Var commitment_loss_ag(const ag::Var& z_fac, const std::vector<double>& quantized_rows);

}  // namespace vqss::objectives
