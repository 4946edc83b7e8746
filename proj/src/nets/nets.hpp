#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/autograd.hpp"
#include "core/rng.hpp"
#include "dsp/dsp.hpp"

namespace vqss::nets {

inline constexpr int kGroups = 8;
inline constexpr double kLeakySlope = 0.2;

// Shared backbone geometry. levels counts the stride-2 stages after the stem;
// widths double per level up to max_width. Every width must be divisible by
// the group-norm group count.
struct NetConfig {
  int base_width = 64;
  int levels = 4;
  int blocks_per_level = 2;
  int stem_stride_f = 1;
  int stem_stride_t = 1;
  int max_width = 512;

  int width_at(int level) const {
    int64_t w = static_cast<int64_t>(base_width) << level;
    return static_cast<int>(w > max_width ? max_width : w);
  }
  int time_stride() const { return stem_stride_t << levels; }
  void validate() const;
};

struct ParamMap {
  std::vector<std::pair<std::string, ag::Var>> items;
  void add(std::string name, const ag::Var& v) { items.emplace_back(std::move(name), v); }
  int64_t total_size() const;
  ag::Var* find(const std::string& name);
};

// ---- layers ----

struct Conv {
  ag::Var w, b;
  int sh = 1, sw = 1, ph = 1, pw = 1;

  static Conv make(core::Rng& rng, int in_ch, int out_ch, int kh, int kw, int sh, int sw,
                   double weight_scale = 0.0);
  ag::Var forward(const ag::Var& x) const { return ag::conv2d(x, w, b, sh, sw, ph, pw); }
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct GroupNorm {
  ag::Var gamma, beta;
  int groups = kGroups;

  static GroupNorm make(int channels, int groups = kGroups);
  ag::Var forward(const ag::Var& x) const { return ag::group_norm(x, groups, gamma, beta, 1e-5); }
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct Dense {
  ag::Var w, b;  // b may be undefined (bias-free layer)

  static Dense make(core::Rng& rng, int in_dim, int out_dim, double weight_scale = 0.0,
                    double bias_init = 0.0, bool with_bias = true);
  ag::Var forward(const ag::Var& x) const { return ag::linear(x, w, b); }
  void collect(const std::string& prefix, ParamMap& out) const;
};

// per-channel affine parameters predicted from the conditioning vector
struct FilmHead {
  Dense gamma_head;  // bias starts at 1 so modulation begins near identity
  Dense beta_head;

  static FilmHead make(core::Rng& rng, int cond_dim, int channels);
  ag::Var apply(const ag::Var& x, const ag::Var& cond) const;
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct ResBlock {
  GroupNorm gn1, gn2;
  Conv c1, c2;
  bool conditioned = false;
  FilmHead f1, f2;

  static ResBlock make(core::Rng& rng, int channels, int cond_dim /* 0 = unconditioned */);
  ag::Var forward(const ag::Var& x, const ag::Var& cond) const;
  void collect(const std::string& prefix, ParamMap& out) const;
};

// ---- networks ----

struct StyleEncoderConfig {
  NetConfig net{.base_width = 32, .levels = 4, .blocks_per_level = 2, .stem_stride_f = 2,
                .stem_stride_t = 2, .max_width = 256};
  int embed_dim = 512;
};

struct StyleEncoder {
  StyleEncoderConfig cfg;
  Conv stem;
  std::vector<Conv> downs;
  std::vector<std::vector<ResBlock>> blocks;
  GroupNorm out_norm;
  Dense head;              // pooled conv features -> embedding
  Dense mean_profile_head;  // time-averaged mel profile -> embedding
  Dense max_profile_head;   // per-bin time-max profile -> embedding

  static StyleEncoder make(core::Rng& rng, const StyleEncoderConfig& cfg);
  // mel [B,1,128,T] -> [B, embed_dim]; throws if T < net.time_stride()
  ag::Var forward(const ag::Var& mel) const;
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct GeneratorConfig {
  NetConfig net{.base_width = 64, .levels = 4, .blocks_per_level = 2, .stem_stride_f = 2,
                .stem_stride_t = 1, .max_width = 512};
  int cond_dim = 128;
  int code_dim = 8;
  // emit the 3 output channels at stem resolution and upsample them, instead
  // of upsampling the full-width feature map before the head conv
  bool low_res_head = false;
};

struct GeneratorForward {
  ag::Var magnitude;  // [B,1,F,T], non-negative (softplus head)
  ag::Var cos_phase;  // [B,1,F,T], unit pair with sin_phase
  ag::Var sin_phase;
  ag::Var ri;         // [B,2,F,T] complex spectrogram of the estimate
  ag::Var wave;       // [B,out_len]
};

struct Generator {
  GeneratorConfig cfg;
  Dense cond1, cond2;  // code -> cond_dim MLP shared by all FiLM heads
  Conv stem;
  std::vector<Conv> downs;
  std::vector<std::vector<ResBlock>> enc_blocks;  // after each down conv
  std::vector<Conv> up_convs;                     // w_{i+1} -> w_i after upsample
  std::vector<Conv> merge_convs;                  // 2 w_i -> w_i after skip concat
  std::vector<std::vector<ResBlock>> dec_blocks;
  GroupNorm out_norm;
  Conv head;  // w0 -> 3 channels (magnitude, cos, sin)

  static Generator make(core::Rng& rng, const GeneratorConfig& cfg);
  // mix magnitude [B,1,F,T] + code [B,code_dim] -> full forward product
  GeneratorForward forward(const ag::Var& mix_mag, const ag::Var& code,
                           const dsp::StftParams& p, int64_t out_len) const;
  void collect(const std::string& prefix, ParamMap& out) const;
};

struct DiscriminatorConfig {
  NetConfig net{.base_width = 32, .levels = 3, .blocks_per_level = 1, .stem_stride_f = 4,
                .stem_stride_t = 2, .max_width = 256};
};

struct Discriminator {
  DiscriminatorConfig cfg;
  Conv stem;
  std::vector<Conv> downs;
  std::vector<std::vector<ResBlock>> blocks;
  GroupNorm out_norm;
  Conv head;  // -> 1 channel score map

  static Discriminator make(core::Rng& rng, const DiscriminatorConfig& cfg);
  // log-magnitude [B,1,F,T] -> [B,1] raw scores (score map averaged)
  ag::Var forward(const ag::Var& log_mag) const;
  void collect(const std::string& prefix, ParamMap& out) const;
};

// ---- plain-type wrappers (inference, no graph) ----

struct GeneratorOutput {
  dsp::MagnitudeSpectrogram magnitude;
  dsp::PhaseSpectrogram phase;
  dsp::Waveform waveform;
};

std::vector<double> style_encode(const StyleEncoder& enc, const dsp::MelSpectrogram& mel);
GeneratorOutput generate(const Generator& gen, const dsp::MagnitudeSpectrogram& mix_mag,
                         std::span<const double> code, int64_t out_len);
double discriminate(const Discriminator& d, const dsp::LogMagnitudeSpectrogram& log_mag);

// preset configurations
struct ModelConfig {
  StyleEncoderConfig encoder;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  static ModelConfig full();
  static ModelConfig tiny();  // 2 levels, width 16 — unit tests and gradient checks
  static ModelConfig toy();   // small config sized for the desk-scale corpus run
};

}  // namespace vqss::nets
