#include "nets/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace vqss::nets {

using ag::Var;

void NetConfig::validate() const {
  if (base_width <= 0 || levels < 1 || blocks_per_level < 0)
    throw std::invalid_argument("NetConfig: bad sizes");
  for (int i = 0; i <= levels; ++i)
    if (width_at(i) % kGroups != 0)
      throw std::invalid_argument("NetConfig: width " + std::to_string(width_at(i)) +
                                  " not divisible by " + std::to_string(kGroups) + " groups");
}

int64_t ParamMap::total_size() const {
  int64_t n = 0;
  for (const auto& [name, v] : items) n += v.size();
  return n;
}

ag::Var* ParamMap::find(const std::string& name) {
  for (auto& [n, v] : items)
    if (n == name) return &v;
  return nullptr;
}

// ---- layers ----

Conv Conv::make(core::Rng& rng, int in_ch, int out_ch, int kh, int kw, int sh, int sw,
                double weight_scale) {
  Conv c;
  c.sh = sh;
  c.sw = sw;
  c.ph = kh / 2;
  c.pw = kw / 2;
  const double scale =
      weight_scale > 0.0 ? weight_scale : std::sqrt(2.0 / (static_cast<double>(in_ch) * kh * kw));
  std::vector<double> w(static_cast<size_t>(out_ch) * in_ch * kh * kw);
  for (auto& x : w) x = scale * rng.normal();
  c.w = Var::param({out_ch, in_ch, kh, kw}, std::move(w));
  c.b = Var::param({out_ch}, std::vector<double>(out_ch, 0.0));
  return c;
}

void Conv::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".w", w);
  out.add(prefix + ".b", b);
}

GroupNorm GroupNorm::make(int channels, int groups) {
  if (channels % groups != 0)
    throw std::invalid_argument("GroupNorm: channels not divisible by groups");
  GroupNorm g;
  g.groups = groups;
  g.gamma = Var::param({channels}, std::vector<double>(channels, 1.0));
  g.beta = Var::param({channels}, std::vector<double>(channels, 0.0));
  return g;
}

void GroupNorm::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
}

Dense Dense::make(core::Rng& rng, int in_dim, int out_dim, double weight_scale, double bias_init,
                  bool with_bias) {
  Dense d;
  const double scale = weight_scale > 0.0 ? weight_scale : std::sqrt(2.0 / in_dim);
  std::vector<double> w(static_cast<size_t>(out_dim) * in_dim);
  for (auto& x : w) x = scale * rng.normal();
  d.w = Var::param({out_dim, in_dim}, std::move(w));
  if (with_bias) d.b = Var::param({out_dim}, std::vector<double>(out_dim, bias_init));
  return d;
}

void Dense::collect(const std::string& prefix, ParamMap& out) const {
  out.add(prefix + ".w", w);
  if (b.defined()) out.add(prefix + ".b", b);
}

FilmHead FilmHead::make(core::Rng& rng, int cond_dim, int channels) {
  FilmHead f;
  // gamma starts near identity; weights large enough that the conditioning
  // path carries gradient from the first step
  const double scale = 0.5 / std::sqrt(static_cast<double>(cond_dim));
  f.gamma_head = Dense::make(rng, cond_dim, channels, scale, 1.0);
  f.beta_head = Dense::make(rng, cond_dim, channels, scale, 0.0);
  return f;
}

ag::Var FilmHead::apply(const ag::Var& x, const ag::Var& cond) const {
  return ag::film(x, gamma_head.forward(cond), beta_head.forward(cond));
}

void FilmHead::collect(const std::string& prefix, ParamMap& out) const {
  gamma_head.collect(prefix + ".gamma", out);
  beta_head.collect(prefix + ".beta", out);
}

ResBlock ResBlock::make(core::Rng& rng, int channels, int cond_dim) {
  ResBlock r;
  r.gn1 = GroupNorm::make(channels);
  r.gn2 = GroupNorm::make(channels);
  r.c1 = Conv::make(rng, channels, channels, 3, 3, 1, 1);
  r.c2 = Conv::make(rng, channels, channels, 3, 3, 1, 1);
  r.conditioned = cond_dim > 0;
  if (r.conditioned) {
    r.f1 = FilmHead::make(rng, cond_dim, channels);
    r.f2 = FilmHead::make(rng, cond_dim, channels);
  }
  return r;
}

ag::Var ResBlock::forward(const ag::Var& x, const ag::Var& cond) const {
  Var h = gn1.forward(x);
  if (conditioned) h = f1.apply(h, cond);
  h = ag::leaky_relu(h, kLeakySlope);
  h = c1.forward(h);
  h = gn2.forward(h);
  if (conditioned) h = f2.apply(h, cond);
  h = ag::leaky_relu(h, kLeakySlope);
  h = c2.forward(h);
  return ag::add(x, h);
}

void ResBlock::collect(const std::string& prefix, ParamMap& out) const {
  gn1.collect(prefix + ".gn1", out);
  gn2.collect(prefix + ".gn2", out);
  c1.collect(prefix + ".c1", out);
  c2.collect(prefix + ".c2", out);
  if (conditioned) {
    f1.collect(prefix + ".film1", out);
    f2.collect(prefix + ".film2", out);
  }
}

// ---- style encoder ----

StyleEncoder StyleEncoder::make(core::Rng& rng, const StyleEncoderConfig& cfg) {
  cfg.net.validate();
  StyleEncoder e;
  e.cfg = cfg;
  const auto& n = cfg.net;
  e.stem = Conv::make(rng, 1, n.width_at(0), 3, 3, n.stem_stride_f, n.stem_stride_t);
  for (int i = 0; i < n.levels; ++i) {
    e.downs.push_back(Conv::make(rng, n.width_at(i), n.width_at(i + 1), 3, 3, 2, 2));
    std::vector<ResBlock> bl;
    for (int b = 0; b < n.blocks_per_level; ++b)
      bl.push_back(ResBlock::make(rng, n.width_at(i + 1), 0));
    e.blocks.push_back(std::move(bl));
  }
  e.out_norm = GroupNorm::make(n.width_at(n.levels));
  // bias-free heads: the codebook lookup is cosine-based, and a constant
  // offset shared by every input would swamp the content signal
  e.head = Dense::make(rng, n.width_at(n.levels), cfg.embed_dim, 0.0, 0.0, false);
  // time-pooled spectral profile shortcuts keep the embedding input-separable
  // before the conv path has learned anything; weighted to dominate at init.
  // The mean profile tracks sustained material, the max profile sparse events.
  e.mean_profile_head = Dense::make(rng, dsp::kMelBins, cfg.embed_dim, 0.5, 0.0, false);
  e.max_profile_head = Dense::make(rng, dsp::kMelBins, cfg.embed_dim, 0.5, 0.0, false);
  return e;
}

ag::Var StyleEncoder::forward(const ag::Var& mel) const {
  if (mel.shape().size() != 4 || mel.shape()[1] != 1)
    throw std::invalid_argument("style_encode: expected [B,1,bins,frames]");
  if (mel.shape()[3] < cfg.net.time_stride())
    throw std::invalid_argument("style_encode: too few frames (need >= " +
                                std::to_string(cfg.net.time_stride()) + ")");
  // shift the log-mel floor to zero so silence carries no activation
  Var centered = ag::add_scalar(mel, -std::log(dsp::kLogEps));
  Var h = ag::leaky_relu(stem.forward(centered), kLeakySlope);
  Var none;
  for (size_t i = 0; i < downs.size(); ++i) {
    h = downs[i].forward(h);
    for (const auto& b : blocks[i]) h = b.forward(h, none);
  }
  h = ag::leaky_relu(out_norm.forward(h), kLeakySlope);
  // row-center the profiles: spectral leakage puts a large shared floor under
  // every bin, and without centering it swamps the class-band contrast
  Var mean_profile = ag::row_normalize(ag::center_rows(ag::time_profile(centered, false)), 1e-8);
  Var max_profile = ag::row_normalize(ag::center_rows(ag::time_profile(centered, true)), 1e-8);
  return ag::add(head.forward(ag::global_avg_pool(h)),
                 ag::add(mean_profile_head.forward(mean_profile),
                         max_profile_head.forward(max_profile)));
}

void StyleEncoder::collect(const std::string& prefix, ParamMap& out) const {
  stem.collect(prefix + ".stem", out);
  for (size_t i = 0; i < downs.size(); ++i) {
    downs[i].collect(prefix + ".down" + std::to_string(i), out);
    for (size_t b = 0; b < blocks[i].size(); ++b)
      blocks[i][b].collect(prefix + ".l" + std::to_string(i) + ".b" + std::to_string(b), out);
  }
  out_norm.collect(prefix + ".out_norm", out);
  head.collect(prefix + ".head", out);
  mean_profile_head.collect(prefix + ".mean_profile_head", out);
  max_profile_head.collect(prefix + ".max_profile_head", out);
}

// ---- generator ----

Generator Generator::make(core::Rng& rng, const GeneratorConfig& cfg) {
  cfg.net.validate();
  Generator g;
  g.cfg = cfg;
  const auto& n = cfg.net;
  g.cond1 = Dense::make(rng, cfg.code_dim, cfg.cond_dim);
  g.cond2 = Dense::make(rng, cfg.cond_dim, cfg.cond_dim);
  g.stem = Conv::make(rng, 1, n.width_at(0), 3, 3, n.stem_stride_f, n.stem_stride_t);
  for (int i = 0; i < n.levels; ++i) {
    g.downs.push_back(Conv::make(rng, n.width_at(i), n.width_at(i + 1), 3, 3, 2, 2));
    std::vector<ResBlock> bl;
    for (int b = 0; b < n.blocks_per_level; ++b)
      bl.push_back(ResBlock::make(rng, n.width_at(i + 1), cfg.cond_dim));
    g.enc_blocks.push_back(std::move(bl));
  }
  for (int i = n.levels - 1; i >= 0; --i) {
    g.up_convs.push_back(Conv::make(rng, n.width_at(i + 1), n.width_at(i), 3, 3, 1, 1));
    g.merge_convs.push_back(Conv::make(rng, 2 * n.width_at(i), n.width_at(i), 3, 3, 1, 1));
    std::vector<ResBlock> bl;
    for (int b = 0; b < n.blocks_per_level; ++b)
      bl.push_back(ResBlock::make(rng, n.width_at(i), cfg.cond_dim));
    g.dec_blocks.push_back(std::move(bl));
  }
  g.out_norm = GroupNorm::make(n.width_at(0));
  g.head = Conv::make(rng, n.width_at(0), 3, 3, 3, 1, 1, 0.01);
  return g;
}

GeneratorForward Generator::forward(const ag::Var& mix_mag, const ag::Var& code,
                                    const dsp::StftParams& p, int64_t out_len) const {
  if (mix_mag.shape().size() != 4 || mix_mag.shape()[1] != 1)
    throw std::invalid_argument("generate: expected magnitude [B,1,F,T]");
  const int64_t F = mix_mag.shape()[2];
  const int64_t T = mix_mag.shape()[3];
  if (F != p.fft_size / 2 + 1)
    throw std::invalid_argument("generate: magnitude bins do not match STFT params");
  if (code.shape().size() != 2 || code.shape()[1] != cfg.code_dim)
    throw std::invalid_argument("generate: conditioning must be [B,code_dim]");

  Var cond = ag::leaky_relu(cond1.forward(code), kLeakySlope);
  cond = ag::leaky_relu(cond2.forward(cond), kLeakySlope);

  // keep the frame axis divisible through all levels, crop back at the end
  const int64_t stride_t = cfg.net.time_stride();
  const int64_t padded_t = (T + stride_t - 1) / stride_t * stride_t;
  Var h = pad_time_reflect(mix_mag, padded_t);

  std::vector<Var> skips;
  h = ag::leaky_relu(stem.forward(h), kLeakySlope);
  skips.push_back(h);
  for (size_t i = 0; i < downs.size(); ++i) {
    h = downs[i].forward(h);
    for (const auto& b : enc_blocks[i]) h = b.forward(h, cond);
    if (i + 1 < downs.size()) skips.push_back(h);
  }
  for (size_t d = 0; d < up_convs.size(); ++d) {
    const Var& skip = skips[skips.size() - 1 - d];
    h = ag::upsample_nearest(h, 2, 2);
    h = up_convs[d].forward(h);
    h = ag::crop2d(h, skip.shape()[2], skip.shape()[3]);
    h = merge_convs[d].forward(ag::concat_channels(h, skip));
    for (const auto& b : dec_blocks[d]) h = b.forward(h, cond);
  }
  h = ag::leaky_relu(out_norm.forward(h), kLeakySlope);
  if (cfg.low_res_head) {
    h = head.forward(h);
    h = ag::upsample_nearest(h, cfg.net.stem_stride_f, cfg.net.stem_stride_t);
  } else {
    h = ag::upsample_nearest(h, cfg.net.stem_stride_f, cfg.net.stem_stride_t);
    h = head.forward(h);
  }
  h = ag::crop2d(h, F, T);

  GeneratorForward out;
  out.magnitude = ag::softplus(ag::chan_slice(h, 0, 1));
  Var c_raw = ag::chan_slice(h, 1, 2);
  Var s_raw = ag::chan_slice(h, 2, 3);
  Var inv = ag::rsqrt_plus(ag::add(ag::square(c_raw), ag::square(s_raw)), 1e-8);
  out.cos_phase = ag::mul(c_raw, inv);
  out.sin_phase = ag::mul(s_raw, inv);
  out.ri = ag::concat_channels(ag::mul(out.magnitude, out.cos_phase),
                               ag::mul(out.magnitude, out.sin_phase));
  out.wave = ag::istft_ri(out.ri, p, out_len);
  return out;
}

void Generator::collect(const std::string& prefix, ParamMap& out) const {
  cond1.collect(prefix + ".cond1", out);
  cond2.collect(prefix + ".cond2", out);
  stem.collect(prefix + ".stem", out);
  for (size_t i = 0; i < downs.size(); ++i) {
    downs[i].collect(prefix + ".down" + std::to_string(i), out);
    for (size_t b = 0; b < enc_blocks[i].size(); ++b)
      enc_blocks[i][b].collect(prefix + ".enc" + std::to_string(i) + ".b" + std::to_string(b), out);
  }
  for (size_t d = 0; d < up_convs.size(); ++d) {
    up_convs[d].collect(prefix + ".up" + std::to_string(d), out);
    merge_convs[d].collect(prefix + ".merge" + std::to_string(d), out);
    for (size_t b = 0; b < dec_blocks[d].size(); ++b)
      dec_blocks[d][b].collect(prefix + ".dec" + std::to_string(d) + ".b" + std::to_string(b), out);
  }
  out_norm.collect(prefix + ".out_norm", out);
  head.collect(prefix + ".head", out);
}

// ---- discriminator ----

Discriminator Discriminator::make(core::Rng& rng, const DiscriminatorConfig& cfg) {
  cfg.net.validate();
  Discriminator d;
  d.cfg = cfg;
  const auto& n = cfg.net;
  d.stem = Conv::make(rng, 1, n.width_at(0), 3, 3, n.stem_stride_f, n.stem_stride_t);
  for (int i = 0; i < n.levels; ++i) {
    d.downs.push_back(Conv::make(rng, n.width_at(i), n.width_at(i + 1), 3, 3, 2, 2));
    std::vector<ResBlock> bl;
    for (int b = 0; b < n.blocks_per_level; ++b)
      bl.push_back(ResBlock::make(rng, n.width_at(i + 1), 0));
    d.blocks.push_back(std::move(bl));
  }
  d.out_norm = GroupNorm::make(n.width_at(n.levels));
  d.head = Conv::make(rng, n.width_at(n.levels), 1, 3, 3, 1, 1);
  return d;
}

ag::Var Discriminator::forward(const ag::Var& log_mag) const {
  if (log_mag.shape().size() != 4 || log_mag.shape()[1] != 1)
    throw std::invalid_argument("discriminate: expected [B,1,F,T]");
  Var h = ag::leaky_relu(stem.forward(log_mag), kLeakySlope);
  Var none;
  for (size_t i = 0; i < downs.size(); ++i) {
    h = downs[i].forward(h);
    for (const auto& b : blocks[i]) h = b.forward(h, none);
  }
  h = ag::leaky_relu(out_norm.forward(h), kLeakySlope);
  h = head.forward(h);          // [B,1,F',T'] score map
  return ag::global_avg_pool(h);  // [B,1]
}

void Discriminator::collect(const std::string& prefix, ParamMap& out) const {
  stem.collect(prefix + ".stem", out);
  for (size_t i = 0; i < downs.size(); ++i) {
    downs[i].collect(prefix + ".down" + std::to_string(i), out);
    for (size_t b = 0; b < blocks[i].size(); ++b)
      blocks[i][b].collect(prefix + ".l" + std::to_string(i) + ".b" + std::to_string(b), out);
  }
  out_norm.collect(prefix + ".out_norm", out);
  head.collect(prefix + ".head", out);
}

// ---- plain wrappers ----

std::vector<double> style_encode(const StyleEncoder& enc, const dsp::MelSpectrogram& mel) {
  ag::NoGradGuard ng;
  auto v = ag::Var::constant({1, 1, mel.bins, mel.frames}, mel.v);
  return enc.forward(v).val();
}

GeneratorOutput generate(const Generator& gen, const dsp::MagnitudeSpectrogram& mix_mag,
                         std::span<const double> code, int64_t out_len) {
  ag::NoGradGuard ng;
  auto mag = ag::Var::constant({1, 1, mix_mag.bins, mix_mag.frames}, mix_mag.v);
  auto c = ag::Var::constant({1, static_cast<int64_t>(code.size())},
                             std::vector<double>(code.begin(), code.end()));
  auto fwd = gen.forward(mag, c, mix_mag.params, out_len);

  GeneratorOutput out;
  out.magnitude.bins = mix_mag.bins;
  out.magnitude.frames = mix_mag.frames;
  out.magnitude.params = mix_mag.params;
  out.magnitude.v = fwd.magnitude.val();
  out.phase.bins = mix_mag.bins;
  out.phase.frames = mix_mag.frames;
  out.phase.params = mix_mag.params;
  out.phase.v.resize(fwd.cos_phase.val().size());
  for (size_t i = 0; i < out.phase.v.size(); ++i) {
    double ph = std::atan2(fwd.sin_phase.val()[i], fwd.cos_phase.val()[i]);
    if (ph <= -M_PI) ph = M_PI;
    out.phase.v[i] = ph;
  }
  out.waveform.sample_rate = 44100.0;
  out.waveform.samples = fwd.wave.val();
  return out;
}

double discriminate(const Discriminator& d, const dsp::LogMagnitudeSpectrogram& log_mag) {
  ag::NoGradGuard ng;
  auto v = ag::Var::constant({1, 1, log_mag.bins, log_mag.frames}, log_mag.v);
  return d.forward(v).val()[0];
}

// ---- presets ----

ModelConfig ModelConfig::full() { return {}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig m;
  m.encoder.net = {.base_width = 16, .levels = 2, .blocks_per_level = 1, .stem_stride_f = 2,
                   .stem_stride_t = 2, .max_width = 64};
  m.encoder.embed_dim = 512;
  m.generator.net = {.base_width = 16, .levels = 2, .blocks_per_level = 1, .stem_stride_f = 2,
                     .stem_stride_t = 1, .max_width = 64};
  m.generator.cond_dim = 32;
  m.discriminator.net = {.base_width = 16, .levels = 2, .blocks_per_level = 1, .stem_stride_f = 2,
                         .stem_stride_t = 2, .max_width = 64};
  return m;
}

ModelConfig ModelConfig::toy() {
  ModelConfig m;
  m.encoder.net = {.base_width = 16, .levels = 3, .blocks_per_level = 1, .stem_stride_f = 2,
                   .stem_stride_t = 2, .max_width = 64};
  m.encoder.embed_dim = 512;
  m.generator.net = {.base_width = 8, .levels = 2, .blocks_per_level = 1, .stem_stride_f = 4,
                     .stem_stride_t = 2, .max_width = 32};
  m.generator.cond_dim = 64;
  m.generator.low_res_head = true;
  m.discriminator.net = {.base_width = 8, .levels = 2, .blocks_per_level = 1, .stem_stride_f = 4,
                         .stem_stride_t = 2, .max_width = 32};
  return m;
}

}  // namespace vqss::nets
