#include "trainer/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "core/parallel.hpp"

namespace fs = std::filesystem;

namespace vqss::trainer {

using ag::Var;
using nlohmann::json;

// ---------------- config ----------------

void TrainConfig::validate() const {
  auto bad = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config: " + key + " " + why);
  };
  if (batch_size < 1) bad("batch_size", "must be positive");
  if (batch_size < codebook_size)
    bad("batch_size", "must be >= codebook_size for k-means initialization");
  if (total_steps < 1) bad("total_steps", "must be positive");
  if (lr <= 0.0) bad("lr", "must be positive");
  if (codebook_size < 1) bad("codebook_size", "must be positive");
  if (checkpoint_every < 1) bad("checkpoint_every", "must be positive");
  if (ema_decay <= 0.0 || ema_decay >= 1.0) bad("ema_decay", "must lie in (0,1)");
  if (stft_hop < 1 || stft_hop > stft_fft) bad("stft_hop", "must satisfy 0 < hop <= fft");
  if (max_extra_stems < 0) bad("max_extra_stems", "must be >= 0");
  for (int s : loss_scales)
    if (s < 4) bad("loss_scales", "entries must be >= 4");
  model.encoder.net.validate();
  model.generator.net.validate();
  model.discriminator.net.validate();
}

namespace {

json net_to_json(const nets::NetConfig& n) {
  return json{{"base_width", n.base_width},
              {"levels", n.levels},
              {"blocks_per_level", n.blocks_per_level},
              {"stem_stride_f", n.stem_stride_f},
              {"stem_stride_t", n.stem_stride_t},
              {"max_width", n.max_width}};
}

nets::NetConfig net_from_json(const json& j) {
  nets::NetConfig n;
  n.base_width = j.at("base_width").get<int>();
  n.levels = j.at("levels").get<int>();
  n.blocks_per_level = j.at("blocks_per_level").get<int>();
  n.stem_stride_f = j.at("stem_stride_f").get<int>();
  n.stem_stride_t = j.at("stem_stride_t").get<int>();
  n.max_width = j.at("max_width").get<int>();
  return n;
}

}  // namespace

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["dataset_dir"] = c.dataset_dir;
  j["max_extra_stems"] = c.max_extra_stems;
  j["silence_dbfs"] = c.silence_dbfs;
  j["encoder"] = net_to_json(c.model.encoder.net);
  j["encoder"]["embed_dim"] = c.model.encoder.embed_dim;
  j["generator"] = net_to_json(c.model.generator.net);
  j["generator"]["cond_dim"] = c.model.generator.cond_dim;
  j["generator"]["code_dim"] = c.model.generator.code_dim;
  j["generator"]["low_res_head"] = c.model.generator.low_res_head;
  j["discriminator"] = net_to_json(c.model.discriminator.net);
  j["codebook_size"] = c.codebook_size;
  j["kmeans_iters"] = c.kmeans_iters;
  j["batch_size"] = c.batch_size;
  j["total_steps"] = c.total_steps;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["lambda_rec"] = c.lambda_rec;
  j["lambda_vq"] = c.lambda_vq;
  j["ema_decay"] = c.ema_decay;
  j["stft_fft"] = c.stft_fft;
  j["stft_hop"] = c.stft_hop;
  j["loss_scales"] = c.loss_scales;
  j["seed"] = c.seed;
  j["checkpoint_every"] = c.checkpoint_every;
  j["threads"] = c.threads;
  j["run_dir"] = c.run_dir;
  return j.dump(2);
}

TrainConfig config_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  TrainConfig c;
  c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
  c.max_extra_stems = j.value("max_extra_stems", c.max_extra_stems);
  c.silence_dbfs = j.value("silence_dbfs", c.silence_dbfs);
  if (j.contains("encoder")) {
    c.model.encoder.net = net_from_json(j.at("encoder"));
    c.model.encoder.embed_dim = j.at("encoder").value("embed_dim", c.model.encoder.embed_dim);
  }
  if (j.contains("generator")) {
    c.model.generator.net = net_from_json(j.at("generator"));
    c.model.generator.cond_dim = j.at("generator").value("cond_dim", c.model.generator.cond_dim);
    c.model.generator.code_dim = j.at("generator").value("code_dim", c.model.generator.code_dim);
    c.model.generator.low_res_head =
        j.at("generator").value("low_res_head", c.model.generator.low_res_head);
  }
  if (j.contains("discriminator"))
    c.model.discriminator.net = net_from_json(j.at("discriminator"));
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  c.lambda_vq = j.value("lambda_vq", c.lambda_vq);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.stft_fft = j.value("stft_fft", c.stft_fft);
  c.stft_hop = j.value("stft_hop", c.stft_hop);
  if (j.contains("loss_scales")) c.loss_scales = j.at("loss_scales").get<std::vector<int>>();
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.threads = j.value("threads", c.threads);
  c.run_dir = j.value("run_dir", c.run_dir);
  return c;
}

// ---------------- key-value config ----------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool apply_net_key(nets::NetConfig& n, const std::string& field, const std::string& value) {
  if (field == "base_width") n.base_width = std::stoi(value);
  else if (field == "levels") n.levels = std::stoi(value);
  else if (field == "blocks_per_level") n.blocks_per_level = std::stoi(value);
  else if (field == "stem_stride_f") n.stem_stride_f = std::stoi(value);
  else if (field == "stem_stride_t") n.stem_stride_t = std::stoi(value);
  else if (field == "max_width") n.max_width = std::stoi(value);
  else return false;
  return true;
}

}  // namespace

TrainConfig config_from_kv(const std::string& text) {
  TrainConfig c;
  std::vector<std::pair<std::string, std::string>> entries;
  size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  // preset first so later keys can override it
  for (const auto& [key, value] : entries) {
    if (key != "model") continue;
    if (value == "full") c.model = nets::ModelConfig::full();
    else if (value == "tiny") c.model = nets::ModelConfig::tiny();
    else if (value == "toy") c.model = nets::ModelConfig::toy();
    else throw std::invalid_argument("config: model must be full, tiny or toy, got " + value);
  }

  for (const auto& [key, value] : entries) {
    try {
      if (key == "model") continue;
      else if (key == "dataset_dir") c.dataset_dir = value;
      else if (key == "run_dir") c.run_dir = value;
      else if (key == "codebook_size") c.codebook_size = std::stoi(value);
      else if (key == "kmeans_iters") c.kmeans_iters = std::stoi(value);
      else if (key == "batch_size") c.batch_size = std::stoi(value);
      else if (key == "total_steps") c.total_steps = std::stoll(value);
      else if (key == "lr") c.lr = std::stod(value);
      else if (key == "beta1") c.beta1 = std::stod(value);
      else if (key == "beta2") c.beta2 = std::stod(value);
      else if (key == "adam_eps") c.adam_eps = std::stod(value);
      else if (key == "lambda_rec") c.lambda_rec = std::stod(value);
      else if (key == "lambda_vq") c.lambda_vq = std::stod(value);
      else if (key == "ema_decay") c.ema_decay = std::stod(value);
      else if (key == "stft_fft") c.stft_fft = std::stoi(value);
      else if (key == "stft_hop") c.stft_hop = std::stoi(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "checkpoint_every") c.checkpoint_every = std::stoll(value);
      else if (key == "threads") c.threads = std::stoi(value);
      else if (key == "max_extra_stems") c.max_extra_stems = std::stoi(value);
      else if (key == "silence_dbfs") c.silence_dbfs = std::stod(value);
      else if (key == "loss_scales") {
        c.loss_scales.clear();
        size_t p = 0;
        while (p < value.size()) {
          size_t comma = value.find(',', p);
          if (comma == std::string::npos) comma = value.size();
          const auto item = trim(value.substr(p, comma - p));
          if (!item.empty()) c.loss_scales.push_back(std::stoi(item));
          p = comma + 1;
        }
      } else if (key == "encoder.embed_dim") {
        c.model.encoder.embed_dim = std::stoi(value);
      } else if (key == "generator.cond_dim") {
        c.model.generator.cond_dim = std::stoi(value);
      } else if (key == "generator.low_res_head") {
        c.model.generator.low_res_head = value == "1" || value == "true";
      } else if (key == "generator.code_dim") {
        c.model.generator.code_dim = std::stoi(value);
      } else if (key.rfind("encoder.", 0) == 0 &&
                 apply_net_key(c.model.encoder.net, key.substr(8), value)) {
      } else if (key.rfind("generator.", 0) == 0 &&
                 apply_net_key(c.model.generator.net, key.substr(10), value)) {
      } else if (key.rfind("discriminator.", 0) == 0 &&
                 apply_net_key(c.model.discriminator.net, key.substr(14), value)) {
      } else {
        throw std::invalid_argument("config: unknown key " + key);
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for key " + key + ": " + value);
    }
  }
  return c;
}

std::string config_to_kv(const TrainConfig& c) {
  std::string out;
  auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  auto net = [&kv](const std::string& prefix, const nets::NetConfig& n) {
    kv(prefix + ".base_width", std::to_string(n.base_width));
    kv(prefix + ".levels", std::to_string(n.levels));
    kv(prefix + ".blocks_per_level", std::to_string(n.blocks_per_level));
    kv(prefix + ".stem_stride_f", std::to_string(n.stem_stride_f));
    kv(prefix + ".stem_stride_t", std::to_string(n.stem_stride_t));
    kv(prefix + ".max_width", std::to_string(n.max_width));
  };
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  kv("dataset_dir", c.dataset_dir);
  kv("run_dir", c.run_dir);
  net("encoder", c.model.encoder.net);
  kv("encoder.embed_dim", std::to_string(c.model.encoder.embed_dim));
  net("generator", c.model.generator.net);
  kv("generator.cond_dim", std::to_string(c.model.generator.cond_dim));
  kv("generator.code_dim", std::to_string(c.model.generator.code_dim));
  kv("generator.low_res_head", c.model.generator.low_res_head ? "true" : "false");
  net("discriminator", c.model.discriminator.net);
  kv("codebook_size", std::to_string(c.codebook_size));
  kv("kmeans_iters", std::to_string(c.kmeans_iters));
  kv("batch_size", std::to_string(c.batch_size));
  kv("total_steps", std::to_string(c.total_steps));
  kv("lr", fmt(c.lr));
  kv("beta1", fmt(c.beta1));
  kv("beta2", fmt(c.beta2));
  kv("adam_eps", fmt(c.adam_eps));
  kv("lambda_rec", fmt(c.lambda_rec));
  kv("lambda_vq", fmt(c.lambda_vq));
  kv("ema_decay", fmt(c.ema_decay));
  kv("stft_fft", std::to_string(c.stft_fft));
  kv("stft_hop", std::to_string(c.stft_hop));
  std::string scales;
  for (size_t i = 0; i < c.loss_scales.size(); ++i)
    scales += (i ? "," : "") + std::to_string(c.loss_scales[i]);
  kv("loss_scales", scales);
  kv("seed", std::to_string(c.seed));
  kv("checkpoint_every", std::to_string(c.checkpoint_every));
  kv("threads", std::to_string(c.threads));
  kv("max_extra_stems", std::to_string(c.max_extra_stems));
  kv("silence_dbfs", fmt(c.silence_dbfs));
  return out;
}

// ---------------- model ----------------

nets::ParamMap Model::generator_side_params() const {
  nets::ParamMap p;
  encoder.collect("E", p);
  generator.collect("G", p);
  p.add("P.weight", projection.weight);
  return p;
}

nets::ParamMap Model::discriminator_params() const {
  nets::ParamMap p;
  discriminator.collect("D", p);
  return p;
}

std::vector<double> Model::embed_reference(const dsp::Waveform& ref) const {
  const auto mel = dsp::mel_spectrogram(ref);
  const auto z = nets::style_encode(encoder, mel);
  return projection.apply_plain(z);
}

vq::QuantizeResult Model::quantize_reference(const dsp::Waveform& ref) const {
  const auto z_fac = embed_reference(ref);
  return vq::quantize(z_fac, codebook);
}

// ---------------- adam ----------------

void Adam::init(const nets::ParamMap& params) {
  m.clear();
  v.clear();
  for (const auto& [name, p] : params.items) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
  t = 0;
}

void Adam::step(nets::ParamMap& params) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.items.size(); ++i) {
    auto& p = params.items[i].second;
    auto& grad = p.grad();  // allocates zeros when untouched
    auto& mi = m[i];
    auto& vi = v[i];
    auto& w = p.mutable_val();
    for (size_t j = 0; j < w.size(); ++j) {
      const double g = grad[j];
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * g;
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * g * g;
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      grad[j] = 0.0;
    }
  }
}

// ---------------- session ----------------

namespace {

void set_requires_grad(nets::ParamMap& params, bool value) {
  for (auto& [name, p] : params.items) p.node()->requires_grad = value;
}

data::SilencePolicy policy_of(const TrainConfig& c) { return {c.silence_dbfs}; }

std::vector<data::TrainingExample> draw_batch(const data::Corpus& corpus, core::Rng& rng,
                                              const TrainConfig& cfg) {
  std::vector<data::TrainingExample> batch;
  batch.reserve(cfg.batch_size);
  for (int i = 0; i < cfg.batch_size; ++i)
    batch.push_back(data::sample_example(corpus, rng, cfg.max_extra_stems, policy_of(cfg)));
  return batch;
}

// [B,1,128,T] mel constants of the reference crops
Var batch_ref_mel(const std::vector<data::TrainingExample>& batch) {
  const int64_t B = static_cast<int64_t>(batch.size());
  const auto first = dsp::mel_spectrogram(batch[0].x_ref);
  const int64_t bins = first.bins, frames = first.frames;
  std::vector<double> buf(static_cast<size_t>(B) * bins * frames);
  std::copy(first.v.begin(), first.v.end(), buf.begin());
  core::parallel_for(B - 1, [&](int64_t i) {
    const auto mel = dsp::mel_spectrogram(batch[i + 1].x_ref);
    std::copy(mel.v.begin(), mel.v.end(), buf.begin() + (i + 1) * bins * frames);
  });
  return Var::constant({B, 1, bins, frames}, std::move(buf));
}

// [B,1,F,T] mixture magnitudes
Var batch_mix_mag(const std::vector<data::TrainingExample>& batch, const dsp::StftParams& p) {
  const int64_t B = static_cast<int64_t>(batch.size());
  const int64_t bins = p.fft_size / 2 + 1;
  const int64_t frames = dsp::stft_frame_count(batch[0].x_mix.size(), p);
  std::vector<double> buf(static_cast<size_t>(B) * bins * frames);
  core::parallel_for(B, [&](int64_t i) {
    const auto mag = dsp::magnitude(dsp::stft(batch[i].x_mix, p));
    std::copy(mag.v.begin(), mag.v.end(), buf.begin() + i * bins * frames);
  });
  return Var::constant({B, 1, bins, frames}, std::move(buf));
}

std::vector<double> flatten_targets(const std::vector<data::TrainingExample>& batch) {
  const int64_t B = static_cast<int64_t>(batch.size());
  const int64_t L = batch[0].x_targ.size();
  std::vector<double> flat(static_cast<size_t>(B) * L);
  for (int64_t i = 0; i < B; ++i)
    std::copy(batch[i].x_targ.samples.begin(), batch[i].x_targ.samples.end(),
              flat.begin() + i * L);
  return flat;
}

struct QuantizedBatch {
  std::vector<double> rows;     // [B, dim] selected entries
  std::vector<int> indices;     // [B]
  std::vector<double> counts;   // [n]
  std::vector<double> sums;     // [n, dim]
  std::vector<int64_t> icounts; // [n]
};

QuantizedBatch quantize_batch(const std::vector<double>& z_fac, int64_t B,
                              const vq::Codebook& cb) {
  QuantizedBatch q;
  q.rows.resize(static_cast<size_t>(B) * cb.dim);
  q.indices.resize(B);
  q.counts.assign(cb.n, 0.0);
  q.sums.assign(static_cast<size_t>(cb.n) * cb.dim, 0.0);
  q.icounts.assign(cb.n, 0);
  for (int64_t b = 0; b < B; ++b) {
    const auto r = vq::quantize({z_fac.data() + b * cb.dim, (size_t)cb.dim}, cb);
    q.indices[b] = r.code_index;
    std::copy(r.quantized.begin(), r.quantized.end(), q.rows.begin() + b * cb.dim);
    q.counts[r.code_index] += 1.0;
    q.icounts[r.code_index] += 1;
    for (int d = 0; d < cb.dim; ++d)
      q.sums[r.code_index * cb.dim + d] += z_fac[b * cb.dim + d];
  }
  return q;
}

void dump_diagnostics(const Session& s, const std::vector<data::TrainingExample>& batch,
                      const objectives::LossBreakdown& losses) {
  fs::create_directories(s.config.run_dir);
  json j;
  j["step"] = s.step;
  j["losses"] = {{"rec", losses.rec},
                 {"adv_g", losses.adv_g},
                 {"adv_d", losses.adv_d},
                 {"vq", losses.vq},
                 {"total", losses.total}};
  j["examples"] = json::array();
  for (const auto& ex : batch) {
    auto stat = [](const dsp::Waveform& w) {
      double mn = 0.0, mx = 0.0, acc = 0.0;
      for (double x : w.samples) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
        acc += x * x;
      }
      return json{{"min", mn}, {"max", mx}, {"rms", std::sqrt(acc / w.samples.size())}};
    };
    j["examples"].push_back(
        {{"mix", stat(ex.x_mix)}, {"targ", stat(ex.x_targ)}, {"ref", stat(ex.x_ref)}, {"k", ex.k}});
  }
  const auto path = fs::path(s.config.run_dir) / ("diagnostics_step" + std::to_string(s.step) + ".json");
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

}  // namespace

Session initialize(const TrainConfig& config, const data::Manifest& manifest) {
  config.validate();
  if (config.threads > 0) core::set_num_threads(config.threads);

  Session s;
  s.config = config;
  core::Rng root(config.seed);
  core::Rng model_rng = root.fork(1);
  s.model.config = config;
  s.model.encoder = nets::StyleEncoder::make(model_rng, config.model.encoder);
  s.model.generator = nets::Generator::make(model_rng, config.model.generator);
  s.model.discriminator = nets::Discriminator::make(model_rng, config.model.discriminator);
  s.model.projection = vq::CodeProjection(config.model.encoder.embed_dim, model_rng);

  s.data_rng = root.fork(2);
  s.corpus = data::load_corpus(manifest);

  // k-means on the reference embeddings of the first training batch
  auto batch = draw_batch(s.corpus, s.data_rng, config);
  const int64_t B = static_cast<int64_t>(batch.size());
  std::vector<double> z_rows(static_cast<size_t>(B) * vq::kCodeDim);
  for (int64_t i = 0; i < B; ++i) {
    const auto z = s.model.embed_reference(batch[i].x_ref);
    std::copy(z.begin(), z.end(), z_rows.begin() + i * vq::kCodeDim);
  }
  core::Rng kmeans_rng = root.fork(3);
  s.model.codebook =
      vq::kmeans_init(z_rows, B, config.codebook_size, config.kmeans_iters, kmeans_rng);
  s.model.codebook.decay = config.ema_decay;
  s.pending_batch = std::move(batch);

  s.gen_params = s.model.generator_side_params();
  s.disc_params = s.model.discriminator_params();
  s.opt_g = Adam{.lr = config.lr, .beta1 = config.beta1, .beta2 = config.beta2, .eps = config.adam_eps};
  s.opt_d = Adam{.lr = config.lr, .beta1 = config.beta1, .beta2 = config.beta2, .eps = config.adam_eps};
  s.opt_g.init(s.gen_params);
  s.opt_d.init(s.disc_params);
  return s;
}

std::vector<data::TrainingExample> next_batch(Session& s) {
  if (s.pending_batch) {
    auto b = std::move(*s.pending_batch);
    s.pending_batch.reset();
    return b;
  }
  return draw_batch(s.corpus, s.data_rng, s.config);
}

StepStats train_step(Session& s, const std::vector<data::TrainingExample>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const auto& cfg = s.config;
  const auto p = cfg.stft();
  const int64_t B = static_cast<int64_t>(batch.size());
  const int64_t L = batch[0].x_targ.size();

  const auto targ_flat = flatten_targets(batch);
  Var mel_in = batch_ref_mel(batch);
  Var mix_mag = batch_mix_mag(batch, p);

  // generator-side graph; its value also serves as the detached fake for D
  Var z = s.model.encoder.forward(mel_in);
  Var z_fac = s.model.projection.apply(z);
  const auto q = quantize_batch(z_fac.val(), B, s.model.codebook);
  Var st = vq::straight_through(z_fac, q.rows);
  auto gfwd = s.model.generator.forward(mix_mag, st, p, L);

  // ---- discriminator update (fake detached) ----
  Var real_wave = Var::constant({B, L}, targ_flat);
  Var fake_wave = ag::detach(gfwd.wave);
  Var real_logmag = ag::log_plus(ag::complex_magnitude(ag::stft_ri(real_wave, p)), dsp::kLogEps);
  Var fake_logmag = ag::log_plus(ag::complex_magnitude(ag::stft_ri(fake_wave, p)), dsp::kLogEps);
  Var d_loss = objectives::adversarial_d_loss_ag(s.model.discriminator.forward(real_logmag),
                                                 s.model.discriminator.forward(fake_logmag));
  ag::backward(d_loss);
  s.opt_d.step(s.disc_params);

  // ---- generator/encoder/projection update against the refreshed D ----
  set_requires_grad(s.disc_params, false);
  Var est_ri = ag::stft_ri(gfwd.wave, p);  // shared by the adversarial and L1 paths
  Var est_logmag = ag::log_plus(ag::complex_magnitude(est_ri), dsp::kLogEps);
  Var adv_g = objectives::adversarial_g_loss_ag(s.model.discriminator.forward(est_logmag));
  Var rec = objectives::reconstruction_loss_ag(gfwd.wave, targ_flat, p, cfg.loss_scales, est_ri);
  Var commit = objectives::commitment_loss_ag(z_fac, q.rows);
  Var total = ag::add(adv_g, ag::add(ag::mul_scalar(rec, cfg.lambda_rec),
                                     ag::mul_scalar(commit, cfg.lambda_vq)));
  ag::backward(total);
  s.opt_g.step(s.gen_params);
  set_requires_grad(s.disc_params, true);

  // ---- codebook EMA from this batch's assignments ----
  vq::ema_update(s.model.codebook, q.counts, q.sums);

  StepStats stats;
  stats.losses.rec = rec.item();
  stats.losses.adv_g = adv_g.item();
  stats.losses.adv_d = d_loss.item();
  stats.losses.vq = commit.item();
  stats.losses.total = total.item();
  stats.usage = vq::usage_stats(s.model.codebook, q.icounts);

  const auto& l = stats.losses;
  if (!std::isfinite(l.total) || !std::isfinite(l.adv_d) || !std::isfinite(l.rec) ||
      !std::isfinite(l.adv_g) || !std::isfinite(l.vq)) {
    dump_diagnostics(s, batch, l);
    throw std::runtime_error("train_step: non-finite loss at step " + std::to_string(s.step) +
                             "; diagnostics written to " + s.config.run_dir);
  }
  return stats;
}

std::string fit(Session& s, const StepCallback& on_step) {
  fs::create_directories(s.config.run_dir);
  {
    std::ofstream cf(fs::path(s.config.run_dir) / "train_config.json", std::ios::trunc);
    cf << config_to_json(s.config) << "\n";
  }
  const auto log_path = fs::path(s.config.run_dir) / "training_log.csv";
  std::ofstream log;
  if (s.step == 0) {
    log.open(log_path, std::ios::trunc);
    log << "step,rec,adv_g,adv_d,vq,total,perplexity,active_codes\n";
  } else {
    log.open(log_path, std::ios::app);
  }
  log.precision(10);

  std::string last_checkpoint;
  while (s.step < s.config.total_steps) {
    const auto batch = next_batch(s);
    const auto stats = train_step(s, batch);
    ++s.step;
    log << s.step << ',' << stats.losses.rec << ',' << stats.losses.adv_g << ','
        << stats.losses.adv_d << ',' << stats.losses.vq << ',' << stats.losses.total << ','
        << stats.usage.perplexity << ',' << stats.usage.active_codes << '\n';
    log.flush();
    if (on_step) on_step(s.step, stats);
    if (s.step % s.config.checkpoint_every == 0 || s.step == s.config.total_steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%08lld.vqss",
                    static_cast<long long>(s.step));
      last_checkpoint = (fs::path(s.config.run_dir) / name).string();
      save_checkpoint(s, last_checkpoint);
    }
  }
  return last_checkpoint;
}

// ---------------- checkpoint ----------------

namespace {

constexpr char kMagic[8] = {'V', 'Q', 'S', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void wr_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <typename T>
void wr(std::ofstream& f, T v) {
  wr_bytes(f, &v, sizeof(T));
}
void wr_str(std::ofstream& f, const std::string& s) {
  wr<uint32_t>(f, static_cast<uint32_t>(s.size()));
  wr_bytes(f, s.data(), s.size());
}
void wr_vec(std::ofstream& f, const std::vector<double>& v) {
  wr<uint64_t>(f, v.size());
  wr_bytes(f, v.data(), v.size() * sizeof(double));
}

void rd_bytes(std::ifstream& f, void* p, size_t n) {
  f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
}
template <typename T>
T rd(std::ifstream& f) {
  T v;
  rd_bytes(f, &v, sizeof(T));
  return v;
}
std::string rd_str(std::ifstream& f) {
  const auto n = rd<uint32_t>(f);
  std::string s(n, '\0');
  rd_bytes(f, s.data(), n);
  return s;
}
std::vector<double> rd_vec(std::ifstream& f) {
  const auto n = rd<uint64_t>(f);
  std::vector<double> v(n);
  rd_bytes(f, v.data(), n * sizeof(double));
  return v;
}

void write_params(std::ofstream& f, const nets::ParamMap& params) {
  wr<uint32_t>(f, static_cast<uint32_t>(params.items.size()));
  for (const auto& [name, p] : params.items) {
    wr_str(f, name);
    wr<uint32_t>(f, static_cast<uint32_t>(p.shape().size()));
    for (int64_t d : p.shape()) wr<int64_t>(f, d);
    wr_vec(f, p.val());
  }
}

void read_params(std::ifstream& f, nets::ParamMap& params) {
  const auto count = rd<uint32_t>(f);
  if (count != params.items.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    const auto name = rd_str(f);
    const auto nd = rd<uint32_t>(f);
    ag::Shape shape(nd);
    for (auto& d : shape) d = rd<int64_t>(f);
    auto data = rd_vec(f);
    auto* p = params.find(name);
    if (!p) throw std::runtime_error("checkpoint: unknown parameter " + name);
    if (p->shape() != shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    p->mutable_val() = std::move(data);
  }
}

void write_adam(std::ofstream& f, const Adam& a) {
  wr<int64_t>(f, a.t);
  wr<uint64_t>(f, a.m.size());
  for (const auto& v : a.m) wr_vec(f, v);
  for (const auto& v : a.v) wr_vec(f, v);
}

void read_adam(std::ifstream& f, Adam& a) {
  a.t = rd<int64_t>(f);
  const auto n = rd<uint64_t>(f);
  if (n != a.m.size()) throw std::runtime_error("checkpoint: optimizer state mismatch");
  for (auto& v : a.m) v = rd_vec(f);
  for (auto& v : a.v) v = rd_vec(f);
}

struct LoadedCheckpoint {
  TrainConfig config;
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
};

// reads header + model into a fresh Model; leaves the stream at optimizer state
LoadedCheckpoint read_model_part(std::ifstream& f, Model& model, nets::ParamMap& gen_params,
                                 nets::ParamMap& disc_params) {
  char magic[8];
  rd_bytes(f, magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = rd<uint32_t>(f);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");

  LoadedCheckpoint out;
  out.config = config_from_json(rd_str(f));
  out.step = rd<int64_t>(f);
  for (auto& x : out.rng_state) x = rd<uint64_t>(f);

  core::Rng throwaway(0);
  model.config = out.config;
  model.encoder = nets::StyleEncoder::make(throwaway, out.config.model.encoder);
  model.generator = nets::Generator::make(throwaway, out.config.model.generator);
  model.discriminator = nets::Discriminator::make(throwaway, out.config.model.discriminator);
  model.projection = vq::CodeProjection(out.config.model.encoder.embed_dim, throwaway);

  model.codebook.n = rd<int32_t>(f);
  model.codebook.dim = rd<int32_t>(f);
  model.codebook.decay = rd<double>(f);
  model.codebook.step = rd<int64_t>(f);
  model.codebook.entries = rd_vec(f);
  model.codebook.ema_cluster_size = rd_vec(f);
  model.codebook.ema_embed_sum = rd_vec(f);

  gen_params = model.generator_side_params();
  disc_params = model.discriminator_params();
  read_params(f, gen_params);
  read_params(f, disc_params);
  return out;
}

}  // namespace

void save_checkpoint(const Session& s, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + tmp);
    wr_bytes(f, kMagic, 8);
    wr<uint32_t>(f, kVersion);
    wr_str(f, config_to_json(s.config));
    wr<int64_t>(f, s.step);
    for (uint64_t x : s.data_rng.state()) wr<uint64_t>(f, x);

    const auto& cb = s.model.codebook;
    wr<int32_t>(f, cb.n);
    wr<int32_t>(f, cb.dim);
    wr<double>(f, cb.decay);
    wr<int64_t>(f, cb.step);
    wr_vec(f, cb.entries);
    wr_vec(f, cb.ema_cluster_size);
    wr_vec(f, cb.ema_embed_sum);

    write_params(f, s.gen_params);
    write_params(f, s.disc_params);
    write_adam(f, s.opt_g);
    write_adam(f, s.opt_d);
    if (!f) throw std::runtime_error("short write on checkpoint: " + tmp);
  }
  fs::rename(tmp, path);
}

Session load_session(const std::string& path, const data::Manifest& manifest) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  Session s;
  const auto header = read_model_part(f, s.model, s.gen_params, s.disc_params);
  s.config = header.config;
  s.step = header.step;
  core::Rng rng;
  rng.set_state(header.rng_state);
  s.data_rng = rng;
  s.opt_g = Adam{.lr = s.config.lr, .beta1 = s.config.beta1, .beta2 = s.config.beta2, .eps = s.config.adam_eps};
  s.opt_d = Adam{.lr = s.config.lr, .beta1 = s.config.beta1, .beta2 = s.config.beta2, .eps = s.config.adam_eps};
  s.opt_g.init(s.gen_params);
  s.opt_d.init(s.disc_params);
  read_adam(f, s.opt_g);
  read_adam(f, s.opt_d);
  if (s.config.threads > 0) core::set_num_threads(s.config.threads);
  s.corpus = data::load_corpus(manifest);
  return s;
}

Model load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  Model m;
  nets::ParamMap gen, disc;
  read_model_part(f, m, gen, disc);
  return m;
}

}  // namespace vqss::trainer
