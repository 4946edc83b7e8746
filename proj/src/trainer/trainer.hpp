#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "data/data.hpp"
#include "dsp/dsp.hpp"
#include "nets/nets.hpp"
#include "objectives/objectives.hpp"
#include "vq/vq.hpp"

namespace vqss::trainer {

struct TrainConfig {
  // data
  std::string dataset_dir;
  int max_extra_stems = data::kDefaultMixK;
  double silence_dbfs = -60.0;

  // model
  nets::ModelConfig model = nets::ModelConfig::full();
  int codebook_size = 16;
  int kmeans_iters = 10;

  // optimization
  int batch_size = 32;
  int64_t total_steps = 20000;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  double lambda_rec = objectives::kLambdaRec;
  double lambda_vq = objectives::kLambdaVq;
  double ema_decay = 0.99;

  // dsp
  int stft_fft = 2048;
  int stft_hop = 512;
  std::vector<int> loss_scales = dsp::default_loss_scales();

  // run
  uint64_t seed = 1234;
  int64_t checkpoint_every = 1000;
  int threads = 0;
  std::string run_dir = "run";

  dsp::StftParams stft() const { return dsp::StftParams::hann(stft_fft, stft_hop); }
  void validate() const;  // throws std::invalid_argument naming the bad key
};

std::string config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const std::string& json_text);

// Flat key-value config (the CLI-facing format): `key = value`, '#' comments.
// Unknown keys throw std::invalid_argument naming the key. The `model` key
// selects a preset (full | tiny | toy) that individual keys may override.
TrainConfig config_from_kv(const std::string& text);
std::string config_to_kv(const TrainConfig& c);

// trainable state shared by training and inference
struct Model {
  TrainConfig config;  // architecture + stft snapshot travels with the weights
  nets::StyleEncoder encoder;
  nets::Generator generator;
  nets::Discriminator discriminator;
  vq::CodeProjection projection;
  vq::Codebook codebook;

  nets::ParamMap generator_side_params() const;  // E + G + projection
  nets::ParamMap discriminator_params() const;

  // reference waveform -> factorized unit code (no graph)
  std::vector<double> embed_reference(const dsp::Waveform& ref) const;
  vq::QuantizeResult quantize_reference(const dsp::Waveform& ref) const;
};

struct Adam {
  double lr = 1e-4, beta1 = 0.5, beta2 = 0.9, eps = 1e-8;
  int64_t t = 0;
  std::vector<std::vector<double>> m, v;

  void init(const nets::ParamMap& params);
  void step(nets::ParamMap& params);  // applies and clears gradients
};

struct StepStats {
  objectives::LossBreakdown losses;
  vq::UsageStats usage;
};

struct Session {
  TrainConfig config;
  data::Corpus corpus;
  Model model;
  nets::ParamMap gen_params;
  nets::ParamMap disc_params;
  Adam opt_g, opt_d;
  core::Rng data_rng;
  int64_t step = 0;
  // first training batch is consumed by k-means init, then reused for step 1
  std::optional<std::vector<data::TrainingExample>> pending_batch;
};

// Builds networks, draws the first batch, and k-means-initializes the
// codebook from that batch's reference embeddings before any gradient step.
Session initialize(const TrainConfig& config, const data::Manifest& manifest);

std::vector<data::TrainingExample> next_batch(Session& s);

// One alternating update: D on real/detached-fake, then G/E/projection on the
// weighted total, then the codebook EMA step. Throws on non-finite losses
// after writing a diagnostics dump to the run directory.
StepStats train_step(Session& s, const std::vector<data::TrainingExample>& batch);

// Runs until total_steps, writing training_log.csv and periodic checkpoints
// under config.run_dir. Returns the final checkpoint path.
using StepCallback = std::function<void(int64_t step, const StepStats&)>;
std::string fit(Session& s, const StepCallback& on_step = nullptr);

void save_checkpoint(const Session& s, const std::string& path);
Session load_session(const std::string& path, const data::Manifest& manifest);
Model load_model(const std::string& path);

}  // namespace vqss::trainer
