#include "vqss.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "core/wav.hpp"
#include "data/data.hpp"
#include "evalsuite/evalsuite.hpp"
#include "separator/separator.hpp"
#include "trainer/trainer.hpp"

namespace fs = std::filesystem;

struct vqss_model {
  vqss::trainer::Model model;
};

struct vqss_separation {
  vqss::separator::SeparationResult result;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

// maps C++ failures onto the two error codes of the C surface
template <typename Fn>
vqss_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return VQSS_OK;
  } catch (const std::invalid_argument& e) {
    set_error(e.what());
    return VQSS_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    set_error(e.what());
    return VQSS_ERR_RUNTIME;
  } catch (...) {
    set_error("unknown error");
    return VQSS_ERR_RUNTIME;
  }
}

vqss_status invalid(const std::string& msg) {
  set_error(msg);
  return VQSS_ERR_INVALID_ARGUMENT;
}

vqss::dsp::Waveform load_mix(const std::string& path) {
  auto wav = vqss::core::read_wav(path);
  if (wav.sample_rate != vqss::data::kSampleRate)
    throw std::invalid_argument("input " + path + " is " + std::to_string(wav.sample_rate) +
                                " Hz; expected 44100 Hz");
  return vqss::dsp::Waveform(std::move(wav.samples), vqss::data::kSampleRate);
}

}  // namespace

extern "C" {

const char* vqss_version(void) { return "0.1.0"; }

const char* vqss_last_error(void) { return g_last_error.c_str(); }

vqss_status vqss_make_toy_corpus(const char* out_dir, uint64_t seed) {
  if (!out_dir) return invalid("out_dir is null");
  return guarded([&] {
    vqss::data::make_toy_corpus(out_dir, seed);
    // sanity: the directory must be enumerable afterwards
    if (!fs::is_directory(out_dir)) throw std::runtime_error("corpus directory was not created");
  });
}

vqss_status vqss_train_run(const char* config_path, char* checkpoint_out, size_t checkpoint_cap) {
  if (!config_path) return invalid("config_path is null");
  return guarded([&] {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error(std::string("cannot open config file: ") + config_path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto config = vqss::trainer::config_from_kv(text);
    if (config.dataset_dir.empty())
      throw std::invalid_argument("config: dataset_dir is required");
    if (!fs::is_directory(config.dataset_dir))
      throw std::invalid_argument("config: dataset_dir does not exist: " + config.dataset_dir);
    config.validate();

    const auto manifest = vqss::data::ingest(config.dataset_dir);
    fs::create_directories(config.run_dir);
    {
      std::ofstream rc(fs::path(config.run_dir) / "config_resolved.cfg", std::ios::trunc);
      rc << vqss::trainer::config_to_kv(config);
    }
    vqss::data::save_manifest_json(manifest,
                                   (fs::path(config.run_dir) / "manifest.json").string());
    auto session = vqss::trainer::initialize(config, manifest);
    const auto final_path = vqss::trainer::fit(session);
    if (checkpoint_out && checkpoint_cap > 0) {
      std::strncpy(checkpoint_out, final_path.c_str(), checkpoint_cap - 1);
      checkpoint_out[checkpoint_cap - 1] = '\0';
    }
  });
}

vqss_status vqss_model_open(const char* checkpoint_path, vqss_model** out) {
  if (!checkpoint_path || !out) return invalid("null argument to vqss_model_open");
  *out = nullptr;
  return guarded([&] {
    auto* handle = new vqss_model{vqss::trainer::load_model(checkpoint_path)};
    *out = handle;
  });
}

void vqss_model_close(vqss_model* model) { delete model; }

int32_t vqss_model_codebook_size(const vqss_model* model) {
  return model ? model->model.codebook.n : 0;
}

int32_t vqss_model_code_dim(const vqss_model* model) {
  return model ? model->model.codebook.dim : 0;
}

vqss_status vqss_model_codebook_entry(const vqss_model* model, int32_t index, double* out,
                                      int32_t capacity) {
  if (!model || !out) return invalid("null argument to vqss_model_codebook_entry");
  const auto& cb = model->model.codebook;
  if (index < 0 || index >= cb.n) return invalid("codebook index out of range");
  if (capacity < cb.dim) return invalid("codebook entry buffer too small");
  const auto entry = cb.entry(index);
  std::memcpy(out, entry.data(), sizeof(double) * cb.dim);
  g_last_error.clear();
  return VQSS_OK;
}

vqss_status vqss_model_codebook_usage(const vqss_model* model, int32_t index, double* ema_size) {
  if (!model || !ema_size) return invalid("null argument to vqss_model_codebook_usage");
  const auto& cb = model->model.codebook;
  if (index < 0 || index >= cb.n) return invalid("codebook index out of range");
  *ema_size = cb.ema_cluster_size[index];
  g_last_error.clear();
  return VQSS_OK;
}

vqss_status vqss_separate_file(vqss_model* model, const char* wav_path, const char* out_dir) {
  if (!model || !wav_path || !out_dir) return invalid("null argument to vqss_separate_file");
  return guarded([&] {
    const auto mix = load_mix(wav_path);
    const auto result = vqss::separator::separate(mix, model->model);
    vqss::separator::write_separation(result, out_dir);
  });
}

vqss_status vqss_separate_buffer(vqss_model* model, const double* mix, int64_t length,
                                 double sample_rate, vqss_separation** out) {
  if (!model || !mix || !out) return invalid("null argument to vqss_separate_buffer");
  *out = nullptr;
  if (length <= 0) return invalid("separate: empty input");
  if (sample_rate != vqss::data::kSampleRate)
    return invalid("separate: expected 44100 Hz input");
  return guarded([&] {
    vqss::dsp::Waveform w(std::vector<double>(mix, mix + length), sample_rate);
    auto* handle = new vqss_separation{vqss::separator::separate(w, model->model)};
    *out = handle;
  });
}

int32_t vqss_separation_count(const vqss_separation* sep) {
  return sep ? static_cast<int32_t>(sep->result.sources.size()) : 0;
}

int64_t vqss_separation_length(const vqss_separation* sep) {
  return sep && !sep->result.sources.empty() ? sep->result.sources[0].size() : 0;
}

vqss_status vqss_separation_source(const vqss_separation* sep, int32_t index, double* out,
                                   int64_t capacity) {
  if (!sep || !out) return invalid("null argument to vqss_separation_source");
  if (index < 0 || index >= static_cast<int32_t>(sep->result.sources.size()))
    return invalid("separation source index out of range");
  const auto& s = sep->result.sources[index].samples;
  if (capacity < static_cast<int64_t>(s.size())) return invalid("source buffer too small");
  std::memcpy(out, s.data(), sizeof(double) * s.size());
  g_last_error.clear();
  return VQSS_OK;
}

double vqss_separation_energy_dbfs(const vqss_separation* sep, int32_t index) {
  if (!sep || index < 0 || index >= static_cast<int32_t>(sep->result.energy_dbfs.size()))
    return 0.0;
  return sep->result.energy_dbfs[index];
}

void vqss_separation_close(vqss_separation* sep) { delete sep; }

vqss_status vqss_evaluate(vqss_model* model, const char* test_dir, const char* out_dir,
                          int32_t k_eval, uint64_t seed) {
  if (!model || !test_dir || !out_dir) return invalid("null argument to vqss_evaluate");
  if (k_eval < 0) return invalid("k_eval must be >= 0");
  return guarded([&] {
    const auto manifest = vqss::data::ingest(test_dir);
    const auto corpus = vqss::data::load_corpus(manifest);
    const auto estimator = vqss::evalsuite::model_estimator(model->model);
    const auto table = vqss::evalsuite::eval_l1(corpus, model->model, estimator, k_eval, seed);
    const auto hist = vqss::evalsuite::eval_clusters(corpus, model->model, seed);

    // a representative evaluation mixture for the spectrogram grid
    vqss::core::Rng rng(seed ^ 0x5eedf00dull);
    const vqss::data::SilencePolicy policy{model->model.config.silence_dbfs};
    auto ex = vqss::data::sample_example(corpus, rng, k_eval, policy);

    vqss::evalsuite::export_reports(table, hist, model->model, ex.x_mix, out_dir);

    nlohmann::json summary;
    summary["classes"] = table.classes;
    summary["l1_target"] = table.l1_target;
    summary["l1_random"] = table.l1_random;
    summary["counts"] = table.counts;
    summary["purity"] = vqss::evalsuite::class_purity(hist);
    summary["warnings"] = table.warnings;
    std::ofstream f(fs::path(out_dir) / "summary.json", std::ios::trunc);
    f << summary.dump(2) << "\n";
  });
}

}  // extern "C"
