#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <fstream>

#include "core/wav.hpp"
#include "vqss.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vqss_capi_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_mini_dataset(const fs::path& dir) {
  fs::create_directories(dir / "tones");
  fs::create_directories(dir / "noise");
  for (int i = 0; i < 3; ++i) {
    std::vector<double> tone(static_cast<size_t>(2.0 * 44100));
    const double f = 150.0 + 120.0 * i;
    for (size_t t = 0; t < tone.size(); ++t)
      tone[t] = 0.5 * std::sin(2.0 * M_PI * f * t / 44100.0);
    vqss::core::write_wav_pcm16((dir / "tones" / ("t" + std::to_string(i) + ".wav")).string(),
                                tone, 44100);
    std::vector<double> nz(tone.size());
    uint64_t state = 12345 + i;
    for (auto& x : nz) {
      state = state * 6364136223846793005ull + 1442695040888963407ull;
      x = 0.6 * (static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5);
    }
    vqss::core::write_wav_pcm16((dir / "noise" / ("n" + std::to_string(i) + ".wav")).string(), nz,
                                44100);
  }
}

std::string micro_train_config(const fs::path& dataset, const fs::path& run_dir) {
  return "model = toy\n"
         "dataset_dir = " + dataset.string() + "\n"
         "run_dir = " + run_dir.string() + "\n"
         "codebook_size = 4\n"
         "batch_size = 4\n"
         "total_steps = 2\n"
         "checkpoint_every = 2\n"
         "loss_scales = 512,128\n"
         "seed = 4242\n";
}

}  // namespace

TEST_CASE("version and error strings are always present") {
  CHECK(std::strlen(vqss_version()) > 0);
  CHECK(vqss_last_error() != nullptr);
}

TEST_CASE("model_open on a missing path reports a runtime error with a message") {
  vqss_model* m = nullptr;
  const auto s = vqss_model_open("/does/not/exist.vqss", &m);
  CHECK(s == VQSS_ERR_RUNTIME);
  CHECK(m == nullptr);
  CHECK(std::strlen(vqss_last_error()) > 0);
}

TEST_CASE("train rejects bad configs with status 1 naming the key") {
  TempDir dir("badcfg");
  const auto cfg_path = dir.path / "bad.cfg";
  {
    std::ofstream f(cfg_path);
    f << "model = toy\ntotal_steps = 1\n";  // dataset_dir missing
  }
  char out[256];
  CHECK(vqss_train_run(cfg_path.string().c_str(), out, sizeof(out)) ==
        VQSS_ERR_INVALID_ARGUMENT);
  CHECK(std::string(vqss_last_error()).find("dataset_dir") != std::string::npos);

  {
    std::ofstream f(cfg_path);
    f << "bogus_key = 3\n";
  }
  CHECK(vqss_train_run(cfg_path.string().c_str(), out, sizeof(out)) ==
        VQSS_ERR_INVALID_ARGUMENT);
  CHECK(std::string(vqss_last_error()).find("bogus_key") != std::string::npos);
}

TEST_CASE("end-to-end: train, open, inspect codebook, separate, evaluate") {
  TempDir dir("e2e");
  write_mini_dataset(dir.path / "stems");
  const auto cfg_path = dir.path / "train.cfg";
  {
    std::ofstream f(cfg_path);
    f << micro_train_config(dir.path / "stems", dir.path / "run");
  }
  char checkpoint[4096] = {0};
  REQUIRE(vqss_train_run(cfg_path.string().c_str(), checkpoint, sizeof(checkpoint)) == VQSS_OK);
  CHECK(fs::exists(checkpoint));
  CHECK(fs::exists(dir.path / "run" / "config_resolved.cfg"));
  CHECK(fs::exists(dir.path / "run" / "training_log.csv"));

  vqss_model* model = nullptr;
  REQUIRE(vqss_model_open(checkpoint, &model) == VQSS_OK);
  REQUIRE(model != nullptr);
  CHECK(vqss_model_codebook_size(model) == 4);
  CHECK(vqss_model_code_dim(model) == 8);

  double entry[8];
  REQUIRE(vqss_model_codebook_entry(model, 0, entry, 8) == VQSS_OK);
  double norm = 0.0;
  for (double x : entry) norm += x * x;
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
  CHECK(vqss_model_codebook_entry(model, 99, entry, 8) == VQSS_ERR_INVALID_ARGUMENT);
  double ema = -1.0;
  REQUIRE(vqss_model_codebook_usage(model, 0, &ema) == VQSS_OK);
  CHECK(ema >= 0.0);

  // buffer separation
  std::vector<double> mix(66150, 0.0);
  for (size_t t = 0; t < mix.size(); ++t)
    mix[t] = 0.4 * std::sin(2.0 * M_PI * 220.0 * t / 44100.0);
  vqss_separation* sep = nullptr;
  REQUIRE(vqss_separate_buffer(model, mix.data(), 66150, 44100.0, &sep) == VQSS_OK);
  REQUIRE(sep != nullptr);
  CHECK(vqss_separation_count(sep) == 4);
  CHECK(vqss_separation_length(sep) == 66150);
  std::vector<double> source(66150);
  REQUIRE(vqss_separation_source(sep, 1, source.data(), 66150) == VQSS_OK);
  for (size_t t = 0; t < source.size(); t += 7919) CHECK(std::isfinite(source[t]));
  CHECK(std::isfinite(vqss_separation_energy_dbfs(sep, 1)));
  CHECK(vqss_separation_source(sep, 9, source.data(), 66150) == VQSS_ERR_INVALID_ARGUMENT);
  vqss_separation_close(sep);

  CHECK(vqss_separate_buffer(model, mix.data(), 66150, 48000.0, &sep) ==
        VQSS_ERR_INVALID_ARGUMENT);

  // file separation and the sample-rate gate
  const auto mix_path = dir.path / "mix.wav";
  vqss::core::write_wav_pcm16(mix_path.string(), mix, 44100);
  REQUIRE(vqss_separate_file(model, mix_path.string().c_str(),
                             (dir.path / "sep").string().c_str()) == VQSS_OK);
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "source_%02d.wav", i);
    CHECK(fs::exists(dir.path / "sep" / name));
  }
  CHECK(fs::exists(dir.path / "sep" / "sources.json"));

  const auto bad_rate = dir.path / "bad_rate.wav";
  vqss::core::write_wav_pcm16(bad_rate.string(), mix, 48000);
  CHECK(vqss_separate_file(model, bad_rate.string().c_str(),
                           (dir.path / "sep2").string().c_str()) == VQSS_ERR_INVALID_ARGUMENT);
  CHECK(std::string(vqss_last_error()).find("44100") != std::string::npos);

  // evaluation reports
  REQUIRE(vqss_evaluate(model, (dir.path / "stems").string().c_str(),
                        (dir.path / "report").string().c_str(), 2, 7) == VQSS_OK);
  for (const char* f : {"table.csv", "clusters.csv", "clusters.png", "grid.png", "summary.json"})
    CHECK(fs::exists(dir.path / "report" / f));

  vqss_model_close(model);
}
