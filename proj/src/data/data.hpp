#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "dsp/dsp.hpp"

namespace vqss::data {

inline constexpr int kSampleRate = 44100;
inline constexpr double kCropSeconds = 1.5;
inline constexpr int64_t kCropSamples = 66150;  // 1.5 s at 44.1 kHz
inline constexpr int kDefaultMixK = 4;

struct StemRecord {
  std::string id;
  std::string path;
  double duration_s = 0.0;
  int64_t num_samples = 0;
  std::string label;  // empty when the corpus is unlabelled
};

struct Manifest {
  std::vector<StemRecord> stems;
  int sample_rate = kSampleRate;
  std::vector<std::string> warnings;  // skipped/rejected files
};

// Scans <root>/<optional_class>/<stem>.wav. Stems shorter than the crop or at
// the wrong sample rate are rejected with a warning; unreadable files are
// skipped with a warning; an empty result is an error.
Manifest ingest(const std::string& directory);

void save_manifest_json(const Manifest& m, const std::string& path);
Manifest load_manifest_json(const std::string& path);

struct SilencePolicy {
  double threshold_dbfs = -60.0;  // RMS below this counts as silent
};

// true iff RMS < threshold (strict)
bool is_silent(const dsp::Waveform& w, const SilencePolicy& policy);

struct TrainingExample {
  dsp::Waveform x_mix;
  dsp::Waveform x_targ;
  dsp::Waveform x_ref;
  int k = 0;  // extra stems mixed in
};

// manifest plus decoded audio, index-aligned; avoids per-example file reads
struct Corpus {
  Manifest manifest;
  std::vector<dsp::Waveform> audio;
};

Corpus load_corpus(const Manifest& manifest);

// Crop pair sampler: x_targ and x_ref are independent crops of one stem
// (x_ref re-drawn until non-silent), x_mix adds k ~ U{0..K} crops of other
// stems by plain summation.
TrainingExample sample_example(const Manifest& manifest, core::Rng& rng, int max_extra_stems,
                               const SilencePolicy& policy = {});
TrainingExample sample_example(const Corpus& corpus, core::Rng& rng, int max_extra_stems,
                               const SilencePolicy& policy = {});

// loads a stem as mono 44.1 kHz doubles; throws on rate mismatch
dsp::Waveform load_stem(const StemRecord& rec);

// uniform random crop of kCropSamples
dsp::Waveform crop(const dsp::Waveform& w, int64_t offset);
int64_t random_crop_offset(const dsp::Waveform& w, core::Rng& rng);

// 4 classes x 60 stems x 4 s of synthetic, spectrally near-disjoint material
// with silent gaps so that target crops can be silent. Deterministic per seed.
inline constexpr int kToyClassCount = 4;
inline constexpr int kToyStemsPerClass = 60;
inline constexpr double kToyStemSeconds = 4.0;
extern const char* const kToyClassNames[kToyClassCount];

void make_toy_corpus(const std::string& out_dir, uint64_t seed);

}  // namespace vqss::data
