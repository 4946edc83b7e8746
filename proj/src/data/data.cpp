#include "data/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "core/fft.hpp"
#include "core/wav.hpp"

namespace fs = std::filesystem;

namespace vqss::data {

const char* const kToyClassNames[kToyClassCount] = {"low_tones", "noise_bursts", "mid_harmonics",
                                                    "clicks"};

Manifest ingest(const std::string& directory) {
  if (!fs::is_directory(directory))
    throw std::runtime_error("ingest: not a directory: " + directory);
  Manifest m;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());  // directory order is not deterministic

  for (const auto& path : files) {
    core::WavData wav;
    try {
      wav = core::read_wav(path.string());
    } catch (const std::exception& e) {
      m.warnings.push_back(std::string("skipped unreadable file: ") + e.what());
      continue;
    }
    if (wav.sample_rate != kSampleRate) {
      m.warnings.push_back("rejected " + path.string() + ": sample rate " +
                           std::to_string(wav.sample_rate) + " Hz, expected 44100 Hz");
      continue;
    }
    if (static_cast<int64_t>(wav.samples.size()) < kCropSamples) {
      m.warnings.push_back("rejected " + path.string() + ": shorter than the 1.5 s crop");
      continue;
    }
    StemRecord rec;
    rec.id = path.stem().string();
    rec.path = path.string();
    rec.num_samples = static_cast<int64_t>(wav.samples.size());
    rec.duration_s = rec.num_samples / static_cast<double>(kSampleRate);
    const auto parent = path.parent_path();
    if (parent != fs::path(directory)) rec.label = parent.filename().string();
    m.stems.push_back(std::move(rec));
  }
  if (m.stems.empty())
    throw std::runtime_error("ingest: no usable stems under " + directory);
  return m;
}

void save_manifest_json(const Manifest& m, const std::string& path) {
  nlohmann::json j;
  j["sample_rate"] = m.sample_rate;
  j["stems"] = nlohmann::json::array();
  for (const auto& s : m.stems) {
    j["stems"].push_back({{"id", s.id},
                          {"path", s.path},
                          {"duration_s", s.duration_s},
                          {"num_samples", s.num_samples},
                          {"label", s.label}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

Manifest load_manifest_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest: " + path);
  nlohmann::json j;
  f >> j;
  Manifest m;
  m.sample_rate = j.at("sample_rate").get<int>();
  for (const auto& s : j.at("stems")) {
    StemRecord rec;
    rec.id = s.at("id").get<std::string>();
    rec.path = s.at("path").get<std::string>();
    rec.duration_s = s.at("duration_s").get<double>();
    rec.num_samples = s.at("num_samples").get<int64_t>();
    rec.label = s.at("label").get<std::string>();
    m.stems.push_back(std::move(rec));
  }
  return m;
}

bool is_silent(const dsp::Waveform& w, const SilencePolicy& policy) {
  double acc = 0.0;
  for (double x : w.samples) acc += x * x;
  const double rms = std::sqrt(acc / static_cast<double>(w.samples.size()));
  return rms < std::pow(10.0, policy.threshold_dbfs / 20.0);
}

dsp::Waveform load_stem(const StemRecord& rec) {
  auto wav = core::read_wav(rec.path);
  if (wav.sample_rate != kSampleRate)
    throw std::runtime_error("stem " + rec.path + " is not 44.1 kHz");
  return dsp::Waveform(std::move(wav.samples), kSampleRate);
}

dsp::Waveform crop(const dsp::Waveform& w, int64_t offset) {
  if (offset < 0 || offset + kCropSamples > w.size())
    throw std::invalid_argument("crop: offset out of range");
  return dsp::Waveform(
      std::vector<double>(w.samples.begin() + offset, w.samples.begin() + offset + kCropSamples),
      w.sample_rate);
}

int64_t random_crop_offset(const dsp::Waveform& w, core::Rng& rng) {
  const int64_t span = w.size() - kCropSamples;
  return span == 0 ? 0 : static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(span + 1)));
}

namespace {

constexpr int kRefRetries = 100;
constexpr int kStemRetries = 100;

}  // namespace

Corpus load_corpus(const Manifest& manifest) {
  Corpus c;
  c.manifest = manifest;
  c.audio.reserve(manifest.stems.size());
  for (const auto& rec : manifest.stems) c.audio.push_back(load_stem(rec));
  return c;
}

namespace {

template <typename GetStem>
TrainingExample sample_example_impl(int64_t n, GetStem&& get_stem, core::Rng& rng,
                                    int max_extra_stems, const SilencePolicy& policy) {
  if (n == 0) throw std::runtime_error("sample_example: empty manifest");

  for (int attempt = 0; attempt < kStemRetries; ++attempt) {
    const int64_t idx = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
    const dsp::Waveform& stem = get_stem(idx);

    const auto targ = crop(stem, random_crop_offset(stem, rng));
    dsp::Waveform ref;
    bool found_ref = false;
    for (int r = 0; r < kRefRetries; ++r) {
      ref = crop(stem, random_crop_offset(stem, rng));
      if (!is_silent(ref, policy)) {
        found_ref = true;
        break;
      }
    }
    if (!found_ref) continue;  // stem has no non-silent window we could find

    TrainingExample ex;
    ex.x_targ = targ;
    ex.x_ref = std::move(ref);
    ex.x_mix = ex.x_targ;
    ex.k = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_extra_stems) + 1));
    for (int j = 0; j < ex.k; ++j) {
      int64_t other = idx;
      if (n > 1) {
        other = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - 1)));
        if (other >= idx) ++other;
      }
      const dsp::Waveform& other_stem = get_stem(other);
      const auto extra = crop(other_stem, random_crop_offset(other_stem, rng));
      for (int64_t t = 0; t < kCropSamples; ++t) ex.x_mix.samples[t] += extra.samples[t];
    }
    return ex;
  }
  throw std::runtime_error("sample_example: could not draw a non-silent reference crop; "
                           "is the corpus all silence?");
}

}  // namespace

TrainingExample sample_example(const Manifest& manifest, core::Rng& rng, int max_extra_stems,
                               const SilencePolicy& policy) {
  // on-demand loads; fine for tests, the trainer uses the Corpus overload
  std::vector<dsp::Waveform> cache(manifest.stems.size());
  std::vector<bool> loaded(manifest.stems.size(), false);
  auto get = [&](int64_t i) -> const dsp::Waveform& {
    if (!loaded[i]) {
      cache[i] = load_stem(manifest.stems[i]);
      loaded[i] = true;
    }
    return cache[i];
  };
  return sample_example_impl(static_cast<int64_t>(manifest.stems.size()), get, rng,
                             max_extra_stems, policy);
}

TrainingExample sample_example(const Corpus& corpus, core::Rng& rng, int max_extra_stems,
                               const SilencePolicy& policy) {
  auto get = [&](int64_t i) -> const dsp::Waveform& { return corpus.audio[i]; };
  return sample_example_impl(static_cast<int64_t>(corpus.audio.size()), get, rng, max_extra_stems,
                             policy);
}

// ---- synthetic corpus ----

namespace {

// every stem carries a guaranteed silent stretch longer than the training
// crop, so that silent target crops exist for every class
constexpr double kToyGapSeconds = 1.8;

struct GapPlan {
  int64_t gap_lo;
  int64_t gap_hi;
};

GapPlan plan_silent_gap(core::Rng& rng) {
  const double margin = 0.1;
  const double start =
      rng.uniform(margin, kToyStemSeconds - kToyGapSeconds - margin);
  GapPlan p;
  p.gap_lo = static_cast<int64_t>(start * kSampleRate);
  p.gap_hi = static_cast<int64_t>((start + kToyGapSeconds) * kSampleRate);
  return p;
}

void add_tone(std::vector<double>& buf, int64_t start, int64_t len, double freq, double amp,
              const std::vector<std::pair<double, double>>& partials) {
  const int64_t n = static_cast<int64_t>(buf.size());
  const int64_t attack = std::min<int64_t>(len / 8, 882);  // <= 20 ms
  for (int64_t t = 0; t < len; ++t) {
    const int64_t idx = start + t;
    if (idx < 0 || idx >= n) continue;
    double env = std::exp(-3.0 * t / static_cast<double>(len));
    if (t < attack) env *= 0.5 * (1.0 - std::cos(M_PI * t / attack));
    double s = 0.0;
    for (const auto& [mult, pamp] : partials)
      s += pamp * std::sin(2.0 * M_PI * freq * mult * t / kSampleRate);
    buf[idx] += amp * env * s;
  }
}

// random-phase band-limited noise via FFT masking
void add_noise_burst(std::vector<double>& buf, int64_t start, int64_t len, double f_lo, double f_hi,
                     double amp, core::Rng& rng) {
  int64_t fft_len = 1;
  while (fft_len < len) fft_len <<= 1;
  std::vector<double> re(fft_len, 0.0), im(fft_len, 0.0);
  const double bin_hz = static_cast<double>(kSampleRate) / fft_len;
  for (int64_t k = 1; k < fft_len / 2; ++k) {
    const double f = k * bin_hz;
    if (f < f_lo || f > f_hi) continue;
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    re[k] = std::cos(phase);
    im[k] = std::sin(phase);
    re[fft_len - k] = re[k];
    im[fft_len - k] = -im[k];
  }
  const auto& plan = core::fft_plan(static_cast<size_t>(fft_len));
  core::fft_inplace(plan, re.data(), im.data(), +1);
  double peak = 1e-12;
  for (int64_t t = 0; t < len; ++t) peak = std::max(peak, std::abs(re[t]));
  const int64_t n = static_cast<int64_t>(buf.size());
  for (int64_t t = 0; t < len; ++t) {
    const int64_t idx = start + t;
    if (idx < 0 || idx >= n) continue;
    // sharp attack, exponential decay
    const double env = std::exp(-6.0 * t / static_cast<double>(len));
    buf[idx] += amp * env * re[t] / peak;
  }
}

std::vector<double> synth_stem(int cls, core::Rng& rng) {
  const int64_t n = static_cast<int64_t>(kToyStemSeconds * kSampleRate);
  std::vector<double> buf(n, 0.0);
  const auto gap = plan_silent_gap(rng);

  auto event_start = [&](int64_t event_len) {
    // rejection-place outside the silent gap; always feasible since the gap
    // leaves at least 1.1 s on one side and events are <= 0.9 s
    for (;;) {
      const int64_t s =
          static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - event_len)));
      if (s + event_len <= gap.gap_lo || s >= gap.gap_hi) return s;
    }
  };

  switch (cls) {
    case 0: {  // low sine tones, 60-120 Hz
      const double f0 = rng.uniform(60.0, 120.0);
      const int events = 2 + static_cast<int>(rng.uniform_int(2));
      for (int e = 0; e < events; ++e) {
        const int64_t len = static_cast<int64_t>(rng.uniform(0.5, 0.9) * kSampleRate);
        add_tone(buf, event_start(len), len, f0, rng.uniform(0.5, 0.8), {{1.0, 1.0}});
      }
      break;
    }
    case 1: {  // band-passed noise bursts, 2-6 kHz
      const int events = 3 + static_cast<int>(rng.uniform_int(3));
      for (int e = 0; e < events; ++e) {
        const int64_t len = static_cast<int64_t>(rng.uniform(0.1, 0.3) * kSampleRate);
        add_noise_burst(buf, event_start(len), len, 2000.0, 6000.0, rng.uniform(0.4, 0.7), rng);
      }
      break;
    }
    case 2: {  // mid-range harmonic tones, fundamental 300-800 Hz
      const double f0 = rng.uniform(300.0, 800.0);
      const int events = 2 + static_cast<int>(rng.uniform_int(2));
      for (int e = 0; e < events; ++e) {
        const int64_t len = static_cast<int64_t>(rng.uniform(0.4, 0.8) * kSampleRate);
        add_tone(buf, event_start(len), len, f0, rng.uniform(0.4, 0.7),
                 {{1.0, 1.0}, {2.0, 0.5}});
      }
      break;
    }
    case 3: {  // wideband clicks
      const int events = 5 + static_cast<int>(rng.uniform_int(6));
      for (int e = 0; e < events; ++e) {
        const int64_t len = static_cast<int64_t>(rng.uniform(0.002, 0.005) * kSampleRate);
        add_noise_burst(buf, event_start(len), len, 100.0, 18000.0, rng.uniform(0.6, 0.9), rng);
      }
      break;
    }
    default:
      throw std::logic_error("synth_stem: unknown class");
  }

  double peak = 0.0;
  for (double x : buf) peak = std::max(peak, std::abs(x));
  if (peak > 0.95)
    for (double& x : buf) x *= 0.95 / peak;
  return buf;
}

}  // namespace

void make_toy_corpus(const std::string& out_dir, uint64_t seed) {
  fs::create_directories(out_dir);
  for (int cls = 0; cls < kToyClassCount; ++cls) {
    const fs::path class_dir = fs::path(out_dir) / kToyClassNames[cls];
    fs::create_directories(class_dir);
    for (int i = 0; i < kToyStemsPerClass; ++i) {
      // one stream per stem so files are independent of generation order
      core::Rng rng(seed ^ (0x51ed2700ull + static_cast<uint64_t>(cls) * 1000 + i));
      const auto buf = synth_stem(cls, rng);
      char name[32];
      std::snprintf(name, sizeof(name), "stem_%03d.wav", i);
      core::write_wav_pcm16((class_dir / name).string(), buf, kSampleRate);
    }
  }
}

}  // namespace vqss::data
