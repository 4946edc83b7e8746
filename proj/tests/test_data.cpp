#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <fstream>

#include "core/wav.hpp"
#include "data/data.hpp"
#include "dsp/dsp.hpp"

namespace fs = std::filesystem;
using namespace vqss;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vqss_data_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_sine(const fs::path& p, double seconds, double freq, int sr, double amp = 0.5) {
  std::vector<double> v(static_cast<size_t>(seconds * sr));
  for (size_t t = 0; t < v.size(); ++t) v[t] = amp * std::sin(2.0 * M_PI * freq * t / sr);
  core::write_wav_pcm16(p.string(), v, sr);
}

void write_const(const fs::path& p, double seconds, double value) {
  std::vector<double> v(static_cast<size_t>(seconds * 44100), value);
  core::write_wav_pcm16(p.string(), v, 44100);
}

// band energy fraction below a cutoff, from the magnitude STFT
double low_band_fraction(const dsp::Waveform& w, double cutoff_hz) {
  const auto p = dsp::StftParams::hann(2048, 512);
  const auto mag = dsp::magnitude(dsp::stft(w, p));
  const double bin_hz = 44100.0 / 2048.0;
  double low = 0.0, total = 0.0;
  for (int64_t b = 0; b < mag.bins; ++b)
    for (int64_t t = 0; t < mag.frames; ++t) {
      const double e = mag.at(b, t) * mag.at(b, t);
      total += e;
      if (b * bin_hz < cutoff_hz) low += e;
    }
  return low / total;
}

}  // namespace

TEST_CASE("ingest accepts valid stems and rejects short or misrated ones") {
  TempDir dir("ingest");
  write_sine(dir.path / "good.wav", 3.0, 440.0, 44100);
  write_sine(dir.path / "short.wav", 1.0, 440.0, 44100);
  write_sine(dir.path / "wrong_rate.wav", 3.0, 440.0, 48000);
  {
    std::ofstream junk(dir.path / "junk.wav");
    junk << "not a wav";
  }

  const auto m = data::ingest(dir.path.string());
  REQUIRE(m.stems.size() == 1);
  CHECK(m.stems[0].id == "good");
  CHECK(m.stems[0].duration_s == doctest::Approx(3.0));
  CHECK(m.stems[0].label.empty());
  CHECK(m.warnings.size() == 3);
  bool saw_rate = false, saw_short = false;
  for (const auto& w : m.warnings) {
    if (w.find("sample rate") != std::string::npos) saw_rate = true;
    if (w.find("shorter") != std::string::npos) saw_short = true;
  }
  CHECK(saw_rate);
  CHECK(saw_short);
}

TEST_CASE("ingest errors on an empty directory and labels by subdirectory") {
  TempDir dir("labels");
  CHECK_THROWS(data::ingest(dir.path.string()));
  fs::create_directories(dir.path / "drums");
  write_sine(dir.path / "drums" / "a.wav", 2.0, 200.0, 44100);
  const auto m = data::ingest(dir.path.string());
  REQUIRE(m.stems.size() == 1);
  CHECK(m.stems[0].label == "drums");
}

TEST_CASE("manifest json round trip") {
  TempDir dir("manifest");
  write_sine(dir.path / "x.wav", 2.0, 300.0, 44100);
  const auto m = data::ingest(dir.path.string());
  const auto cache = (dir.path / "manifest.json").string();
  data::save_manifest_json(m, cache);
  const auto back = data::load_manifest_json(cache);
  REQUIRE(back.stems.size() == m.stems.size());
  CHECK(back.stems[0].id == m.stems[0].id);
  CHECK(back.stems[0].num_samples == m.stems[0].num_samples);
  CHECK(back.sample_rate == 44100);
}

TEST_CASE("is_silent boundary is a strict less-than on RMS") {
  const double threshold = std::pow(10.0, -60.0 / 20.0);
  data::SilencePolicy policy;
  dsp::Waveform w;
  w.samples.assign(data::kCropSamples, 0.0);
  CHECK(data::is_silent(w, policy));

  for (auto& x : w.samples) x = 1.0;  // full scale
  CHECK_FALSE(data::is_silent(w, policy));

  // marginally above / below the -60 dBFS line
  for (auto& x : w.samples) x = threshold * (1.0 + 1e-9);
  CHECK_FALSE(data::is_silent(w, policy));
  for (auto& x : w.samples) x = threshold * (1.0 - 1e-9);
  CHECK(data::is_silent(w, policy));
}

TEST_CASE("sampler: k = 0 makes the mixture identical to the target") {
  TempDir dir("k0");
  write_sine(dir.path / "a.wav", 2.0, 220.0, 44100);
  write_sine(dir.path / "b.wav", 2.0, 330.0, 44100);
  const auto corpus = data::load_corpus(data::ingest(dir.path.string()));
  core::Rng rng(1);
  const auto ex = data::sample_example(corpus, rng, 0);
  CHECK(ex.k == 0);
  CHECK(ex.x_mix.samples == ex.x_targ.samples);
  CHECK(ex.x_targ.size() == data::kCropSamples);
  CHECK(ex.x_ref.size() == data::kCropSamples);
}

TEST_CASE("sampler mixes by plain summation: in-phase unit signals reach 2") {
  TempDir dir("sum");
  write_const(dir.path / "a.wav", 2.0, 0.9999);  // 16-bit full scale
  write_const(dir.path / "b.wav", 2.0, 0.9999);
  const auto corpus = data::load_corpus(data::ingest(dir.path.string()));
  core::Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto ex = data::sample_example(corpus, rng, 1);
    if (ex.k != 1) continue;
    double peak = 0.0;
    for (double x : ex.x_mix.samples) peak = std::max(peak, x);
    CHECK(peak == doctest::Approx(2.0 * 0.9999).epsilon(1e-3));
    // mixture linearity: mix - targ is the constant extra crop
    for (int64_t t = 0; t < ex.x_mix.size(); t += 1111)
      CHECK(ex.x_mix.samples[t] - ex.x_targ.samples[t] ==
            doctest::Approx(0.9999).epsilon(1e-3));
    return;
  }
  FAIL("no draw with k = 1 in 20 tries");
}

TEST_CASE("sampler is reproducible bit-exactly under a fixed seed") {
  TempDir dir("repro");
  write_sine(dir.path / "a.wav", 2.5, 220.0, 44100);
  write_sine(dir.path / "b.wav", 2.5, 550.0, 44100);
  const auto corpus = data::load_corpus(data::ingest(dir.path.string()));
  core::Rng r1(77), r2(77);
  const auto e1 = data::sample_example(corpus, r1, 3);
  const auto e2 = data::sample_example(corpus, r2, 3);
  CHECK(e1.k == e2.k);
  CHECK(e1.x_mix.samples == e2.x_mix.samples);
  CHECK(e1.x_targ.samples == e2.x_targ.samples);
  CHECK(e1.x_ref.samples == e2.x_ref.samples);
}

TEST_CASE("sampler rejects an all-silent corpus and invariants hold in bulk") {
  TempDir dir("bulk");
  fs::create_directories(dir.path / "silent");
  {
    std::vector<double> v(static_cast<size_t>(2.0 * 44100), 0.0);
    core::write_wav_pcm16((dir.path / "silent" / "z.wav").string(), v, 44100);
  }
  const auto silent_corpus = data::load_corpus(data::ingest(dir.path.string()));
  core::Rng srng(3);
  CHECK_THROWS(data::sample_example(silent_corpus, srng, 2));

  write_sine(dir.path / "a.wav", 2.0, 220.0, 44100);
  write_sine(dir.path / "b.wav", 2.0, 330.0, 44100);
  write_sine(dir.path / "c.wav", 2.0, 440.0, 44100);
  const auto corpus = data::load_corpus(data::ingest(dir.path.string()));
  core::Rng rng(4);
  const int K = 4;
  std::vector<int64_t> k_counts(K + 1, 0);
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const auto ex = data::sample_example(corpus, rng, K);
    REQUIRE(ex.x_mix.size() == data::kCropSamples);
    REQUIRE(ex.x_targ.size() == data::kCropSamples);
    REQUIRE(ex.x_ref.size() == data::kCropSamples);
    REQUIRE_FALSE(data::is_silent(ex.x_ref, {}));
    REQUIRE(ex.k >= 0);
    REQUIRE(ex.k <= K);
    k_counts[ex.k]++;
  }
  // chi-squared uniformity over {0..4}: crit value 13.277 at p = 0.01, 4 dof
  const double expected = trials / static_cast<double>(K + 1);
  double chi2 = 0.0;
  for (int64_t c : k_counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 13.277);
}

TEST_CASE("toy corpus: counts, labels, determinism, and class-(a) band energy") {
  TempDir d1("toy1"), d2("toy2");
  data::make_toy_corpus(d1.path.string(), 99);
  data::make_toy_corpus(d2.path.string(), 99);

  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d1.path))
    if (e.is_regular_file()) ++files;
  CHECK(files == 240);

  const auto m = data::ingest(d1.path.string());
  CHECK(m.stems.size() == 240);
  std::map<std::string, int> per_label;
  for (const auto& s : m.stems) per_label[s.label]++;
  REQUIRE(per_label.size() == 4);
  for (const auto& [label, count] : per_label) CHECK(count == 60);

  // deterministic: identical bytes for matching files
  for (int cls = 0; cls < data::kToyClassCount; ++cls) {
    for (int i = 0; i < data::kToyStemsPerClass; i += 17) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s/stem_%03d.wav", data::kToyClassNames[cls], i);
      std::ifstream f1(d1.path / name, std::ios::binary), f2(d2.path / name, std::ios::binary);
      REQUIRE(f1);
      REQUIRE(f2);
      std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
      std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
      CHECK(b1 == b2);
    }
  }

  // low tones live below 200 Hz
  for (int i = 0; i < 8; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "low_tones/stem_%03d.wav", i * 7);
    auto wav = core::read_wav((d1.path / name).string());
    dsp::Waveform w(std::move(wav.samples), 44100.0);
    CHECK(low_band_fraction(w, 200.0) >= 0.9);
  }

  // every stem offers at least one silent and one non-silent crop window
  const auto corpus = data::load_corpus(m);
  int with_silence = 0;
  for (const auto& stem : corpus.audio) {
    bool any_silent = false;
    for (int64_t off = 0; off + data::kCropSamples <= stem.size();
         off += data::kCropSamples / 8) {
      if (data::is_silent(data::crop(stem, off), {})) {
        any_silent = true;
        break;
      }
    }
    if (any_silent) ++with_silence;
  }
  // target crops must be able to land on silence for most stems
  CHECK(with_silence > 200);
}
