#include "evalsuite/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "core/png.hpp"
#include "core/rng.hpp"
#include "objectives/objectives.hpp"
#include "separator/separator.hpp"

namespace fs = std::filesystem;

namespace vqss::evalsuite {

namespace {

constexpr int kCropRetries = 100;

core::Rng item_rng(uint64_t seed, int64_t item) {
  return core::Rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(item + 1)));
}

dsp::Waveform non_silent_crop(const dsp::Waveform& stem, core::Rng& rng,
                              const data::SilencePolicy& policy) {
  dsp::Waveform c;
  for (int r = 0; r < kCropRetries; ++r) {
    c = data::crop(stem, data::random_crop_offset(stem, rng));
    if (!data::is_silent(c, policy)) return c;
  }
  return c;  // corpus pathologically silent; fall back to the last draw
}

std::vector<std::string> collect_classes(const data::Manifest& m) {
  std::vector<std::string> classes;
  for (const auto& s : m.stems) {
    const std::string label = s.label.empty() ? "unlabelled" : s.label;
    if (std::find(classes.begin(), classes.end(), label) == classes.end())
      classes.push_back(label);
  }
  std::sort(classes.begin(), classes.end());
  return classes;
}

int class_index(const std::vector<std::string>& classes, const std::string& label) {
  const std::string key = label.empty() ? "unlabelled" : label;
  const auto it = std::find(classes.begin(), classes.end(), key);
  return static_cast<int>(it - classes.begin());
}

}  // namespace

EstimateFn model_estimator(const trainer::Model& model) {
  return [&model](const EvalItem& item) {
    const auto p = model.config.stft();
    const auto mag = dsp::magnitude(dsp::stft(item.mix, p));
    auto out = nets::generate(model.generator, mag, item.code, item.mix.size());
    out.waveform.sample_rate = item.mix.sample_rate;
    return out.waveform;
  };
}

L1Table eval_l1(const data::Corpus& test_corpus, const trainer::Model& model,
                const EstimateFn& estimate, int k_eval, uint64_t seed) {
  const auto& manifest = test_corpus.manifest;
  if (manifest.stems.empty()) throw std::runtime_error("eval_l1: empty test manifest");
  const auto p = model.config.stft();
  const data::SilencePolicy policy{model.config.silence_dbfs};
  const int64_t n = static_cast<int64_t>(manifest.stems.size());

  L1Table table;
  table.classes = collect_classes(manifest);
  const size_t C = table.classes.size();
  table.l1_target.assign(C, 0.0);
  table.l1_random.assign(C, 0.0);
  table.counts.assign(C, 0);

  for (int64_t i = 0; i < n; ++i) {
    auto rng = item_rng(seed, i);
    const auto& stem = test_corpus.audio[i];

    EvalItem item;
    item.label = manifest.stems[i].label;
    item.target = non_silent_crop(stem, rng, policy);
    const auto ref = non_silent_crop(stem, rng, policy);

    item.mix = item.target;
    for (int j = 0; j < k_eval && n > 1; ++j) {
      int64_t other = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - 1)));
      if (other >= i) ++other;
      const auto extra = non_silent_crop(test_corpus.audio[other], rng, policy);
      for (int64_t t = 0; t < item.mix.size(); ++t) item.mix.samples[t] += extra.samples[t];
    }

    const auto q = model.quantize_reference(ref);
    item.code_index = q.code_index;
    item.code = q.quantized;
    const auto est = estimate(item);
    const double l1_t = objectives::l1_log_spectrogram(est, item.target, p);

    EvalItem rnd = item;
    rnd.code_index = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(model.codebook.n)));
    const auto entry = model.codebook.entry(rnd.code_index);
    rnd.code.assign(entry.begin(), entry.end());
    const auto est_r = estimate(rnd);
    const double l1_r = objectives::l1_log_spectrogram(est_r, rnd.target, p);

    const int c = class_index(table.classes, item.label);
    table.l1_target[c] += l1_t;
    table.l1_random[c] += l1_r;
    table.counts[c]++;
  }

  // means; classes that contributed nothing are dropped with a warning
  std::vector<std::string> kept;
  std::vector<double> lt, lr;
  std::vector<int64_t> counts;
  for (size_t c = 0; c < C; ++c) {
    if (table.counts[c] == 0) {
      table.warnings.push_back("class " + table.classes[c] + " has no test items; omitted");
      continue;
    }
    kept.push_back(table.classes[c]);
    lt.push_back(table.l1_target[c] / table.counts[c]);
    lr.push_back(table.l1_random[c] / table.counts[c]);
    counts.push_back(table.counts[c]);
  }
  table.classes = std::move(kept);
  table.l1_target = std::move(lt);
  table.l1_random = std::move(lr);
  table.counts = std::move(counts);
  return table;
}

ClusterHistogram eval_clusters(const data::Corpus& test_corpus, const trainer::Model& model,
                               uint64_t seed) {
  const auto& manifest = test_corpus.manifest;
  if (manifest.stems.empty()) throw std::runtime_error("eval_clusters: empty test manifest");
  const data::SilencePolicy policy{model.config.silence_dbfs};

  ClusterHistogram h;
  h.n_codes = model.codebook.n;
  h.classes = collect_classes(manifest);
  h.counts.assign(static_cast<size_t>(h.n_codes) * h.classes.size(), 0);

  for (int64_t i = 0; i < static_cast<int64_t>(manifest.stems.size()); ++i) {
    auto rng = item_rng(seed, i);
    const auto ref = non_silent_crop(test_corpus.audio[i], rng, policy);
    const auto q = model.quantize_reference(ref);
    const int c = class_index(h.classes, manifest.stems[i].label);
    h.counts[q.code_index * h.classes.size() + c]++;
  }
  return h;
}

std::vector<double> class_purity(const ClusterHistogram& h) {
  std::vector<double> purity(h.classes.size(), 0.0);
  for (size_t c = 0; c < h.classes.size(); ++c) {
    int64_t best = 0, total = 0;
    for (int k = 0; k < h.n_codes; ++k) {
      best = std::max(best, h.at(k, static_cast<int>(c)));
      total += h.at(k, static_cast<int>(c));
    }
    purity[c] = total > 0 ? static_cast<double>(best) / static_cast<double>(total) : 0.0;
  }
  return purity;
}

// ---------------- report files ----------------

namespace {

// 3x5 bitmap digits for panel labels
const uint16_t kDigitRows[10][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111}, {0b010, 0b110, 0b010, 0b010, 0b111},
    {0b111, 0b001, 0b111, 0b100, 0b111}, {0b111, 0b001, 0b111, 0b001, 0b111},
    {0b101, 0b101, 0b111, 0b001, 0b001}, {0b111, 0b100, 0b111, 0b001, 0b111},
    {0b111, 0b100, 0b111, 0b101, 0b111}, {0b111, 0b001, 0b010, 0b010, 0b010},
    {0b111, 0b101, 0b111, 0b101, 0b111}, {0b111, 0b101, 0b111, 0b001, 0b111}};

void draw_digit(std::vector<uint8_t>& img, int img_w, int x0, int y0, int digit, int scale,
                uint8_t value) {
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 3; ++c) {
      if (!((kDigitRows[digit][r] >> (2 - c)) & 1)) continue;
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) {
          const int y = y0 + r * scale + dy;
          const int x = x0 + c * scale + dx;
          img[static_cast<size_t>(y) * img_w + x] = value;
        }
    }
}

void draw_number(std::vector<uint8_t>& img, int img_w, int x0, int y0, int value, int scale,
                 uint8_t color) {
  const std::string digits = std::to_string(value);
  int x = x0;
  for (char ch : digits) {
    draw_digit(img, img_w, x, y0, ch - '0', scale, color);
    x += 4 * scale;
  }
}

// mel spectrogram panel normalized to [0,255], low frequencies at the bottom
std::vector<uint8_t> mel_panel(const dsp::Waveform& w, int64_t& out_w, int64_t& out_h) {
  const auto mel = dsp::mel_spectrogram(w);
  out_w = mel.frames;
  out_h = mel.bins;
  double lo = mel.v[0], hi = mel.v[0];
  for (double x : mel.v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  std::vector<uint8_t> img(static_cast<size_t>(out_w) * out_h);
  for (int64_t b = 0; b < out_h; ++b)
    for (int64_t t = 0; t < out_w; ++t) {
      const double v = (mel.v[b * out_w + t] - lo) / span;
      img[static_cast<size_t>(out_h - 1 - b) * out_w + t] =
          static_cast<uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

}  // namespace

void export_reports(const L1Table& table, const ClusterHistogram& hist,
                    const trainer::Model& model, const dsp::Waveform& example_mix,
                    const std::string& out_dir) {
  fs::create_directories(out_dir);

  // ---- table.csv: 2 data rows x C class columns ----
  {
    std::ofstream f(fs::path(out_dir) / "table.csv", std::ios::trunc);
    f << "metric";
    for (const auto& c : table.classes) f << ',' << c;
    f << "\nL1";
    f.precision(6);
    for (double v : table.l1_target) f << ',' << v;
    f << "\nL1_rand";
    for (double v : table.l1_random) f << ',' << v;
    f << "\n";
  }

  // ---- clusters.csv ----
  {
    std::ofstream f(fs::path(out_dir) / "clusters.csv", std::ios::trunc);
    f << "code";
    for (const auto& c : hist.classes) f << ',' << c;
    f << "\n";
    for (int k = 0; k < hist.n_codes; ++k) {
      f << k;
      for (size_t c = 0; c < hist.classes.size(); ++c) f << ',' << hist.at(k, static_cast<int>(c));
      f << "\n";
    }
  }

  // ---- clusters.png heatmap ----
  {
    const int cell = 24;
    const int W = cell * static_cast<int>(hist.classes.size());
    const int H = cell * hist.n_codes;
    int64_t peak = 1;
    for (int64_t v : hist.counts) peak = std::max<int64_t>(peak, v);
    std::vector<uint8_t> img(static_cast<size_t>(W) * H, 0);
    for (int k = 0; k < hist.n_codes; ++k)
      for (size_t c = 0; c < hist.classes.size(); ++c) {
        const auto v = static_cast<double>(hist.at(k, static_cast<int>(c)));
        const auto shade = static_cast<uint8_t>(std::lround(255.0 * v / static_cast<double>(peak)));
        for (int dy = 0; dy < cell - 1; ++dy)
          for (int dx = 0; dx < cell - 1; ++dx)
            img[static_cast<size_t>(k * cell + dy) * W + c * cell + dx] = shade;
      }
    core::write_png_gray8((fs::path(out_dir) / "clusters.png").string(), W, H, img);
  }

  // ---- grid.png: example mix + one panel per codebook entry ----
  {
    const auto separated = separator::separate(example_mix, model);
    std::vector<std::vector<uint8_t>> panels;
    int64_t pw = 0, ph = 0;
    panels.push_back(mel_panel(example_mix, pw, ph));
    for (const auto& s : separated.sources) {
      int64_t w2, h2;
      panels.push_back(mel_panel(s, w2, h2));
    }
    const int cols = 4;
    const int rows = static_cast<int>((panels.size() + cols - 1) / cols);
    const int gap = 2;
    const int W = static_cast<int>(cols * (pw + gap) - gap);
    const int H = static_cast<int>(rows * (ph + gap) - gap);
    std::vector<uint8_t> img(static_cast<size_t>(W) * H, 32);
    for (size_t i = 0; i < panels.size(); ++i) {
      const int r = static_cast<int>(i) / cols;
      const int c = static_cast<int>(i) % cols;
      const int y0 = static_cast<int>(r * (ph + gap));
      const int x0 = static_cast<int>(c * (pw + gap));
      for (int64_t y = 0; y < ph; ++y)
        for (int64_t x = 0; x < pw; ++x)
          img[static_cast<size_t>(y0 + y) * W + x0 + x] = panels[i][y * pw + x];
      // panel 0 is the mix; the rest are labeled by codebook index
      if (i > 0) draw_number(img, W, x0 + 4, y0 + 4, static_cast<int>(i - 1), 2, 255);
    }
    core::write_png_gray8((fs::path(out_dir) / "grid.png").string(), W, H, img);
  }
}

}  // namespace vqss::evalsuite
