#include "separator/separator.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "core/wav.hpp"

namespace fs = std::filesystem;

namespace vqss::separator {

double source_energy_dbfs(const dsp::Waveform& w) {
  if (w.samples.empty()) throw std::invalid_argument("source_energy_dbfs: empty waveform");
  double acc = 0.0;
  for (double x : w.samples) acc += x * x;
  const double rms = std::sqrt(acc / static_cast<double>(w.samples.size()));
  return 20.0 * std::log10(rms + kEnergyEps);
}

namespace {

// crossfade weights: raised-cosine with a small floor so that the weighted
// average is well-defined everywhere a chunk covers
std::vector<double> crossfade_window(int64_t n) {
  std::vector<double> w(n);
  for (int64_t t = 0; t < n; ++t)
    w[t] = 0.02 + 0.98 * 0.5 * (1.0 - std::cos(2.0 * M_PI * t / static_cast<double>(n)));
  return w;
}

std::vector<std::vector<double>> model_chunk(const dsp::Waveform& chunk,
                                             const trainer::Model& model) {
  const auto p = model.config.stft();
  const auto mag = dsp::magnitude(dsp::stft(chunk, p));
  std::vector<std::vector<double>> out;
  out.reserve(model.codebook.n);
  for (int i = 0; i < model.codebook.n; ++i) {
    auto gen = nets::generate(model.generator, mag, model.codebook.entry(i), chunk.size());
    out.push_back(std::move(gen.waveform.samples));
  }
  return out;
}

}  // namespace

SeparationResult separate_chunked(const dsp::Waveform& mix, int n_sources, int64_t chunk_len,
                                  const ChunkFn& fn) {
  const int64_t len = mix.size();
  if (len <= 0) throw std::invalid_argument("separate: empty input");
  const int64_t hop = chunk_len / 2;
  const auto window = crossfade_window(chunk_len);

  std::vector<std::vector<double>> acc(n_sources, std::vector<double>(len, 0.0));
  std::vector<double> wsum(len, 0.0);

  for (int64_t start = 0;; start += hop) {
    dsp::Waveform chunk;
    chunk.sample_rate = mix.sample_rate;
    chunk.samples.assign(chunk_len, 0.0);
    const int64_t avail = std::min(chunk_len, len - start);
    std::copy_n(mix.samples.begin() + start, avail, chunk.samples.begin());

    const auto outs = fn(chunk);
    if (static_cast<int>(outs.size()) != n_sources)
      throw std::runtime_error("separate: chunk processor returned wrong source count");
    for (int s = 0; s < n_sources; ++s) {
      if (static_cast<int64_t>(outs[s].size()) != chunk_len)
        throw std::runtime_error("separate: chunk processor returned wrong length");
      for (int64_t t = 0; t < avail; ++t) acc[s][start + t] += window[t] * outs[s][t];
    }
    for (int64_t t = 0; t < avail; ++t) wsum[start + t] += window[t];
    if (start + chunk_len >= len) break;
  }

  SeparationResult result;
  result.sources.reserve(n_sources);
  for (int s = 0; s < n_sources; ++s) {
    dsp::Waveform w;
    w.sample_rate = mix.sample_rate;
    w.samples.resize(len);
    for (int64_t t = 0; t < len; ++t) w.samples[t] = acc[s][t] / std::max(wsum[t], 1e-12);
    result.energy_dbfs.push_back(source_energy_dbfs(w));
    result.sources.push_back(std::move(w));
  }
  return result;
}

SeparationResult separate(const dsp::Waveform& mix, const trainer::Model& model) {
  if (mix.samples.empty()) throw std::invalid_argument("separate: empty input");
  const auto p = model.config.stft();
  if (mix.size() < p.fft_size)
    throw std::invalid_argument("separate: input shorter than one STFT frame");

  if (mix.size() <= kChunkSamples) {
    const auto outs = model_chunk(mix, model);
    SeparationResult result;
    for (const auto& o : outs) {
      dsp::Waveform w(std::vector<double>(o.begin(), o.end()), mix.sample_rate);
      result.energy_dbfs.push_back(source_energy_dbfs(w));
      result.sources.push_back(std::move(w));
    }
    return result;
  }
  return separate_chunked(mix, model.codebook.n, kChunkSamples,
                          [&](const dsp::Waveform& chunk) { return model_chunk(chunk, model); });
}

void write_separation(const SeparationResult& result, const std::string& out_dir) {
  fs::create_directories(out_dir);
  nlohmann::json sidecar = nlohmann::json::array();
  for (size_t i = 0; i < result.sources.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "source_%02zu.wav", i);
    core::write_wav_float32((fs::path(out_dir) / name).string(), result.sources[i].samples,
                            static_cast<int>(result.sources[i].sample_rate));
    sidecar.push_back({{"code_index", i}, {"energy_dbfs", result.energy_dbfs[i]}, {"file", name}});
  }
  std::ofstream f(fs::path(out_dir) / "sources.json", std::ios::trunc);
  f << sidecar.dump(2) << "\n";
}

}  // namespace vqss::separator
