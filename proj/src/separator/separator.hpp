#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsp/dsp.hpp"
#include "trainer/trainer.hpp"

namespace vqss::separator {

inline constexpr double kEnergyEps = 1e-5;
inline constexpr int64_t kChunkSamples = data::kCropSamples;  // 1.5 s, the training crop

struct SeparationResult {
  std::vector<dsp::Waveform> sources;  // index-aligned with codebook entries
  std::vector<double> energy_dbfs;
};

// 20*log10(RMS + eps); zeros floor at 20*log10(eps) = -100 dBFS
double source_energy_dbfs(const dsp::Waveform& w);

// One chunk in, one fixed-size set of source chunks out. Injectable so the
// overlap-add machinery can be tested independently of the networks.
using ChunkFn = std::function<std::vector<std::vector<double>>(const dsp::Waveform& chunk)>;

// Codebook sweep: source_i = G(mix, entry_i). Inputs longer than one chunk
// are processed at 50% overlap and crossfaded.
SeparationResult separate(const dsp::Waveform& mix, const trainer::Model& model);

// overlap-add driver with an injected chunk processor
SeparationResult separate_chunked(const dsp::Waveform& mix, int n_sources, int64_t chunk_len,
                                  const ChunkFn& fn);

// source_00.wav ... source_NN.wav (32-bit float) plus sources.json sidecar
void write_separation(const SeparationResult& result, const std::string& out_dir);

}  // namespace vqss::separator
