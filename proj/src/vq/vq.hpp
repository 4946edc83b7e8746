#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/autograd.hpp"
#include "core/rng.hpp"

namespace vqss::vq {

inline constexpr int kCodeDim = 8;
inline constexpr double kNormEps = 1e-8;
inline constexpr double kLaplaceEps = 1e-5;

// Factorized codebook on the unit sphere with EMA statistics. Entries only
// ever change through ema_update or k-means init, never through gradients.
struct Codebook {
  int n = 0;
  int dim = kCodeDim;
  std::vector<double> entries;           // [n, dim], unit rows
  std::vector<double> ema_cluster_size;  // [n]
  std::vector<double> ema_embed_sum;     // [n, dim]
  double decay = 0.99;
  int64_t step = 0;

  std::span<const double> entry(int i) const { return {entries.data() + i * dim, (size_t)dim}; }
};

struct QuantizeResult {
  int code_index = 0;
  std::vector<double> quantized;  // copy of the selected entry
  double commitment = 0.0;        // ||z - sg(q)||^2
};

// cosine-similarity nearest entry; ties break toward the lowest index
QuantizeResult quantize(std::span<const double> z_fac, const Codebook& cb);

// Lloyd iterations on the unit sphere (cosine distance). Centroids are
// re-normalized after every step; empty clusters are re-seeded from random
// batch points. EMA statistics start from the final hard assignment.
Codebook kmeans_init(const std::vector<double>& batch /* [B, dim] */, int64_t batch_size, int n,
                     int iters, core::Rng& rng);

// one EMA step given per-code assignment counts and coordinate sums
void ema_update(Codebook& cb, std::span<const double> counts /* [n] */,
                std::span<const double> sums /* [n, dim] */);

struct UsageStats {
  double perplexity = 0.0;
  int active_codes = 0;
};

// perplexity = exp(entropy) of the empirical code distribution
UsageStats usage_stats(const Codebook& cb, std::span<const int64_t> assignment_counts);

// learned linear map 512 -> kCodeDim followed by L2 normalization; no bias,
// so the projection is scale-invariant
struct CodeProjection {
  ag::Var weight;  // [kCodeDim, embed_dim]

  CodeProjection() = default;
  CodeProjection(int embed_dim, core::Rng& rng);

  // z [B, embed_dim] -> unit rows [B, kCodeDim]
  ag::Var apply(const ag::Var& z) const;
  std::vector<double> apply_plain(std::span<const double> z) const;  // single vector
};

// forward value = quantized entries, gradient passes straight to z_fac
ag::Var straight_through(const ag::Var& z_fac, const std::vector<double>& quantized_rows);

}  // namespace vqss::vq
