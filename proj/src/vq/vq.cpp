#include "vq/vq.hpp"

#include <cmath>
#include <stdexcept>

namespace vqss::vq {

namespace {

void normalize_row(double* row, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) s += row[d] * row[d];
  const double inv = 1.0 / (std::sqrt(s) + kNormEps);
  for (int d = 0; d < dim; ++d) row[d] *= inv;
}

}  // namespace

QuantizeResult quantize(std::span<const double> z_fac, const Codebook& cb) {
  if (static_cast<int>(z_fac.size()) != cb.dim)
    throw std::invalid_argument("quantize: input dimension mismatch");
  int best = 0;
  double best_sim = -2.0;
  for (int i = 0; i < cb.n; ++i) {
    double sim = 0.0;
    for (int d = 0; d < cb.dim; ++d) sim += z_fac[d] * cb.entries[i * cb.dim + d];
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  QuantizeResult r;
  r.code_index = best;
  r.quantized.assign(cb.entries.begin() + best * cb.dim, cb.entries.begin() + (best + 1) * cb.dim);
  double c = 0.0;
  for (int d = 0; d < cb.dim; ++d) {
    const double diff = z_fac[d] - r.quantized[d];
    c += diff * diff;
  }
  r.commitment = c;
  return r;
}

Codebook kmeans_init(const std::vector<double>& batch, int64_t batch_size, int n, int iters,
                     core::Rng& rng) {
  const int dim = kCodeDim;
  if (batch_size * dim != static_cast<int64_t>(batch.size()))
    throw std::invalid_argument("kmeans_init: batch buffer size mismatch");
  if (batch_size < n) throw std::invalid_argument("kmeans_init: batch smaller than codebook");

  Codebook cb;
  cb.n = n;
  cb.dim = dim;
  cb.entries.assign(static_cast<size_t>(n) * dim, 0.0);
  cb.ema_cluster_size.assign(n, 0.0);
  cb.ema_embed_sum.assign(static_cast<size_t>(n) * dim, 0.0);

  // seed centroids from distinct batch points
  std::vector<int64_t> perm(batch_size);
  for (int64_t i = 0; i < batch_size; ++i) perm[i] = i;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.uniform_int(batch_size - i));
    std::swap(perm[i], perm[j]);
  }
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) cb.entries[i * dim + d] = batch[perm[i] * dim + d];
  for (int i = 0; i < n; ++i) normalize_row(cb.entries.data() + i * dim, dim);

  std::vector<int> assign(batch_size, 0);
  for (int it = 0; it < iters; ++it) {
    for (int64_t b = 0; b < batch_size; ++b)
      assign[b] = quantize({batch.data() + b * dim, (size_t)dim}, cb).code_index;
    std::vector<double> sums(static_cast<size_t>(n) * dim, 0.0);
    std::vector<int64_t> counts(n, 0);
    for (int64_t b = 0; b < batch_size; ++b) {
      counts[assign[b]]++;
      for (int d = 0; d < dim; ++d) sums[assign[b] * dim + d] += batch[b * dim + d];
    }
    for (int i = 0; i < n; ++i) {
      if (counts[i] == 0) {
        const int64_t j = static_cast<int64_t>(rng.uniform_int(batch_size));
        for (int d = 0; d < dim; ++d) cb.entries[i * dim + d] = batch[j * dim + d];
      } else {
        for (int d = 0; d < dim; ++d) cb.entries[i * dim + d] = sums[i * dim + d];
      }
      normalize_row(cb.entries.data() + i * dim, dim);
    }
  }

  // final assignment seeds the EMA state
  for (int64_t b = 0; b < batch_size; ++b) {
    const int a = quantize({batch.data() + b * dim, (size_t)dim}, cb).code_index;
    cb.ema_cluster_size[a] += 1.0;
    for (int d = 0; d < dim; ++d) cb.ema_embed_sum[a * dim + d] += batch[b * dim + d];
  }
  return cb;
}

void ema_update(Codebook& cb, std::span<const double> counts, std::span<const double> sums) {
  if (static_cast<int>(counts.size()) != cb.n ||
      static_cast<int>(sums.size()) != cb.n * cb.dim)
    throw std::invalid_argument("ema_update: statistics size mismatch");
  const double d = cb.decay;
  for (int i = 0; i < cb.n; ++i) {
    cb.ema_cluster_size[i] = d * cb.ema_cluster_size[i] + (1.0 - d) * counts[i];
    for (int k = 0; k < cb.dim; ++k)
      cb.ema_embed_sum[i * cb.dim + k] =
          d * cb.ema_embed_sum[i * cb.dim + k] + (1.0 - d) * sums[i * cb.dim + k];
    double norm2 = 0.0;
    for (int k = 0; k < cb.dim; ++k) {
      const double e = cb.ema_embed_sum[i * cb.dim + k];
      norm2 += e * e;
    }
    if (norm2 > 1e-24) {
      // direction of sum/(size + eps); the positive denominator drops out
      // under normalization, so entries stay put when nothing is assigned
      const double denom = cb.ema_cluster_size[i] + kLaplaceEps;
      std::vector<double> scaled(cb.dim);
      for (int k = 0; k < cb.dim; ++k) scaled[k] = cb.ema_embed_sum[i * cb.dim + k] / denom;
      normalize_row(scaled.data(), cb.dim);
      for (int k = 0; k < cb.dim; ++k) cb.entries[i * cb.dim + k] = scaled[k];
    }
  }
  cb.step++;
}

UsageStats usage_stats(const Codebook& cb, std::span<const int64_t> assignment_counts) {
  if (static_cast<int>(assignment_counts.size()) != cb.n)
    throw std::invalid_argument("usage_stats: counts size mismatch");
  int64_t total = 0;
  for (int64_t c : assignment_counts) total += c;
  if (total <= 0) throw std::invalid_argument("usage_stats: empty assignment history");
  UsageStats s;
  double entropy = 0.0;
  for (int i = 0; i < cb.n; ++i) {
    if (assignment_counts[i] <= 0) continue;
    s.active_codes++;
    const double p = static_cast<double>(assignment_counts[i]) / static_cast<double>(total);
    entropy -= p * std::log(p);
  }
  s.perplexity = std::exp(entropy);
  return s;
}

CodeProjection::CodeProjection(int embed_dim, core::Rng& rng) {
  std::vector<double> w(static_cast<size_t>(kCodeDim) * embed_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  for (auto& x : w) x = scale * rng.normal();
  weight = ag::Var::param({kCodeDim, embed_dim}, std::move(w));
}

ag::Var CodeProjection::apply(const ag::Var& z) const {
  return ag::row_normalize(ag::linear(z, weight, ag::Var()), kNormEps);
}

std::vector<double> CodeProjection::apply_plain(std::span<const double> z) const {
  ag::NoGradGuard ng;
  auto zv = ag::Var::constant({1, static_cast<int64_t>(z.size())},
                              std::vector<double>(z.begin(), z.end()));
  return apply(zv).val();
}

ag::Var straight_through(const ag::Var& z_fac, const std::vector<double>& quantized_rows) {
  if (static_cast<int64_t>(quantized_rows.size()) != z_fac.size())
    throw std::invalid_argument("straight_through: shape mismatch");
  std::vector<double> delta(quantized_rows.size());
  for (size_t i = 0; i < delta.size(); ++i) delta[i] = quantized_rows[i] - z_fac.val()[i];
  return ag::add(z_fac, ag::Var::constant(z_fac.shape(), std::move(delta)));
}

}  // namespace vqss::vq
