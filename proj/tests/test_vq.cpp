#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/rng.hpp"
#include "test_util.hpp"
#include "vq/vq.hpp"

using namespace vqss;

namespace {

std::vector<double> unit_vec(core::Rng& rng, int dim = vq::kCodeDim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

vq::Codebook random_codebook(int n, uint64_t seed) {
  core::Rng rng(seed);
  vq::Codebook cb;
  cb.n = n;
  cb.dim = vq::kCodeDim;
  cb.entries.resize(static_cast<size_t>(n) * cb.dim);
  for (int i = 0; i < n; ++i) {
    const auto v = unit_vec(rng);
    std::copy(v.begin(), v.end(), cb.entries.begin() + i * cb.dim);
  }
  cb.ema_cluster_size.assign(n, 1.0);
  cb.ema_embed_sum.assign(cb.entries.begin(), cb.entries.end());
  return cb;
}

}  // namespace

TEST_CASE("quantize picks an exact entry with zero commitment") {
  auto cb = random_codebook(16, 1);
  std::vector<double> z(cb.entry(3).begin(), cb.entry(3).end());
  const auto r = vq::quantize(z, cb);
  CHECK(r.code_index == 3);
  CHECK(r.commitment == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.quantized == std::vector<double>(cb.entry(3).begin(), cb.entry(3).end()));
}

TEST_CASE("quantize two-entry toy matches the exhaustive cosine oracle") {
  vq::Codebook cb;
  cb.n = 2;
  cb.dim = vq::kCodeDim;
  cb.entries.assign(2 * vq::kCodeDim, 0.0);
  const double norm = std::sqrt(0.9 * 0.9 + 0.1 * 0.1);
  cb.entries[0] = 0.9 / norm;
  cb.entries[1] = 0.1 / norm;
  cb.entries[vq::kCodeDim] = -1.0;
  cb.ema_cluster_size.assign(2, 1.0);
  cb.ema_embed_sum = cb.entries;

  std::vector<double> z(vq::kCodeDim, 0.0);
  z[0] = 1.0;
  CHECK(vq::quantize(z, cb).code_index == 0);
}

TEST_CASE("quantize agrees with exhaustive argmax on 1000 random inputs") {
  auto cb = random_codebook(16, 2);
  core::Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto z = unit_vec(rng);
    const auto r = vq::quantize(z, cb);
    // oracle: exhaustive cosine comparison, lowest index wins ties
    int best = 0;
    double best_sim = -2.0;
    for (int i = 0; i < cb.n; ++i) {
      double sim = 0.0;
      for (int d = 0; d < cb.dim; ++d) sim += z[d] * cb.entries[i * cb.dim + d];
      if (sim > best_sim) {
        best_sim = sim;
        best = i;
      }
    }
    REQUIRE(r.code_index == best);
    // unit vectors: ||z - q||^2 = 2 - 2 cos
    CHECK(r.commitment == doctest::Approx(2.0 - 2.0 * best_sim).epsilon(1e-6));
  }
}

TEST_CASE("quantize is idempotent on its own output") {
  auto cb = random_codebook(16, 4);
  core::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = vq::quantize(unit_vec(rng), cb);
    const auto r2 = vq::quantize(r.quantized, cb);
    CHECK(r2.code_index == r.code_index);
    CHECK(r2.commitment == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("quantize ties break toward the lowest index") {
  vq::Codebook cb;
  cb.n = 3;
  cb.dim = vq::kCodeDim;
  cb.entries.assign(3 * vq::kCodeDim, 0.0);
  cb.entries[0 * vq::kCodeDim + 0] = 1.0;  // duplicate of entry 2
  cb.entries[1 * vq::kCodeDim + 1] = 1.0;
  cb.entries[2 * vq::kCodeDim + 0] = 1.0;
  cb.ema_cluster_size.assign(3, 1.0);
  cb.ema_embed_sum = cb.entries;
  std::vector<double> z(vq::kCodeDim, 0.0);
  z[0] = 1.0;
  CHECK(vq::quantize(z, cb).code_index == 0);
}

TEST_CASE("kmeans on n distinct points returns a permutation of them") {
  core::Rng data_rng(6);
  const int n = 16;
  std::vector<double> batch;
  std::vector<std::vector<double>> points;
  for (int i = 0; i < n; ++i) {
    points.push_back(unit_vec(data_rng));
    batch.insert(batch.end(), points.back().begin(), points.back().end());
  }
  core::Rng rng(7);
  const auto cb = vq::kmeans_init(batch, n, n, 10, rng);
  // every point appears as some centroid
  for (const auto& pt : points) {
    double best = -2.0;
    for (int i = 0; i < n; ++i) {
      double sim = 0.0;
      for (int d = 0; d < vq::kCodeDim; ++d) sim += pt[d] * cb.entries[i * vq::kCodeDim + d];
      best = std::max(best, sim);
    }
    CHECK(best == doctest::Approx(1.0).epsilon(1e-6));
  }
  // init assignment covers every code once
  for (int i = 0; i < n; ++i) CHECK(cb.ema_cluster_size[i] == doctest::Approx(1.0));
}

TEST_CASE("kmeans recovers two tight antipodal clusters") {
  core::Rng rng(8);
  std::vector<double> base(vq::kCodeDim, 0.0);
  base[0] = 0.8;
  base[1] = 0.6;
  std::vector<double> batch;
  std::vector<double> mean_a(vq::kCodeDim, 0.0), mean_b(vq::kCodeDim, 0.0);
  const int per = 32;
  for (int i = 0; i < 2 * per; ++i) {
    std::vector<double> v(vq::kCodeDim);
    const double sign = i < per ? 1.0 : -1.0;
    double norm = 0.0;
    for (int d = 0; d < vq::kCodeDim; ++d) {
      v[d] = sign * base[d] + 1e-3 * rng.normal();
      norm += v[d] * v[d];
    }
    norm = std::sqrt(norm);
    for (int d = 0; d < vq::kCodeDim; ++d) {
      v[d] /= norm;
      (i < per ? mean_a : mean_b)[d] += v[d] / per;
    }
    batch.insert(batch.end(), v.begin(), v.end());
  }
  core::Rng krng(9);
  const auto cb = vq::kmeans_init(batch, 2 * per, 2, 10, krng);
  auto angular = [](std::span<const double> a, const std::vector<double>& b) {
    double dot = 0.0, nb = 0.0;
    for (size_t d = 0; d < a.size(); ++d) {
      dot += a[d] * b[d];
      nb += b[d] * b[d];
    }
    return std::acos(std::min(1.0, std::abs(dot / std::sqrt(nb))));
  };
  // each centroid sits within 1e-3 rad of one of the cluster means
  for (int i = 0; i < 2; ++i) {
    const double da = angular(cb.entry(i), mean_a);
    const double db = angular(cb.entry(i), mean_b);
    CHECK(std::min(da, db) < 1e-3);
  }
}

TEST_CASE("kmeans is deterministic given a seed and rejects small batches") {
  core::Rng data_rng(10);
  std::vector<double> batch;
  for (int i = 0; i < 24; ++i) {
    const auto v = unit_vec(data_rng);
    batch.insert(batch.end(), v.begin(), v.end());
  }
  core::Rng r1(11), r2(11);
  const auto a = vq::kmeans_init(batch, 24, 8, 10, r1);
  const auto b = vq::kmeans_init(batch, 24, 8, 10, r2);
  CHECK(a.entries == b.entries);
  CHECK(a.ema_cluster_size == b.ema_cluster_size);
  core::Rng r3(12);
  CHECK_THROWS(vq::kmeans_init(batch, 24, 32, 10, r3));
}

TEST_CASE("ema_update with empty assignments leaves entry directions unchanged") {
  auto cb = random_codebook(8, 13);
  const auto before = cb.entries;
  std::vector<double> counts(8, 0.0), sums(8 * vq::kCodeDim, 0.0);
  vq::ema_update(cb, counts, sums);
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(cb.entries[i] == doctest::Approx(before[i]).epsilon(1e-7));
}

TEST_CASE("repeated constant updates converge per the geometric series") {
  auto cb = random_codebook(1, 14);
  const double n_target = 3.0;
  std::vector<double> s_target(vq::kCodeDim);
  core::Rng rng(15);
  for (auto& x : s_target) x = rng.normal();

  const double size0 = cb.ema_cluster_size[0];
  const auto sum0 = cb.ema_embed_sum;
  const int steps = 100;
  std::vector<double> counts{n_target};
  for (int i = 0; i < steps; ++i) vq::ema_update(cb, counts, s_target);

  // closed form: decay^k * x0 + (1 - decay^k) * target
  const double dk = std::pow(0.99, steps);
  CHECK(cb.ema_cluster_size[0] ==
        doctest::Approx(dk * size0 + (1.0 - dk) * n_target).epsilon(1e-9));
  for (int d = 0; d < vq::kCodeDim; ++d)
    CHECK(cb.ema_embed_sum[d] ==
          doctest::Approx(dk * sum0[d] + (1.0 - dk) * s_target[d]).epsilon(1e-9));
}

TEST_CASE("100 random ema steps match an independent scalar oracle elementwise") {
  const int n = 16;
  auto cb = random_codebook(n, 16);
  // oracle state: plain scalar recurrences tracked independently
  std::vector<double> o_size = cb.ema_cluster_size;
  std::vector<double> o_sum = cb.ema_embed_sum;
  core::Rng rng(17);
  for (int step = 0; step < 100; ++step) {
    std::vector<double> counts(n), sums(static_cast<size_t>(n) * vq::kCodeDim);
    for (auto& c : counts) c = static_cast<double>(rng.uniform_int(5));
    for (auto& s : sums) s = rng.normal();
    vq::ema_update(cb, counts, sums);
    for (int i = 0; i < n; ++i) {
      o_size[i] = 0.99 * o_size[i] + 0.01 * counts[i];
      for (int d = 0; d < vq::kCodeDim; ++d) {
        const size_t idx = static_cast<size_t>(i) * vq::kCodeDim + d;
        o_sum[idx] = 0.99 * o_sum[idx] + 0.01 * sums[idx];
      }
    }
    for (int i = 0; i < n; ++i)
      REQUIRE(cb.ema_cluster_size[i] == doctest::Approx(o_size[i]).epsilon(1e-9));
    for (size_t idx = 0; idx < o_sum.size(); ++idx)
      REQUIRE(cb.ema_embed_sum[idx] == doctest::Approx(o_sum[idx]).epsilon(1e-9));
    // entries stay unit length
    for (int i = 0; i < n; ++i) {
      double norm = 0.0;
      for (int d = 0; d < vq::kCodeDim; ++d) {
        const double e = cb.entries[i * vq::kCodeDim + d];
        norm += e * e;
      }
      REQUIRE(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("entries stay unit norm through 1000 random updates") {
  const int n = 16;
  auto cb = random_codebook(n, 18);
  core::Rng rng(19);
  for (int step = 0; step < 1000; ++step) {
    std::vector<double> counts(n), sums(static_cast<size_t>(n) * vq::kCodeDim);
    for (auto& c : counts) c = static_cast<double>(rng.uniform_int(4));
    for (auto& s : sums) s = rng.normal();
    vq::ema_update(cb, counts, sums);
  }
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int d = 0; d < vq::kCodeDim; ++d) {
      const double e = cb.entries[i * vq::kCodeDim + d];
      norm += e * e;
    }
    CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
  }
  CHECK(cb.step == 1000);
}

TEST_CASE("usage stats: degenerate, uniform, and 4-of-16 cases") {
  auto cb = random_codebook(16, 20);
  std::vector<int64_t> counts(16, 0);
  counts[5] = 42;
  CHECK(vq::usage_stats(cb, counts).perplexity == doctest::Approx(1.0));
  CHECK(vq::usage_stats(cb, counts).active_codes == 1);

  std::fill(counts.begin(), counts.end(), 3);
  CHECK(vq::usage_stats(cb, counts).perplexity == doctest::Approx(16.0).epsilon(1e-9));

  std::fill(counts.begin(), counts.end(), 0);
  for (int i = 0; i < 4; ++i) counts[i * 4] = 7;
  const auto s = vq::usage_stats(cb, counts);
  CHECK(s.perplexity == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(s.active_codes == 4);

  std::fill(counts.begin(), counts.end(), 0);
  CHECK_THROWS(vq::usage_stats(cb, counts));
}

TEST_CASE("projection emits unit rows and is scale invariant") {
  core::Rng rng(21);
  vq::CodeProjection proj(512, rng);
  const auto z = testutil::random_vec(512, 22, -3.0, 3.0);
  const auto a = proj.apply_plain(z);
  double norm = 0.0;
  for (double x : a) norm += x * x;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<double> z2(z);
  for (auto& x : z2) x *= 2.0;
  const auto b = proj.apply_plain(z2);
  for (int d = 0; d < vq::kCodeDim; ++d) CHECK(a[d] == doctest::Approx(b[d]).epsilon(1e-9));

  // full pipeline scale invariance: same code either way
  auto cb = random_codebook(16, 23);
  CHECK(vq::quantize(a, cb).code_index == vq::quantize(b, cb).code_index);
}

TEST_CASE("identity-weighted projection copies the leading dimensions") {
  core::Rng rng(24);
  vq::CodeProjection proj(512, rng);
  // overwrite with an identity slice on the first 8 inputs
  auto& w = proj.weight.mutable_val();
  std::fill(w.begin(), w.end(), 0.0);
  for (int d = 0; d < vq::kCodeDim; ++d) w[d * 512 + d] = 1.0;
  std::vector<double> z(512, 0.0);
  z[0] = 3.0;
  z[1] = -4.0;
  const auto out = proj.apply_plain(z);
  CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(out[1] == doctest::Approx(-0.8).epsilon(1e-6));
  for (int d = 2; d < vq::kCodeDim; ++d) CHECK(out[d] == doctest::Approx(0.0));
}

TEST_CASE("straight-through forwards the quantized value with identity gradient") {
  auto cb = random_codebook(4, 25);
  const auto z = testutil::random_vec(2 * vq::kCodeDim, 26);
  auto zp = ag::Var::param({2, vq::kCodeDim}, z);
  std::vector<double> rows(2 * vq::kCodeDim);
  for (int b = 0; b < 2; ++b) {
    const auto r = vq::quantize({z.data() + b * vq::kCodeDim, vq::kCodeDim}, cb);
    std::copy(r.quantized.begin(), r.quantized.end(), rows.begin() + b * vq::kCodeDim);
  }
  auto st = vq::straight_through(zp, rows);
  for (size_t i = 0; i < rows.size(); ++i) CHECK(st.val()[i] == doctest::Approx(rows[i]));

  ag::backward(ag::sum(st));
  for (size_t i = 0; i < rows.size(); ++i) CHECK(zp.grad()[i] == doctest::Approx(1.0));
}

TEST_CASE("smooth head through the straight-through value gets the gradient at q") {
  auto cb = random_codebook(4, 27);
  const auto z0 = testutil::random_vec(vq::kCodeDim, 28);
  const auto r = vq::quantize(z0, cb);

  const auto probe = testutil::random_vec(vq::kCodeDim, 29);
  auto zp = ag::Var::param({1, vq::kCodeDim}, z0);
  auto st = vq::straight_through(zp, r.quantized);
  ag::backward(ag::sum(ag::mul(ag::square(st), ag::Var::constant({1, vq::kCodeDim}, probe))));
  // the head is smooth; its analytic gradient at q must pass through unchanged
  for (int d = 0; d < vq::kCodeDim; ++d) {
    const double expected = 2.0 * r.quantized[d] * probe[d];
    CHECK(zp.grad()[d] == doctest::Approx(expected).epsilon(1e-3));
  }
}
