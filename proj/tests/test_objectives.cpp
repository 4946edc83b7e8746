#include <doctest.h>

#include <cmath>

#include "objectives/objectives.hpp"
#include "test_util.hpp"

using namespace vqss;
using ag::Var;
using testutil::random_vec;

namespace {

dsp::Waveform wave_of(std::vector<double> samples) {
  return dsp::Waveform(std::move(samples), 44100.0);
}

}  // namespace

TEST_CASE("reconstruction loss: zero on identical inputs, including silence") {
  const auto p = dsp::StftParams::hann(512, 128);
  const std::vector<int> scales{256};
  const auto a = wave_of(random_vec(4096, 1, -0.8, 0.8));
  CHECK(objectives::reconstruction_loss(a, a, p, scales) == 0.0);
  const auto z = wave_of(std::vector<double>(4096, 0.0));
  CHECK(objectives::reconstruction_loss(z, z, p, scales) == 0.0);
  auto b = a;
  b.samples.pop_back();
  CHECK_THROWS(objectives::reconstruction_loss(a, b, p, scales));
}

TEST_CASE("reconstruction loss equals an independently assembled sum of its terms") {
  const auto p = dsp::StftParams::hann(512, 128);
  const std::vector<int> scales{256, 64};
  dsp::Waveform sine;
  sine.samples.resize(4096);
  for (int t = 0; t < 4096; ++t) sine.samples[t] = std::sin(2.0 * M_PI * 440.0 * t / 44100.0);
  const auto zeros = wave_of(std::vector<double>(4096, 0.0));

  // single-pass independent assembly from the dsp primitives
  const auto la = dsp::log_magnitude(dsp::stft(zeros, p));
  const auto lb = dsp::log_magnitude(dsp::stft(sine, p));
  double l1 = 0.0;
  for (size_t i = 0; i < la.v.size(); ++i) l1 += std::abs(la.v[i] - lb.v[i]);
  l1 /= static_cast<double>(la.v.size());
  double expected = l1;
  for (int scale : scales) {
    const auto ps = dsp::StftParams::hann(scale, scale / 4);
    const auto ma = dsp::magnitude(dsp::stft(zeros, ps));
    const auto mb = dsp::magnitude(dsp::stft(sine, ps));
    double lm = 0.0, ll = 0.0;
    for (size_t i = 0; i < ma.v.size(); ++i) {
      lm += std::abs(ma.v[i] - mb.v[i]);
      ll += std::abs(std::log(ma.v[i] + dsp::kLogEps) - std::log(mb.v[i] + dsp::kLogEps));
    }
    expected += (lm + ll) / static_cast<double>(ma.frames);
  }
  CHECK(objectives::reconstruction_loss(zeros, sine, p, scales) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("reconstruction loss is symmetric") {
  const auto p = dsp::StftParams::hann(512, 128);
  const std::vector<int> scales{256};
  const auto a = wave_of(random_vec(4096, 2, -0.8, 0.8));
  const auto b = wave_of(random_vec(4096, 3, -0.8, 0.8));
  CHECK(objectives::reconstruction_loss(a, b, p, scales) ==
        doctest::Approx(objectives::reconstruction_loss(b, a, p, scales)).epsilon(1e-9));
}

TEST_CASE("hinge discriminator loss hand values") {
  CHECK(objectives::adversarial_d_loss({1.0}, {-1.0}) == doctest::Approx(0.0));
  CHECK(objectives::adversarial_d_loss({0.0}, {0.0}) == doctest::Approx(2.0));
  CHECK(objectives::adversarial_d_loss({2.0}, {-3.0}) == doctest::Approx(0.0));
  CHECK(objectives::adversarial_d_loss({0.5, 1.5}, {-0.5, -2.0}) ==
        doctest::Approx(0.25 + 0.25));
}

TEST_CASE("generator hinge loss hand values and monotonicity") {
  CHECK(objectives::adversarial_g_loss({0.0}) == doctest::Approx(0.0));
  CHECK(objectives::adversarial_g_loss({1.0, 3.0}) == doctest::Approx(-2.0));
  core::Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const double a = rng.uniform(-3.0, 3.0);
    const double d = rng.uniform(0.01, 2.0);
    CHECK(objectives::adversarial_g_loss({a + d}) < objectives::adversarial_g_loss({a}));
  }
}

TEST_CASE("total generator loss carries the published weights") {
  CHECK(objectives::total_generator_loss(1.0, 2.0, 0.01) == doctest::Approx(7.0));
  CHECK(objectives::total_generator_loss(0.0, 0.0, 0.0) == doctest::Approx(0.0));
  // affine in each part
  const double base = objectives::total_generator_loss(0.3, 1.0, 0.2);
  CHECK(objectives::total_generator_loss(0.3, 2.0, 0.2) == doctest::Approx(base + 2.5));
  CHECK(objectives::total_generator_loss(0.3, 1.0, 1.2) == doctest::Approx(base + 100.0));
  CHECK(objectives::total_generator_loss(1.3, 1.0, 0.2) == doctest::Approx(base + 1.0));
}

TEST_CASE("differentiable hinge losses match the scalar forms and finite differences") {
  const auto real = random_vec(4, 5, -2.0, 2.0);
  const auto fake = random_vec(4, 6, -2.0, 2.0);
  {
    ag::NoGradGuard ng;
    auto d = objectives::adversarial_d_loss_ag(Var::constant({4, 1}, real),
                                               Var::constant({4, 1}, fake));
    CHECK(d.item() == doctest::Approx(objectives::adversarial_d_loss(real, fake)).epsilon(1e-12));
    auto g = objectives::adversarial_g_loss_ag(Var::constant({4, 1}, fake));
    CHECK(g.item() == doctest::Approx(objectives::adversarial_g_loss(fake)).epsilon(1e-12));
  }

  // gradients, away from the hinge kinks (|1 - s| and |1 + s| > 1e-3)
  CHECK(testutil::check_param_grad(
            [&](const Var& p) {
              return objectives::adversarial_d_loss_ag(p, Var::constant({4, 1}, fake));
            },
            {4, 1}, real) < 1e-3);
  CHECK(testutil::check_param_grad(
            [&](const Var& p) {
              return objectives::adversarial_d_loss_ag(Var::constant({4, 1}, real), p);
            },
            {4, 1}, fake) < 1e-3);
  CHECK(testutil::check_param_grad(
            [&](const Var& p) { return objectives::adversarial_g_loss_ag(p); }, {4, 1}, fake) <
        1e-3);
}

TEST_CASE("differentiable reconstruction loss matches the pure value and finite differences") {
  const auto p = dsp::StftParams::hann(256, 64);
  const std::vector<int> scales{128};
  const int64_t T = 1024;
  const auto pred = random_vec(T, 7, -0.5, 0.5);
  const auto target = random_vec(T, 8, -0.5, 0.5);

  {
    ag::NoGradGuard ng;
    auto loss = objectives::reconstruction_loss_ag(Var::constant({1, T}, pred), target, p, scales);
    const auto pure = objectives::reconstruction_loss(wave_of(pred), wave_of(target), p, scales);
    CHECK(loss.item() == doctest::Approx(pure).epsilon(1e-12));
  }

  CHECK(testutil::check_param_grad(
            [&](const Var& q) {
              return objectives::reconstruction_loss_ag(q, target, p, scales);
            },
            {1, T}, pred, 1e-6) < 1e-3);
}

TEST_CASE("commitment loss gradient and batch mean") {
  const auto z = random_vec(2 * 8, 9);
  const auto q = random_vec(2 * 8, 10);
  {
    ag::NoGradGuard ng;
    auto c = objectives::commitment_loss_ag(Var::constant({2, 8}, z), q);
    double expected = 0.0;
    for (size_t i = 0; i < z.size(); ++i) expected += (z[i] - q[i]) * (z[i] - q[i]);
    CHECK(c.item() == doctest::Approx(expected / 2.0).epsilon(1e-12));
  }
  CHECK(testutil::check_param_grad(
            [&](const Var& p) { return objectives::commitment_loss_ag(p, q); }, {2, 8}, z) <
        1e-6);
}

TEST_CASE("loss breakdown identity holds to 1e-6") {
  const double adv_g = -0.37, rec = 1.234, vq = 0.0042;
  const double total = objectives::total_generator_loss(adv_g, rec, vq);
  CHECK(std::abs(total - (adv_g + 2.5 * rec + 100.0 * vq)) < 1e-6);
}
