#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stdn/augment.hpp"
#include "test_util.hpp"

using namespace stdn;
using stdn::test::random_tensor;

namespace {

MixPlan fixed_plan(std::vector<double> lambdas, std::vector<int> partners) {
  MixPlan p;
  p.apply = true;
  p.lambdas = std::move(lambdas);
  p.partners = std::move(partners);
  return p;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("mixstyle is the exact identity in evaluation mode") {
  Rng rng(1);
  const Tensor x = random_tensor({4 * 3, 5, 5, 6}, rng, -2.0, 3.0);
  const MixPlan plan = fixed_plan({0.3, 0.2, 0.9, 0.5}, {1, 0, 3, 2});
  CHECK(bit_equal(video_mixstyle(ag::constant(x), 4, plan, false).value(), x));
  MixPlan off = plan;
  off.apply = false;
  CHECK(bit_equal(video_mixstyle(ag::constant(x), 4, off, true).value(), x));
}

TEST_CASE("mixstyle leaves a batch of one untouched") {
  Rng rng(2);
  const Tensor x = random_tensor({3, 4, 4, 2}, rng);
  const MixPlan plan = fixed_plan({0.1}, {0});
  CHECK(bit_equal(video_mixstyle(ag::constant(x), 1, plan, true).value(), x));
}

TEST_CASE("instances mixed with themselves or with weight one are copied exactly") {
  Rng rng(3);
  const int n = 2, per = n * 3 * 3 * 4;
  const Tensor x = random_tensor({3 * n, 3, 3, 4}, rng, -1.0, 4.0);
  const MixPlan plan = fixed_plan({0.4, 1.0, 0.5}, {0, 2, 1});
  const Tensor y = video_mixstyle(ag::constant(x), 3, plan, true).value();
  CHECK(std::memcmp(y.data(), x.data(), per * sizeof(double)) == 0);
  CHECK(std::memcmp(y.data() + per, x.data() + per, per * sizeof(double)) == 0);
  CHECK(std::memcmp(y.data() + 2 * per, x.data() + 2 * per, per * sizeof(double)) != 0);
}

TEST_CASE("lambda zero transfers the partner's statistics") {
  Rng rng(4);
  Tensor x = random_tensor({2 * 5, 4, 4, 3}, rng);
  // Give the second video a very different style.
  const std::size_t half = x.size() / 2;
  for (std::size_t i = half; i < x.size(); ++i) x[i] = 3.0 * x[i] + 7.0;
  const MixPlan plan = fixed_plan({0.0, 0.0}, {1, 0});
  const Tensor y = video_mixstyle(ag::constant(x), 2, plan, true).value();
  const StyleStats before = style_stats(x, 2);
  const StyleStats after = style_stats(y, 2);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(after.mean[c] - before.mean[3 + c]) < 1e-5);
    CHECK(std::abs(after.std[c] - before.std[3 + c]) < 1e-5);
    CHECK(std::abs(after.mean[3 + c] - before.mean[c]) < 1e-5);
    CHECK(std::abs(after.std[3 + c] - before.std[c]) < 1e-5);
  }
}

TEST_CASE("mixed statistics interpolate between the pair") {
  Rng rng(5);
  Tensor x = random_tensor({2 * 2, 3, 3, 2}, rng);
  for (std::size_t i = x.size() / 2; i < x.size(); ++i) x[i] = 2.0 * x[i] - 5.0;
  const double lam = 0.25;
  const MixPlan plan = fixed_plan({lam, 1.0}, {1, 0});
  const StyleStats before = style_stats(x, 2);
  const StyleStats after = style_stats(video_mixstyle(ag::constant(x), 2, plan, true).value(), 2);
  for (int c = 0; c < 2; ++c) {
    CHECK(after.mean[c] == doctest::Approx(lam * before.mean[c] + (1 - lam) * before.mean[2 + c]).epsilon(1e-9));
    const double sig = lam * (before.std[c] + 1e-6) + (1 - lam) * (before.std[2 + c] + 1e-6);
    CHECK(after.std[c] == doctest::Approx(sig * before.std[c] / (before.std[c] + 1e-6)).epsilon(1e-9));
  }
}

TEST_CASE("style statistics are pooled over space and time") {
  // Constant over space, varying over time: per-frame std is zero but the
  // video-level std is not.
  const int frames = 4;
  Tensor x({frames, 3, 3, 1});
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < 9; ++i) x[static_cast<std::size_t>(t) * 9 + i] = static_cast<double>(t);
  const StyleStats video = style_stats(x, 1);
  CHECK(video.mean[0] == doctest::Approx(1.5));
  CHECK(video.std[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));
  CHECK(video.std[0] > 0.0);
  const StyleStats per_frame = style_stats(x, frames);
  for (int t = 0; t < frames; ++t) CHECK(per_frame.std[t] == 0.0);
}

TEST_CASE("mix plans are seeded and validated") {
  MixStyleConfig cfg;
  Rng a(7), b(7);
  const MixPlan p = draw_mix_plan(6, cfg, a);
  const MixPlan q = draw_mix_plan(6, cfg, b);
  CHECK(p.apply == q.apply);
  CHECK(p.lambdas == q.lambdas);
  CHECK(p.partners == q.partners);
  std::vector<int> sorted = p.partners;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
  for (double l : p.lambdas) {
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
  MixStyleConfig bad = cfg;
  bad.prob = 0.0;
  CHECK_THROWS_AS(draw_mix_plan(2, bad, a), std::invalid_argument);
  bad = cfg;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(draw_mix_plan(2, bad, a), std::invalid_argument);
}

TEST_CASE("mixstyle application frequency follows its probability") {
  MixStyleConfig cfg;
  cfg.prob = 0.5;
  Rng rng(11);
  int applied = 0;
  for (int i = 0; i < 1000; ++i) applied += draw_mix_plan(4, cfg, rng).apply;
  // Binomial(1000, 0.5): 99% interval is 500 +/- 2.576 * 15.8.
  CHECK(applied > 459);
  CHECK(applied < 541);
}

TEST_CASE("mixstyle backward treats statistics as constants") {
  Rng rng(12);
  const ag::Var x = ag::parameter(random_tensor({2 * 2, 2, 2, 3}, rng));
  const MixPlan plan = fixed_plan({0.3, 0.6}, {1, 0});
  const Tensor w = random_tensor({4, 2, 2, 3}, rng);
  ag::backward(ag::sum(ag::mul(video_mixstyle(x, 2, plan, true), ag::constant(w))));
  // d out / d x is the per-instance, per-channel gain.
  const StyleStats st = style_stats(x.value(), 2);
  for (int b = 0; b < 2; ++b) {
    const int partner = 1 - b;
    const double lam = plan.lambdas[b];
    for (int c = 0; c < 3; ++c) {
      const double own = st.std[b * 3 + c] + 1e-6;
      const double gain = (lam * own + (1 - lam) * (st.std[partner * 3 + c] + 1e-6)) / own;
      for (int i = 0; i < 8; ++i) {
        const std::size_t k = (static_cast<std::size_t>(b) * 8 + i) * 3 + c;
        CHECK(x.grad()[k] == doctest::Approx(w[k] * gain).epsilon(1e-12));
      }
    }
  }
}
