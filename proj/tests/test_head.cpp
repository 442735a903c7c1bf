#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "stdn/head.hpp"
#include "test_util.hpp"

using namespace stdn;
using stdn::test::random_tensor;

TEST_CASE("SE modulation matches the gate formula") {
  Rng rng(1);
  ParameterStore store;
  const SeBlock se = add_se_block(store, "se", 8, 4, rng);
  CHECK(se.squeeze.weight.shape() == Shape{8, 2});
  const Tensor z = random_tensor({3, 8}, rng);
  const Tensor out = se_modulate(ag::constant(z), se).value();
  for (int b = 0; b < 3; ++b) {
    oracle::Vec x(8);
    for (int j = 0; j < 8; ++j) x[j] = z.at({b, j});
    oracle::Vec h = oracle::affine(x, se.squeeze.weight.value(), se.squeeze.bias.value());
    for (double& v : h) v = std::max(0.0, v);
    const oracle::Vec g = oracle::affine(h, se.excite.weight.value(), se.excite.bias.value());
    for (int j = 0; j < 8; ++j) {
      const double gate = 1.0 / (1.0 + std::exp(-g[j]));
      CHECK(gate > 0.0);
      CHECK(gate < 1.0);
      CHECK(out.at({b, j}) == doctest::Approx(gate * x[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggregation sums modulated scales") {
  Rng rng(2);
  ParameterStore store;
  std::vector<SeBlock> blocks;
  std::vector<ag::Var> feats;
  for (int m = 0; m < 3; ++m) {
    blocks.push_back(add_se_block(store, "se" + std::to_string(m), 4, 2, rng));
    feats.push_back(ag::constant(random_tensor({2, 4}, rng)));
  }
  const Tensor got = aggregate(feats, blocks, 3).value();
  Tensor expect({2, 4}, 0.0);
  for (int m = 0; m < 3; ++m) {
    const Tensor t = se_modulate(feats[m], blocks[m]).value();
    for (std::size_t i = 0; i < t.size(); ++i) expect[i] += t[i];
  }
  CHECK(max_abs_diff(got, expect) < 1e-12);

  const Tensor plain = aggregate(feats, {}, 3).value();
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain[i] == doctest::Approx(feats[0].value()[i] + feats[1].value()[i] + feats[2].value()[i]));
  }
  CHECK_THROWS_AS(aggregate(feats, blocks, 4), std::invalid_argument);
  std::vector<SeBlock> two(blocks.begin(), blocks.begin() + 2);
  CHECK_THROWS_AS(aggregate(feats, two, 3), std::invalid_argument);
}

TEST_CASE("total loss is the weighted sum of its terms") {
  Rng rng(3);
  const ag::Var logits = ag::constant(random_tensor({2, 3}, rng));
  const std::vector<int> labels{1, 2};
  const ag::Var emin = ag::constant(Tensor(Shape{}, std::vector<double>{0.7}));
  const ag::Var emax = ag::constant(Tensor(Shape{}, std::vector<double>{-1.1}));
  const ag::Var rel = ag::constant(Tensor(Shape{}, std::vector<double>{2.3}));
  const TotalLoss t = total_loss(logits, labels, emin, emax, rel, 0.1, 0.5);
  const double cls = ag::cross_entropy(logits, labels).value()[0];
  CHECK(t.values.cls == doctest::Approx(cls));
  CHECK(t.total.value()[0] == doctest::Approx(cls + 0.1 * 0.7 + 0.1 * -1.1 + 0.5 * 2.3).epsilon(1e-12));
  CHECK(t.values.total == doctest::Approx(t.total.value()[0]));
  CHECK(t.values.emin == doctest::Approx(0.7));
  CHECK(t.values.rel == doctest::Approx(2.3));

  const TotalLoss only = total_loss(logits, labels, {}, {}, {}, 0.1, 0.5);
  CHECK(only.values.total == doctest::Approx(cls));
  CHECK(only.values.emin == 0.0);

  const TotalLoss off = total_loss(logits, labels, emin, emax, rel, 0.0, 0.0);
  CHECK(off.values.total == doctest::Approx(cls));
  CHECK_THROWS_AS(total_loss(logits, labels, emin, emax, rel, -0.1, 0.5), std::invalid_argument);
}

TEST_CASE("loss breakdown serialises every field") {
  LossBreakdown b{1.0, 2.0, 3.0, -4.0, 5.0, 0.1, 0.5};
  nlohmann::json j = b;
  for (const char* key : {"total", "cls", "emin", "emax", "rel", "lambda_ent", "lambda_rel"}) CHECK(j.contains(key));
  CHECK(j["emax"].get<double>() == -4.0);
  CHECK(describe(b).find("rel=") != std::string::npos);
}
