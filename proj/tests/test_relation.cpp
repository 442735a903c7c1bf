#include <doctest.h>

#include <algorithm>
#include <set>

#include "oracles.hpp"
#include "stdn/relation.hpp"
#include "test_util.hpp"

using namespace stdn;
using stdn::test::random_tensor;

namespace {

std::vector<oracle::Vec> rows_of(const Tensor& t, int b) {
  const int n = t.dim(1), e = t.dim(2);
  std::vector<oracle::Vec> rows(n, oracle::Vec(e));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < e; ++c) rows[i][c] = t.at({b, i, c});
  return rows;
}

}  // namespace

TEST_CASE("binomial coefficients") {
  CHECK(choose(5, 2) == 10);
  CHECK(choose(4, 4) == 1);
  CHECK(choose(4, 0) == 1);
  CHECK(choose(3, 5) == 0);
  CHECK(choose(30, 15) == 155117520ULL);
}

TEST_CASE("subset enumeration matches the bitmask oracle") {
  for (int n = 1; n <= 8; ++n)
    for (int k = 1; k <= n; ++k) {
      auto got = enumerate_subsets(n, k);
      auto expect = oracle::subsets_by_mask(n, k);
      std::sort(expect.begin(), expect.end());
      CHECK(got == expect);  // lexicographic
      CHECK(got.size() == oracle::binomial(n, k));
    }
  CHECK(enumerate_subsets(4, 2) ==
        std::vector<IndexSet>{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
}

TEST_CASE("subset selection enumerates under the cap and samples above it") {
  Rng rng(1);
  CHECK(select_subsets(5, 2, 16, nullptr).size() == 10);
  const auto picked = select_subsets(10, 4, 16, &rng);
  CHECK(picked.size() == 16);
  CHECK(std::set<IndexSet>(picked.begin(), picked.end()).size() == 16);
  CHECK(std::is_sorted(picked.begin(), picked.end()));
  for (const IndexSet& s : picked) {
    CHECK(s.size() == 4);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  }
  Rng a(9), b(9);
  CHECK(select_subsets(10, 4, 16, &a) == select_subsets(10, 4, 16, &b));
  CHECK_THROWS_AS(select_subsets(10, 4, 16, nullptr), std::invalid_argument);
}

TEST_CASE("spatial relation features match the subset oracle") {
  Rng rng(2);
  ParameterStore store;
  const int k = 4, d = 3, ds = 5;
  const Tensor groups = random_tensor({2, k, d}, rng);
  for (int l = 2; l <= k; ++l) {
    const Projection p = add_projection(store, "s" + std::to_string(l), l * d, ds, rng);
    const Tensor r = spatial_relation(ag::constant(groups), l, p, 64, nullptr).value();
    REQUIRE(r.shape() == Shape{2, ds});
    for (int f = 0; f < 2; ++f) {
      const oracle::Vec o = oracle::subset_mean(rows_of(groups, f), l, p.weight.value(), p.bias.value());
      for (int j = 0; j < ds; ++j) CHECK(r.at({f, j}) == doctest::Approx(o[j]).epsilon(1e-12));
    }
  }
  const Projection p = add_projection(store, "bad", d, ds, rng);
  CHECK_THROWS_AS(spatial_relation(ag::constant(groups), 1, p, 64, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(spatial_relation(ag::constant(groups), 5, p, 64, nullptr), std::invalid_argument);
}

TEST_CASE("temporal relation features match the ordered-tuple oracle") {
  Rng rng(3);
  ParameterStore store;
  const int n = 5, e = 4, dt = 6;
  const Tensor frames = random_tensor({3, n, e}, rng);
  for (int m = 2; m <= n; ++m) {
    const Projection p = add_projection(store, "t" + std::to_string(m), m * e, dt, rng);
    const Tensor r = temporal_relation(ag::constant(frames), m, p, 64, nullptr).value();
    for (int b = 0; b < 3; ++b) {
      const oracle::Vec o = oracle::subset_mean(rows_of(frames, b), m, p.weight.value(), p.bias.value());
      for (int j = 0; j < dt; ++j) CHECK(r.at({b, j}) == doctest::Approx(o[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("temporal relations depend on frame order") {
  Rng rng(4);
  ParameterStore store;
  const Tensor frames = random_tensor({1, 3, 2}, rng);
  Tensor reversed = frames;
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 2; ++c) reversed.at({0, i, c}) = frames.at({0, 2 - i, c});
  const Projection p = add_projection(store, "t", 4, 3, rng);
  const Tensor a = temporal_relation(ag::constant(frames), 2, p, 16, nullptr).value();
  const Tensor b = temporal_relation(ag::constant(reversed), 2, p, 16, nullptr).value();
  CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("global feature is a pooled 1x1 projection") {
  Rng rng(5);
  ParameterStore store;
  const Tensor maps = random_tensor({2, 2, 3, 4}, rng);
  const Projection p = add_projection(store, "g", 4, 3, rng);
  const Tensor g = global_feature(ag::constant(maps), p).value();
  for (int f = 0; f < 2; ++f) {
    oracle::Vec acc(3, 0.0);
    for (const auto& row : oracle::frame_rows(maps, f)) {
      const oracle::Vec y = oracle::affine(row, p.weight.value(), p.bias.value());
      for (int j = 0; j < 3; ++j) acc[j] += y[j] / 6.0;
    }
    for (int j = 0; j < 3; ++j) CHECK(g.at({f, j}) == doctest::Approx(acc[j]).epsilon(1e-12));
  }
}

TEST_CASE("relation labels form a bijection onto (N-1)*C classes") {
  const int n = 5, c = 12;
  std::vector<int> hits((n - 1) * c, 0);
  for (int y = 0; y < c; ++y) {
    const std::vector<int> labels = relation_labels(y, n, c);
    REQUIRE(labels.size() == static_cast<std::size_t>(n - 1));
    for (int m = 2; m <= n; ++m) {
      const int r = relation_label(y, m, n);
      CHECK(r == labels[m - 2]);
      REQUIRE(r >= 0);
      REQUIRE(r < (n - 1) * c);
      ++hits[r];
    }
  }
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK(hits.size() == 48);
  CHECK_THROWS_AS(relation_labels(12, n, c), std::invalid_argument);
  CHECK_THROWS_AS(relation_labels(-1, n, c), std::invalid_argument);
}

TEST_CASE("relation discrimination loss matches the per-scale cross-entropy oracle") {
  Rng rng(6);
  ParameterStore store;
  const int n = 4, c = 3, dt = 5, batch = 2;
  const RelationClassifier clf = add_relation_classifier(store, "rc", dt, 7, (n - 1) * c, rng);
  std::vector<ag::Var> feats;
  for (int m = 2; m <= n; ++m) feats.push_back(ag::constant(random_tensor({batch, dt}, rng)));
  const std::vector<int> labels{2, 0};
  const double got = relation_discrimination_loss(feats, labels, clf, c).value()[0];
  double expect = 0.0;
  for (int b = 0; b < batch; ++b)
    for (int m = 2; m <= n; ++m) {
      oracle::Vec z(dt);
      for (int j = 0; j < dt; ++j) z[j] = feats[m - 2].value().at({b, j});
      oracle::Vec h = oracle::affine(z, clf.hidden.weight.value(), clf.hidden.bias.value());
      for (double& v : h) v = std::max(0.0, v);
      const oracle::Vec logits = oracle::affine(h, clf.out.weight.value(), clf.out.bias.value());
      expect += oracle::cross_entropy(logits, labels[b] * (n - 1) + (m - 2));
    }
  expect /= batch * (n - 1);
  CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  const std::vector<int> bad{3, 0};
  CHECK_THROWS_AS(relation_discrimination_loss(feats, bad, clf, c), std::invalid_argument);
}

TEST_CASE("relation modules pass finite-difference checks") {
  Rng rng(7);
  ParameterStore store;
  const Projection sp = add_projection(store, "s", 6, 4, rng);
  const Projection tp = add_projection(store, "t", 8, 3, rng);
  const ag::Var groups = ag::parameter(random_tensor({2, 3, 2}, rng));
  const ag::Var frames = ag::parameter(random_tensor({2, 3, 4}, rng));
  CHECK(stdn::test::check_op({groups, sp.weight, sp.bias},
                             [&](const auto& v) { return spatial_relation(v[0], 3, {v[1], v[2]}, 16, nullptr); }) < 1e-7);
  CHECK(stdn::test::check_op({frames, tp.weight, tp.bias},
                             [&](const auto& v) { return temporal_relation(v[0], 2, {v[1], v[2]}, 16, nullptr); }) < 1e-7);
}
