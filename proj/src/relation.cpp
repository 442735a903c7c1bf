#include "stdn/relation.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <stdexcept>

namespace stdn {

std::uint64_t choose(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) {
    const std::uint64_t num = static_cast<std::uint64_t>(n - k + i);
    if (r > std::numeric_limits<std::uint64_t>::max() / num) return std::numeric_limits<std::uint64_t>::max();
    r = r * num / static_cast<std::uint64_t>(i);
  }
  return r;
}

std::vector<IndexSet> enumerate_subsets(int n, int k) {
  if (k < 1 || k > n) throw std::invalid_argument("enumerate_subsets: need 1 <= k <= n");
  std::vector<IndexSet> out;
  IndexSet cur(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) cur[i] = i;
  while (true) {
    out.push_back(cur);
    int i = k - 1;
    while (i >= 0 && cur[i] == n - k + i) --i;
    if (i < 0) break;
    ++cur[i];
    for (int j = i + 1; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

std::vector<IndexSet> select_subsets(int n, int k, int cap, Rng* rng) {
  if (cap < 1) throw std::invalid_argument("select_subsets: cap must be >= 1");
  const std::uint64_t total = choose(n, k);
  if (total == 0) throw std::invalid_argument("select_subsets: need 1 <= k <= n");
  if (total <= static_cast<std::uint64_t>(cap)) return enumerate_subsets(n, k);
  if (!rng) throw std::invalid_argument("select_subsets: sampling requires a generator");

  std::vector<IndexSet> out;
  if (total <= 100000) {
    std::vector<IndexSet> all = enumerate_subsets(n, k);
    // Partial Fisher-Yates: the first `cap` slots are a uniform draw without replacement.
    for (int i = 0; i < cap; ++i) {
      const int j = uniform_int(*rng, i, static_cast<int>(all.size()) - 1);
      std::swap(all[i], all[j]);
    }
    out.assign(all.begin(), all.begin() + cap);
  } else {
    std::set<IndexSet> seen;
    std::vector<int> pool(static_cast<std::size_t>(n));
    while (static_cast<int>(seen.size()) < cap) {
      for (int i = 0; i < n; ++i) pool[i] = i;
      for (int i = 0; i < k; ++i) std::swap(pool[i], pool[uniform_int(*rng, i, n - 1)]);
      IndexSet s(pool.begin(), pool.begin() + k);
      std::sort(s.begin(), s.end());
      seen.insert(std::move(s));
    }
    out.assign(seen.begin(), seen.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ag::Var subset_expectation(const ag::Var& items, std::span<const IndexSet> subsets, const Projection& proj) {
  const Shape& s = items.shape();
  if (s.size() != 3) throw std::invalid_argument("subset_expectation: items must be [B, n, E]");
  if (subsets.empty()) throw std::invalid_argument("subset_expectation: no subsets");
  const int batch = s[0];
  const int width = static_cast<int>(subsets[0].size());
  std::vector<int> flat;
  for (const IndexSet& sub : subsets) {
    if (static_cast<int>(sub.size()) != width) throw std::invalid_argument("subset_expectation: ragged subsets");
    flat.insert(flat.end(), sub.begin(), sub.end());
  }
  const int count = static_cast<int>(subsets.size());
  ag::Var picked = ag::index_select(items, 1, flat);                 // [B, S*l, E]
  ag::Var rows = ag::reshape(picked, {batch * count, width * s[2]});  // [B*S, l*E]
  ag::Var projected = ag::linear(rows, proj.weight, proj.bias);       // [B*S, out]
  const int out = projected.shape()[1];
  return ag::mean_axis(ag::reshape(projected, {batch, count, out}), 1);
}

ag::Var spatial_relation(const ag::Var& group_features, int scale, const Projection& proj, int subset_cap, Rng* rng) {
  const int groups = group_features.shape().at(1);
  if (scale < 2 || scale > groups) {
    throw std::invalid_argument("spatial_relation: scale " + std::to_string(scale) + " outside [2, " +
                                std::to_string(groups) + "]");
  }
  const auto subsets = select_subsets(groups, scale, subset_cap, rng);
  return subset_expectation(group_features, subsets, proj);
}

ag::Var global_feature(const ag::Var& maps, const Projection& proj) {
  const Shape& s = maps.shape();
  if (s.size() != 4) throw std::invalid_argument("global_feature: maps must be [F,H,W,D]");
  ag::Var rows = ag::reshape(maps, {s[0] * s[1] * s[2], s[3]});
  ag::Var projected = ag::linear(rows, proj.weight, proj.bias);
  const int out = projected.shape()[1];
  return ag::mean_axis(ag::reshape(projected, {s[0], s[1] * s[2], out}), 1);
}

ag::Var build_frame_feature(std::span<const ag::Var> spatial_relations, const ag::Var& global) {
  std::vector<ag::Var> parts(spatial_relations.begin(), spatial_relations.end());
  parts.push_back(global);
  const int width = global.shape().at(1);
  for (const ag::Var& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != width) {
      throw std::invalid_argument("build_frame_feature: every block must be [F, D_s]");
    }
  }
  return ag::concat(parts, 1);
}

ag::Var temporal_relation(const ag::Var& frame_features, int scale, const Projection& proj, int subset_cap, Rng* rng) {
  const int n = frame_features.shape().at(1);
  if (scale < 2 || scale > n) {
    throw std::invalid_argument("temporal_relation: scale " + std::to_string(scale) + " outside [2, " +
                                std::to_string(n) + "]");
  }
  // Ascending index sets are exactly the time-ordered tuples n_1 < ... < n_m.
  const auto tuples = select_subsets(n, scale, subset_cap, rng);
  return subset_expectation(frame_features, tuples, proj);
}

int relation_label(int y, int scale, int n_segments) { return y * (n_segments - 1) + (scale - 2); }

std::vector<int> relation_labels(int y, int n_segments, int num_classes) {
  if (y < 0 || y >= num_classes) {
    throw std::invalid_argument("relation_labels: class " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
  }
  if (n_segments < 2) throw std::invalid_argument("relation_labels: need at least two segments");
  std::vector<int> out;
  for (int m = 2; m <= n_segments; ++m) out.push_back(relation_label(y, m, n_segments));
  return out;
}

RelationClassifier add_relation_classifier(ParameterStore& store, const std::string& prefix, int in, int hidden,
                                           int classes, Rng& rng) {
  RelationClassifier c;
  c.hidden = add_projection(store, prefix + ".hidden", in, hidden, rng);
  c.out = add_projection(store, prefix + ".out", hidden, classes, rng);
  return c;
}

ag::Var relation_logits(const ag::Var& features, const RelationClassifier& clf) {
  ag::Var h = ag::relu(ag::linear(features, clf.hidden.weight, clf.hidden.bias));
  return ag::linear(h, clf.out.weight, clf.out.bias);
}

ag::Var stack_scales(std::span<const ag::Var> per_scale) {
  if (per_scale.empty()) throw std::invalid_argument("stack_scales: no features");
  std::vector<ag::Var> parts;
  for (const ag::Var& v : per_scale) {
    const Shape& s = v.shape();
    if (s.size() != 2) throw std::invalid_argument("stack_scales: expected [B, D]");
    parts.push_back(ag::reshape(v, {s[0], 1, s[1]}));
  }
  return ag::concat(parts, 1);
}

ag::Var relation_discrimination_loss(std::span<const ag::Var> temporal_features, std::span<const int> labels,
                                     const RelationClassifier& clf, int num_classes) {
  const int scales = static_cast<int>(temporal_features.size());
  if (scales < 1) throw std::invalid_argument("relation loss: no temporal features");
  const int n_segments = scales + 1;
  ag::Var stacked = stack_scales(temporal_features);  // [B, S, D_t]
  const int batch = stacked.shape()[0];
  if (labels.size() != static_cast<std::size_t>(batch)) throw std::invalid_argument("relation loss: label count mismatch");
  std::vector<int> rel;
  rel.reserve(static_cast<std::size_t>(batch) * scales);
  for (int b = 0; b < batch; ++b) {
    for (int m = 2; m <= n_segments; ++m) {
      if (labels[b] < 0 || labels[b] >= num_classes) throw std::invalid_argument("relation loss: class out of range");
      rel.push_back(relation_label(labels[b], m, n_segments));
    }
  }
  ag::Var rows = ag::reshape(stacked, {batch * scales, stacked.shape()[2]});
  return ag::cross_entropy(relation_logits(rows, clf), rel);
}

}  // namespace stdn
