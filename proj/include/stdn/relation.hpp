#pragma once

#include <span>
#include <vector>

#include "stdn/autograd.hpp"
#include "stdn/params.hpp"

// Multi-scale relation modelling: expectations of linear projections over
// size-l subsets of a frame's group features and over time-ordered size-m
// tuples of frame features, plus the (class, scale) discrimination loss.
namespace stdn {

using IndexSet = std::vector<int>;

/// Binomial coefficient C(n, k); saturates at the largest uint64 value.
std::uint64_t choose(int n, int k);

/// Every ascending k-subset of {0..n-1} in lexicographic order.
std::vector<IndexSet> enumerate_subsets(int n, int k);

/// All subsets when C(n,k) <= cap; otherwise `cap` distinct subsets drawn
/// uniformly without replacement from rng (which must then be non-null).
/// Subsets are ascending; the result is in lexicographic order.
std::vector<IndexSet> select_subsets(int n, int k, int cap, Rng* rng);

/// Mean over subsets of proj(concat of the selected rows).
/// items [B, n, E] -> [B, out].
ag::Var subset_expectation(const ag::Var& items, std::span<const IndexSet> subsets, const Projection& proj);

/// group_features [F, K, D] -> R^s_scale, [F, D_s].
ag::Var spatial_relation(const ag::Var& group_features, int scale, const Projection& proj, int subset_cap, Rng* rng);

/// 1x1 convolution D -> D_s followed by spatial average pooling.
/// maps [F, H, W, D] -> [F, D_s]. proj.weight is [D, D_s].
ag::Var global_feature(const ag::Var& maps, const Projection& proj);

/// [R^s_2, ..., R^s_K, G] concatenated along features: [F, K * D_s].
ag::Var build_frame_feature(std::span<const ag::Var> spatial_relations, const ag::Var& global);

/// frame_features [B, N, E] -> R^t_scale, [B, D_t]. Tuples keep time order.
ag::Var temporal_relation(const ag::Var& frame_features, int scale, const Projection& proj, int subset_cap, Rng* rng);

/// y * (N - 1) + (m - 2).
int relation_label(int y, int scale, int n_segments);

/// Labels for scales m = 2..N. Throws on y outside [0, C).
std::vector<int> relation_labels(int y, int n_segments, int num_classes);

/// MLP: linear -> ReLU -> linear to (N-1)*C logits.
struct RelationClassifier {
  Projection hidden;
  Projection out;
};

RelationClassifier add_relation_classifier(ParameterStore& store, const std::string& prefix, int in, int hidden,
                                           int classes, Rng& rng);

ag::Var relation_logits(const ag::Var& features, const RelationClassifier& clf);

/// Mean over scales (and the batch) of the cross-entropy of F_rel(z~_m)
/// against the relation labels. temporal_features[i] is scale m = i + 2,
/// each [B, D_t].
ag::Var relation_discrimination_loss(std::span<const ag::Var> temporal_features, std::span<const int> labels,
                                     const RelationClassifier& clf, int num_classes);

/// Stacks per-scale [B, D_t] features into [B, S, D_t].
ag::Var stack_scales(std::span<const ag::Var> per_scale);

}  // namespace stdn
