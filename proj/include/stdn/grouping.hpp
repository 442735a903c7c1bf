#pragma once

#include "stdn/autograd.hpp"
#include "stdn/params.hpp"

// Soft spatial grouping of per-frame feature maps around K anchors computed
// from the map itself, plus the two entropy regularisers on the assignments.
namespace stdn {

inline constexpr double kLogEps = 1e-8;
inline constexpr double kMassEps = 1e-6;

/// Two-layer convolutional weight network: 3x3 conv (D -> hidden) + ReLU,
/// then 1x1 conv (hidden -> K).
struct AnchorNetwork {
  Projection conv1;
  Projection conv2;
};

int anchor_hidden_width(int feature_dim);

AnchorNetwork add_anchor_network(ParameterStore& store, const std::string& prefix, int feature_dim, int groups,
                                 Rng& rng);

/// maps [F, H, W, D] -> per-group weights over the HW positions, [F, HW, K];
/// each column sums to one.
ag::Var anchor_weights(const ag::Var& maps, const AnchorNetwork& net);

/// Convex combinations of the spatial features: weights [F, HW, K],
/// points [F, HW, D] -> anchors [F, K, D].
ag::Var combine_anchors(const ag::Var& points, const ag::Var& weights);

/// maps [F, H, W, D] -> anchors [F, K, D].
ag::Var generate_anchors(const ag::Var& maps, const AnchorNetwork& net);

/// Softmax over groups of -||z_i - a_k|| / tau. points [F, HW, D],
/// anchors [F, K, D] -> assignments [F, HW, K]. Throws when tau <= 0.
ag::Var assign_groups(const ag::Var& points, const ag::Var& anchors, double tau);

/// Assignment-weighted means: [F, K, D]. The group mass gets kMassEps added.
ag::Var aggregate_groups(const ag::Var& points, const ag::Var& assignments);

/// Mean over frames and positions of the assignment entropy.
ag::Var entropy_min_loss(const ag::Var& assignments);

/// Mean over frames of sum_k pbar log pbar, the negative entropy of the mean
/// assignment.
ag::Var entropy_max_loss(const ag::Var& assignments);

/// pbar [F, K].
ag::Var mean_assignment(const ag::Var& assignments);

struct GroupingResult {
  ag::Var anchors;
  ag::Var assignments;
  ag::Var group_features;
  ag::Var mean_assignment;
};

/// Full module on maps [F, H, W, D].
GroupingResult spatial_grouping(const ag::Var& maps, const AnchorNetwork& net, double tau);

/// [F, H, W, D] -> [F, H*W, D].
ag::Var flatten_positions(const ag::Var& maps);

}  // namespace stdn
