#include "stdn/grouping.hpp"

#include <algorithm>
#include <stdexcept>

namespace stdn {

int anchor_hidden_width(int feature_dim) { return std::max(feature_dim / 4, 16); }

AnchorNetwork add_anchor_network(ParameterStore& store, const std::string& prefix, int feature_dim, int groups,
                                 Rng& rng) {
  AnchorNetwork net;
  const int hidden = anchor_hidden_width(feature_dim);
  net.conv1 = add_conv(store, prefix + ".conv1", 3, feature_dim, hidden, rng);
  net.conv2 = add_conv(store, prefix + ".conv2", 1, hidden, groups, rng);
  return net;
}

ag::Var flatten_positions(const ag::Var& maps) {
  const Shape& s = maps.shape();
  if (s.size() != 4) throw std::invalid_argument("expected feature maps [F,H,W,D], got " + shape_str(s));
  return ag::reshape(maps, {s[0], s[1] * s[2], s[3]});
}

ag::Var anchor_weights(const ag::Var& maps, const AnchorNetwork& net) {
  ag::Var h = ag::relu(ag::conv2d(maps, net.conv1.weight, net.conv1.bias, 1, 1));
  ag::Var logits = ag::conv2d(h, net.conv2.weight, net.conv2.bias, 1, 0);
  return ag::softmax(flatten_positions(logits), 1);
}

ag::Var combine_anchors(const ag::Var& points, const ag::Var& weights) { return ag::bmm(weights, points, true); }

ag::Var generate_anchors(const ag::Var& maps, const AnchorNetwork& net) {
  return combine_anchors(flatten_positions(maps), anchor_weights(maps, net));
}

ag::Var assign_groups(const ag::Var& points, const ag::Var& anchors, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("assign_groups: temperature must be > 0");
  return ag::softmax(ag::scale(ag::pairwise_distance(points, anchors), -1.0 / tau), 2);
}

ag::Var aggregate_groups(const ag::Var& points, const ag::Var& assignments) {
  ag::Var weighted = ag::bmm(assignments, points, true);                   // [F, K, D]
  ag::Var mass = ag::add_scalar(ag::sum_axis(assignments, 1), kMassEps);  // [F, K]
  return ag::div_prefix(weighted, mass);
}

ag::Var entropy_min_loss(const ag::Var& assignments) {
  const Shape& s = assignments.shape();
  const double rows = static_cast<double>(s.at(0)) * s.at(1);
  ag::Var plogp = ag::mul(assignments, ag::log_eps(assignments, kLogEps));
  return ag::scale(ag::sum(plogp), -1.0 / rows);
}

ag::Var mean_assignment(const ag::Var& assignments) { return ag::mean_axis(assignments, 1); }

ag::Var entropy_max_loss(const ag::Var& assignments) {
  ag::Var pbar = mean_assignment(assignments);
  const double frames = static_cast<double>(assignments.shape().at(0));
  return ag::scale(ag::sum(ag::mul(pbar, ag::log_eps(pbar, kLogEps))), 1.0 / frames);
}

GroupingResult spatial_grouping(const ag::Var& maps, const AnchorNetwork& net, double tau) {
  GroupingResult r;
  ag::Var points = flatten_positions(maps);
  r.anchors = combine_anchors(points, anchor_weights(maps, net));
  r.assignments = assign_groups(points, r.anchors, tau);
  r.group_features = aggregate_groups(points, r.assignments);
  r.mean_assignment = mean_assignment(r.assignments);
  return r;
}

}  // namespace stdn
