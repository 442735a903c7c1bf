#include "stdn/model.hpp"

#include <stdexcept>

namespace stdn {

void ModelConfig::validate() const {
  backbone.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid model config: " + m); };
  if (n_segments < 1) fail("n_segments must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (spatial_dim < 1 || temporal_dim < 1 || relation_hidden < 1) fail("feature widths must be positive");
  if (subset_cap < 1) fail("subset_cap must be >= 1");
  if (grouping) {
    if (groups < 1) fail("groups must be >= 1");
    if (backbone.output_height() * backbone.output_width() < groups) fail("feature map has fewer positions than groups");
  }
  if (spatial_relations && !grouping) fail("spatial relations need spatial grouping");
  if (spatial_relations && groups < 2) fail("spatial relations need at least two groups");
  if (temporal_relations && n_segments < 2) fail("temporal relations need at least two segments");
  if (se_aggregation && !temporal_relations) fail("SE aggregation needs temporal relations");
  if (mixstyle.enabled && (mixstyle.stage < 1 || mixstyle.stage > static_cast<int>(backbone.channels.size()))) {
    fail("mixstyle.stage must name a backbone stage");
  }
}

int ModelConfig::frame_feature_dim() const {
  int blocks = 1;  // global feature
  if (grouping) blocks += spatial_relations ? groups - 1 : groups;
  return blocks * spatial_dim;
}

int ModelConfig::classifier_input_dim() const {
  if (backbone_only()) return backbone.feature_dim();
  return temporal_relations ? temporal_dim : frame_feature_dim();
}

StdnModel::StdnModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, {0x1a17}));
  const int d = cfg_.backbone.feature_dim();
  backbone_ = add_backbone(store_, cfg_.backbone, rng);
  if (!cfg_.backbone_only()) {
    if (cfg_.grouping) {
      anchor_net_ = add_anchor_network(store_, "grouping.anchor", d, cfg_.groups, rng);
      if (cfg_.spatial_relations) {
        for (int l = 2; l <= cfg_.groups; ++l) {
          spatial_proj_.push_back(
              add_projection(store_, "relation.spatial.l" + std::to_string(l), l * d, cfg_.spatial_dim, rng));
        }
      } else {
        group_proj_ = add_projection(store_, "relation.group", d, cfg_.spatial_dim, rng);
      }
    }
    global_proj_ = add_projection(store_, "relation.global", d, cfg_.spatial_dim, rng);
    if (cfg_.temporal_relations) {
      const int e = cfg_.frame_feature_dim();
      for (int m = 2; m <= cfg_.n_segments; ++m) {
        temporal_proj_.push_back(
            add_projection(store_, "relation.temporal.m" + std::to_string(m), m * e, cfg_.temporal_dim, rng));
      }
      relation_clf_ = add_relation_classifier(store_, "relation.classifier", cfg_.temporal_dim, cfg_.relation_hidden,
                                              (cfg_.n_segments - 1) * cfg_.num_classes, rng);
      if (cfg_.se_aggregation) {
        for (int m = 2; m <= cfg_.n_segments; ++m) {
          se_blocks_.push_back(
              add_se_block(store_, "head.se.m" + std::to_string(m), cfg_.temporal_dim, cfg_.se_reduction, rng));
        }
      }
    }
  }
  classifier_ = add_projection(store_, "head.classifier", cfg_.classifier_input_dim(), cfg_.num_classes, rng);
}

ForwardOutput StdnModel::forward(const Tensor& frames, std::span<const int> labels, bool training, Rng* rng) const {
  const int n = cfg_.n_segments;
  if (frames.rank() != 4 || frames.dim(0) % n != 0) {
    throw std::invalid_argument("forward: frames must be [B*N, H, W, C] with N=" + std::to_string(n) + ", got " +
                                shape_str(frames.shape()));
  }
  const int batch = frames.dim(0) / n;
  if (!labels.empty() && labels.size() != static_cast<std::size_t>(batch)) {
    throw std::invalid_argument("forward: label count does not match batch");
  }

  StageHook hook;
  MixPlan plan;
  if (training && cfg_.mixstyle.enabled) {
    if (!rng) throw std::invalid_argument("forward: MixStyle in training mode needs a generator");
    plan = draw_mix_plan(batch, cfg_.mixstyle, *rng);
    const int stage = cfg_.mixstyle.stage;
    const double eps = cfg_.mixstyle.eps;
    hook = [&plan, batch, stage, eps](int s, const ag::Var& x) {
      return s == stage ? video_mixstyle(x, batch, plan, true, eps) : x;
    };
  }

  ForwardOutput out;
  out.feature_maps = extract_features(ag::constant(frames), backbone_, cfg_.backbone, hook);
  const Shape& ms = out.feature_maps.shape();
  const int d = ms[3];

  if (cfg_.backbone_only()) {
    ag::Var pooled = ag::mean_axis(ag::reshape(out.feature_maps, {batch, n * ms[1] * ms[2], d}), 1);
    out.logits = classify(pooled, classifier_);
    return out;
  }

  std::vector<ag::Var> blocks;
  if (cfg_.grouping) {
    out.grouping = spatial_grouping(out.feature_maps, anchor_net_, cfg_.tau);
    out.emin = entropy_min_loss(out.grouping->assignments);
    out.emax = entropy_max_loss(out.grouping->assignments);
    if (cfg_.spatial_relations) {
      for (int l = 2; l <= cfg_.groups; ++l) {
        blocks.push_back(spatial_relation(out.grouping->group_features, l, spatial_proj_[l - 2], cfg_.subset_cap, rng));
      }
    } else {
      const int frames_total = ms[0];
      ag::Var rows = ag::reshape(out.grouping->group_features, {frames_total * cfg_.groups, d});
      ag::Var proj = ag::linear(rows, group_proj_.weight, group_proj_.bias);
      blocks.push_back(ag::reshape(proj, {frames_total, cfg_.groups * cfg_.spatial_dim}));
    }
  }
  blocks.push_back(global_feature(out.feature_maps, global_proj_));
  ag::Var frame = ag::concat(blocks, 1);
  out.frame_features = ag::reshape(frame, {batch, n, cfg_.frame_feature_dim()});

  if (cfg_.temporal_relations) {
    for (int m = 2; m <= n; ++m) {
      out.temporal.push_back(temporal_relation(out.frame_features, m, temporal_proj_[m - 2], cfg_.subset_cap, rng));
    }
    if (!labels.empty()) {
      out.rel = relation_discrimination_loss(out.temporal, labels, relation_clf_, cfg_.num_classes);
    }
    out.logits = classify(aggregate(out.temporal, se_blocks_, n - 1), classifier_);
  } else {
    out.logits = classify(ag::mean_axis(out.frame_features, 1), classifier_);
  }
  return out;
}

}  // namespace stdn
