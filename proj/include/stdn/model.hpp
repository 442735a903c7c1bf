#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stdn/augment.hpp"
#include "stdn/backbone.hpp"
#include "stdn/grouping.hpp"
#include "stdn/head.hpp"
#include "stdn/relation.hpp"

namespace stdn {

/// Architecture hyperparameters. The four switches select the ablation
/// variants; all on (plus MixStyle) is the full network.
struct ModelConfig {
  BackboneConfig backbone;
  int n_segments = 5;    // N
  int num_classes = 4;   // C
  int groups = 4;        // K
  double tau = 0.5;
  int spatial_dim = 192;   // D_s
  int temporal_dim = 256;  // D_t
  int relation_hidden = 512;
  int se_reduction = 4;
  int subset_cap = 16;

  bool grouping = true;
  bool spatial_relations = true;
  bool temporal_relations = true;
  bool se_aggregation = true;
  MixStyleConfig mixstyle;

  void validate() const;
  /// Width of the per-frame feature (K * D_s for the full network).
  int frame_feature_dim() const;
  int classifier_input_dim() const;
  bool backbone_only() const { return !grouping && !temporal_relations; }
};

struct ForwardOutput {
  ag::Var logits;        // [B, C]
  ag::Var feature_maps;  // [B*N, H, W, D]
  std::optional<GroupingResult> grouping;
  ag::Var frame_features;         // [B, N, E]
  std::vector<ag::Var> temporal;  // z~_m for m = 2..N, each [B, D_t]
  ag::Var emin;
  ag::Var emax;
  ag::Var rel;
};

class StdnModel {
 public:
  StdnModel(const ModelConfig& cfg, std::uint64_t init_seed);

  // Parameter Vars alias the store, so copies would share weights.
  StdnModel(const StdnModel&) = delete;
  StdnModel& operator=(const StdnModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  /// frames [B*N, H, W, 3], grouped by video. With labels non-empty and
  /// temporal relations on, the relation loss is computed as well. `rng`
  /// drives MixStyle (training only) and subset sampling beyond subset_cap.
  ForwardOutput forward(const Tensor& frames, std::span<const int> labels, bool training, Rng* rng) const;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  BackboneParams backbone_;
  AnchorNetwork anchor_net_;
  std::vector<Projection> spatial_proj_;  // scales 2..K
  Projection group_proj_;                 // grouping without spatial relations
  Projection global_proj_;
  std::vector<Projection> temporal_proj_;  // scales 2..N
  RelationClassifier relation_clf_;
  std::vector<SeBlock> se_blocks_;
  Projection classifier_;
};

}  // namespace stdn
