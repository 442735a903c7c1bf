#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stdn/autograd.hpp"
#include "stdn/params.hpp"

namespace stdn {

/// Toy per-frame CNN: each stage is conv3x3 -> group norm -> ReLU.
struct BackboneConfig {
  int input_height = 64;
  int input_width = 64;
  int in_channels = 3;
  bool coord_channels = true;  // append normalised (x, y) planes to the input
  std::vector<int> channels{16, 32, 64, 64};
  std::vector<int> strides{2, 2, 2, 1};
  int norm_groups = 4;

  int feature_dim() const { return channels.back(); }
  int output_height() const;
  int output_width() const;
  void validate() const;
};

struct BackboneStage {
  Projection conv;
  ag::Var gamma;
  ag::Var beta;
};

struct BackboneParams {
  std::vector<BackboneStage> stages;
};

BackboneParams add_backbone(ParameterStore& store, const BackboneConfig& cfg, Rng& rng);

/// Called after each stage with the 1-based stage number; returns the
/// (possibly transformed) activations fed to the next stage.
using StageHook = std::function<ag::Var(int stage, const ag::Var& activations)>;

/// frames [F, H, W, in_channels] -> feature maps [F, H', W', D]. The same
/// parameters are applied to every frame.
ag::Var extract_features(const ag::Var& frames, const BackboneParams& params, const BackboneConfig& cfg,
                         const StageHook& hook = {});

}  // namespace stdn
