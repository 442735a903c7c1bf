#pragma once

#include <vector>

#include "stdn/autograd.hpp"
#include "stdn/rng.hpp"

namespace stdn {

/// Feature-statistics mixing between videos. Statistics are pooled over
/// time and space for each channel of each instance.
struct MixStyleConfig {
  bool enabled = true;
  double prob = 0.5;
  double alpha = 0.1;
  int stage = 2;  // backbone stage whose output is mixed
  double eps = 1e-6;
};

/// Per-instance, per-channel statistics; index [b * channels + c].
struct StyleStats {
  int batch = 0;
  int channels = 0;
  std::vector<double> mean;
  std::vector<double> std;  // population standard deviation
};

/// features viewed as [batch, N*H*W, D]; the leading dim of the tensor is
/// batch*N frames.
StyleStats style_stats(const Tensor& features, int batch);

struct MixPlan {
  bool apply = false;
  std::vector<double> lambdas;  // weight on each instance's own statistics
  std::vector<int> partners;
};

/// Draws whether to mix this batch, the Beta(alpha, alpha) weights and a
/// shuffled partner for each instance.
MixPlan draw_mix_plan(int batch, const MixStyleConfig& cfg, Rng& rng);

/// Applies the plan to features [batch*N, H, W, D]. Identity outside training,
/// when the plan does not apply, for a batch of one, and for any instance whose
/// weight is exactly 1 or whose partner is itself.
ag::Var video_mixstyle(const ag::Var& features, int batch, const MixPlan& plan, bool training, double eps = 1e-6);

}  // namespace stdn
