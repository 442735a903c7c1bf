#pragma once

#include "stdn/config.hpp"
#include "stdn/model.hpp"
#include "test_util.hpp"

namespace stdn::test {

/// N=3, K=2, D=6, D_s=8, D_t=8, C=2 on 16x16 frames (2x2 feature maps).
inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.backbone.input_height = 16;
  m.backbone.input_width = 16;
  m.backbone.channels = {4, 4, 6, 6};
  m.backbone.strides = {2, 2, 2, 1};
  m.backbone.norm_groups = 2;
  m.n_segments = 3;
  m.groups = 2;
  m.num_classes = 2;
  m.spatial_dim = 8;
  m.temporal_dim = 8;
  m.relation_hidden = 6;
  m.se_reduction = 4;
  m.mixstyle.enabled = false;
  return m;
}

struct GroupError {
  std::string name;
  std::size_t count = 0;
  double error = 0.0;
  double scale = 0.0;  // larger of the two gradient norms
};

/// Central-difference check of d(total loss)/d(theta) for every parameter
/// tensor of the model on a fixed batch.
inline std::vector<GroupError> model_gradient_check(const ModelConfig& cfg, std::uint64_t seed, double lambda_ent,
                                                    double lambda_rel, double h = 1e-5) {
  StdnModel model(cfg, seed);
  Rng rng(seed + 1);
  const int batch = 2;
  const Tensor frames = random_tensor(
      {batch * cfg.n_segments, cfg.backbone.input_height, cfg.backbone.input_width, 3}, rng, -1.5, 1.5);
  std::vector<int> labels;
  for (int b = 0; b < batch; ++b) labels.push_back(b % cfg.num_classes);
  auto loss = [&] {
    Rng r(0);
    ForwardOutput out = model.forward(frames, labels, true, &r);
    return total_loss(out.logits, labels, out.emin, out.emax, out.rel, lambda_ent, lambda_rel);
  };
  model.params().zero_grad();
  ag::backward(loss().total);
  std::vector<GroupError> out;
  for (const auto& e : model.params().entries()) {
    const Tensor analytic = e.var.grad().empty() ? Tensor(e.var.shape()) : e.var.grad();
    const Tensor numeric = numeric_grad(
        e.var,
        [&] {
          ag::NoGradGuard ng;
          return loss().values.total;
        },
        h);
    out.push_back({e.name, analytic.size(), relative_error(analytic, numeric), std::max(norm2(analytic), norm2(numeric))});
  }
  return out;
}

}  // namespace stdn::test
