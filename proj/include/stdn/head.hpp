#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdn/autograd.hpp"
#include "stdn/params.hpp"

namespace stdn {

/// Squeeze-and-excitation gate on a feature vector:
/// out = sigmoid(W2 relu(W1 z + b1) + b2) * z.
struct SeBlock {
  Projection squeeze;
  Projection excite;
};

SeBlock add_se_block(ParameterStore& store, const std::string& prefix, int dim, int reduction, Rng& rng);

ag::Var se_gate(const ag::Var& features, const SeBlock& block);
ag::Var se_modulate(const ag::Var& features, const SeBlock& block);

/// Sum over scales of the modulated temporal features. With `blocks` empty the
/// features are summed unmodulated. Throws if the feature count differs from
/// expected_scales or from blocks.size().
ag::Var aggregate(std::span<const ag::Var> temporal_features, std::span<const SeBlock> blocks, int expected_scales);

ag::Var classify(const ag::Var& features, const Projection& classifier);

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double emin = 0.0;
  double emax = 0.0;
  double rel = 0.0;
  double lambda_ent = 0.0;
  double lambda_rel = 0.0;
};

void to_json(nlohmann::json& j, const LossBreakdown& b);
std::string describe(const LossBreakdown& b);

struct TotalLoss {
  ag::Var total;
  LossBreakdown values;
};

/// L = L_cls + lambda_ent L_emin + lambda_ent L_emax + lambda_rel L_rel.
/// emin, emax and rel may be undefined for variants that lack them; they
/// then count as zero.
TotalLoss total_loss(const ag::Var& logits, std::span<const int> labels, const ag::Var& emin, const ag::Var& emax,
                     const ag::Var& rel, double lambda_ent, double lambda_rel);

}  // namespace stdn
