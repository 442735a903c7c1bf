#include "stdn/head.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace stdn {

SeBlock add_se_block(ParameterStore& store, const std::string& prefix, int dim, int reduction, Rng& rng) {
  if (reduction < 1) throw std::invalid_argument("se block: reduction must be >= 1");
  SeBlock b;
  const int hidden = std::max(dim / reduction, 1);
  b.squeeze = add_projection(store, prefix + ".squeeze", dim, hidden, rng);
  b.excite = add_projection(store, prefix + ".excite", hidden, dim, rng);
  return b;
}

ag::Var se_gate(const ag::Var& features, const SeBlock& block) {
  ag::Var h = ag::relu(ag::linear(features, block.squeeze.weight, block.squeeze.bias));
  return ag::sigmoid(ag::linear(h, block.excite.weight, block.excite.bias));
}

ag::Var se_modulate(const ag::Var& features, const SeBlock& block) { return ag::mul(se_gate(features, block), features); }

ag::Var aggregate(std::span<const ag::Var> temporal_features, std::span<const SeBlock> blocks, int expected_scales) {
  if (static_cast<int>(temporal_features.size()) != expected_scales) {
    throw std::invalid_argument("aggregate: expected " + std::to_string(expected_scales) +
                                " temporal features, got " + std::to_string(temporal_features.size()));
  }
  if (!blocks.empty() && blocks.size() != temporal_features.size()) {
    throw std::invalid_argument("aggregate: one SE block per scale required");
  }
  ag::Var acc;
  for (std::size_t i = 0; i < temporal_features.size(); ++i) {
    ag::Var term = blocks.empty() ? temporal_features[i] : se_modulate(temporal_features[i], blocks[i]);
    acc = acc.defined() ? ag::add(acc, term) : term;
  }
  return acc;
}

ag::Var classify(const ag::Var& features, const Projection& classifier) {
  return ag::linear(features, classifier.weight, classifier.bias);
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json{{"total", b.total}, {"cls", b.cls},           {"emin", b.emin},
                     {"emax", b.emax},   {"rel", b.rel},           {"lambda_ent", b.lambda_ent},
                     {"lambda_rel", b.lambda_rel}};
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream os;
  os << "total=" << b.total << " cls=" << b.cls << " emin=" << b.emin << " emax=" << b.emax << " rel=" << b.rel
     << " lambda_ent=" << b.lambda_ent << " lambda_rel=" << b.lambda_rel;
  return os.str();
}

TotalLoss total_loss(const ag::Var& logits, std::span<const int> labels, const ag::Var& emin, const ag::Var& emax,
                     const ag::Var& rel, double lambda_ent, double lambda_rel) {
  if (lambda_ent < 0.0 || lambda_rel < 0.0) throw std::invalid_argument("total_loss: lambdas must be >= 0");
  TotalLoss out;
  ag::Var cls = ag::cross_entropy(logits, labels);
  out.values.cls = cls.value()[0];
  out.values.lambda_ent = lambda_ent;
  out.values.lambda_rel = lambda_rel;
  ag::Var total = cls;
  auto accumulate = [&](const ag::Var& term, double weight, double& slot) {
    if (!term.defined()) return;
    slot = term.value()[0];
    total = ag::add(total, ag::scale(term, weight));
  };
  accumulate(emin, lambda_ent, out.values.emin);
  accumulate(emax, lambda_ent, out.values.emax);
  accumulate(rel, lambda_rel, out.values.rel);
  out.total = total;
  out.values.total = total.value()[0];
  return out;
}

}  // namespace stdn
