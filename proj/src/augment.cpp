#include "stdn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stdn {

StyleStats style_stats(const Tensor& features, int batch) {
  if (batch < 1 || features.rank() < 2 || features.dim(0) % batch != 0) {
    throw std::invalid_argument("style_stats: leading dimension must be a multiple of the batch size");
  }
  StyleStats s;
  s.batch = batch;
  s.channels = features.dim(-1);
  const std::size_t per_instance = features.size() / static_cast<std::size_t>(batch);
  const std::size_t positions = per_instance / static_cast<std::size_t>(s.channels);
  s.mean.assign(static_cast<std::size_t>(batch) * s.channels, 0.0);
  s.std.assign(s.mean.size(), 0.0);
  for (int b = 0; b < batch; ++b) {
    const double* x = features.data() + b * per_instance;
    for (int c = 0; c < s.channels; ++c) {
      double mu = 0.0;
      for (std::size_t p = 0; p < positions; ++p) mu += x[p * s.channels + c];
      mu /= static_cast<double>(positions);
      double var = 0.0;
      for (std::size_t p = 0; p < positions; ++p) {
        const double d = x[p * s.channels + c] - mu;
        var += d * d;
      }
      var /= static_cast<double>(positions);
      s.mean[static_cast<std::size_t>(b) * s.channels + c] = mu;
      s.std[static_cast<std::size_t>(b) * s.channels + c] = std::sqrt(var);
    }
  }
  return s;
}

MixPlan draw_mix_plan(int batch, const MixStyleConfig& cfg, Rng& rng) {
  if (!(cfg.prob > 0.0) || !(cfg.alpha > 0.0)) throw std::invalid_argument("mixstyle: prob and alpha must be > 0");
  MixPlan plan;
  plan.apply = uniform(rng, 0.0, 1.0) < cfg.prob;
  plan.lambdas.resize(static_cast<std::size_t>(batch));
  for (double& l : plan.lambdas) l = beta_sample(rng, cfg.alpha, cfg.alpha);
  plan.partners.resize(static_cast<std::size_t>(batch));
  std::iota(plan.partners.begin(), plan.partners.end(), 0);
  std::shuffle(plan.partners.begin(), plan.partners.end(), rng);
  return plan;
}

ag::Var video_mixstyle(const ag::Var& features, int batch, const MixPlan& plan, bool training, double eps) {
  if (!training || !plan.apply || batch < 2) return features;
  if (plan.lambdas.size() != static_cast<std::size_t>(batch) || plan.partners.size() != static_cast<std::size_t>(batch)) {
    throw std::invalid_argument("mixstyle: plan does not match batch size");
  }
  // Statistics are treated as constants, so the op is a per-instance,
  // per-channel affine map with fixed coefficients.
  const StyleStats st = style_stats(features.value(), batch);
  const int channels = st.channels;
  const std::size_t per_instance = features.value().size() / static_cast<std::size_t>(batch);
  std::vector<double> gain(st.mean.size(), 1.0);
  std::vector<double> shift(st.mean.size(), 0.0);
  std::vector<bool> identity(static_cast<std::size_t>(batch), false);
  for (int b = 0; b < batch; ++b) {
    const int partner = plan.partners[static_cast<std::size_t>(b)];
    const double lam = plan.lambdas[static_cast<std::size_t>(b)];
    if (partner < 0 || partner >= batch) throw std::out_of_range("mixstyle: partner index out of range");
    if (partner == b || lam == 1.0) {
      identity[static_cast<std::size_t>(b)] = true;
      continue;
    }
    for (int c = 0; c < channels; ++c) {
      const std::size_t own = static_cast<std::size_t>(b) * channels + c;
      const std::size_t other = static_cast<std::size_t>(partner) * channels + c;
      const double sig_own = st.std[own] + eps;
      const double sig_mix = lam * sig_own + (1.0 - lam) * (st.std[other] + eps);
      const double mu_mix = lam * st.mean[own] + (1.0 - lam) * st.mean[other];
      gain[own] = sig_mix / sig_own;
      shift[own] = mu_mix - st.mean[own] * gain[own];
    }
  }
  Tensor out = features.value();
  for (int b = 0; b < batch; ++b) {
    if (identity[static_cast<std::size_t>(b)]) continue;
    double* x = out.data() + b * per_instance;
    for (std::size_t i = 0; i < per_instance; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * channels + i % channels;
      x[i] = x[i] * gain[k] + shift[k];
    }
  }
  return ag::make_op(std::move(out), {features}, [=](ag::Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < per_instance; ++i) {
        const std::size_t k = static_cast<std::size_t>(b) * channels + i % channels;
        g[b * per_instance + i] += self.grad[b * per_instance + i] * gain[k];
      }
    }
  });
}

}  // namespace stdn
