#include "stdn/backbone.hpp"

#include <stdexcept>

namespace stdn {

namespace {

constexpr double kNormEps = 1e-5;

int downsampled(int size, int stride) { return (size + 2 - 3) / stride + 1; }

// Coordinate planes in [-1, 1] appended after the colour channels.
ag::Var with_coordinates(const ag::Var& frames) {
  const Tensor& x = frames.value();
  const int f = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor coords({f, h, w, 2}, 0.0);
  for (int n = 0; n < f; ++n)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const std::size_t o = ((static_cast<std::size_t>(n) * h + y) * w + xx) * 2;
        coords[o] = w > 1 ? -1.0 + 2.0 * xx / (w - 1) : 0.0;
        coords[o + 1] = h > 1 ? -1.0 + 2.0 * y / (h - 1) : 0.0;
      }
  const ag::Var parts[] = {frames, ag::constant(std::move(coords))};
  return ag::concat(parts, 3);
}

}  // namespace

int BackboneConfig::output_height() const {
  int h = input_height;
  for (int s : strides) h = downsampled(h, s);
  return h;
}

int BackboneConfig::output_width() const {
  int w = input_width;
  for (int s : strides) w = downsampled(w, s);
  return w;
}

void BackboneConfig::validate() const {
  if (channels.empty() || channels.size() != strides.size()) {
    throw std::invalid_argument("backbone: channels and strides must be non-empty and of equal length");
  }
  for (int c : channels) {
    if (c <= 0 || c % norm_groups != 0) {
      throw std::invalid_argument("backbone: every stage width must be a positive multiple of norm_groups");
    }
  }
  if (input_height < 1 || input_width < 1 || in_channels < 1) throw std::invalid_argument("backbone: bad input shape");
}

BackboneParams add_backbone(ParameterStore& store, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneParams p;
  int in = cfg.in_channels + (cfg.coord_channels ? 2 : 0);
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string prefix = "backbone.stage" + std::to_string(i + 1);
    BackboneStage st;
    st.conv = add_conv(store, prefix + ".conv", 3, in, cfg.channels[i], rng);
    st.gamma = store.add(prefix + ".norm.gamma", Tensor({cfg.channels[i]}, 1.0), false);
    st.beta = store.add(prefix + ".norm.beta", Tensor({cfg.channels[i]}, 0.0), false);
    p.stages.push_back(st);
    in = cfg.channels[i];
  }
  return p;
}

ag::Var extract_features(const ag::Var& frames, const BackboneParams& params, const BackboneConfig& cfg,
                         const StageHook& hook) {
  const Shape& s = frames.shape();
  if (s.size() != 4 || s[1] != cfg.input_height || s[2] != cfg.input_width || s[3] != cfg.in_channels) {
    throw std::invalid_argument("backbone: expected frames [F," + std::to_string(cfg.input_height) + "," +
                                std::to_string(cfg.input_width) + "," + std::to_string(cfg.in_channels) +
                                "], got " + shape_str(s));
  }
  ag::Var x = cfg.coord_channels ? with_coordinates(frames) : frames;
  for (std::size_t i = 0; i < params.stages.size(); ++i) {
    const BackboneStage& st = params.stages[i];
    x = ag::conv2d(x, st.conv.weight, st.conv.bias, cfg.strides[i], 1);
    x = ag::group_norm(x, st.gamma, st.beta, cfg.norm_groups, kNormEps);
    x = ag::relu(x);
    if (hook) x = hook(static_cast<int>(i) + 1, x);
  }
  return x;
}

}  // namespace stdn
