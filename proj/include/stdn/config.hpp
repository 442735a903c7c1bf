#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdn/model.hpp"

namespace stdn {

/// Training hyperparameters. Defaults are the reference protocol: N=5, K=4,
/// tau=0.5, D_s=192, D_t=256, batch 32, SGD lr 1e-3, momentum 0.9,
/// weight decay 5e-4, lambda_ent=0.1, lambda_rel=0.5.
struct TrainConfig {
  ModelConfig model;
  int batch_size = 32;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda_ent = 0.1;
  double lambda_rel = 0.5;
  int epochs = 30;
  std::uint64_t seed = 0;
  int max_train_clips = 0;  // 0 uses the whole source-train split
  int eval_batch_size = 16;
  std::string variant = "Full";

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Starts from `base` and overrides every key present in j. Unknown keys are
/// rejected so typos do not silently fall back to defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

TrainConfig load_train_config(const std::filesystem::path& path);
void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path);

/// Ablation ladder, in order: Backbone, +SGM, +TRM, +STRM, +MixStyle, Full.
const std::vector<std::string>& ablation_variants();

/// Switches modules for a named variant; throws on an unknown name.
TrainConfig apply_variant(TrainConfig cfg, const std::string& variant);

}  // namespace stdn
