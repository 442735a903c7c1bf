#include "stdn/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace stdn {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("config: unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& slot) {
  if (j.contains(key)) slot = j.at(key).get<T>();
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid train config: " + m); };
  if (batch_size < 1 || eval_batch_size < 1) fail("batch sizes must be >= 1");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (lambda_ent < 0.0 || lambda_rel < 0.0) fail("lambdas must be >= 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (max_train_clips < 0) fail("max_train_clips must be >= 0");
}

json to_json(const TrainConfig& cfg) {
  const ModelConfig& m = cfg.model;
  return json{
      {"variant", cfg.variant},
      {"seed", cfg.seed},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"eval_batch_size", cfg.eval_batch_size},
      {"lr", cfg.lr},
      {"momentum", cfg.momentum},
      {"weight_decay", cfg.weight_decay},
      {"lambda_ent", cfg.lambda_ent},
      {"lambda_rel", cfg.lambda_rel},
      {"max_train_clips", cfg.max_train_clips},
      {"n_segments", m.n_segments},
      {"num_classes", m.num_classes},
      {"groups", m.groups},
      {"tau", m.tau},
      {"spatial_dim", m.spatial_dim},
      {"temporal_dim", m.temporal_dim},
      {"relation_hidden", m.relation_hidden},
      {"se_reduction", m.se_reduction},
      {"subset_cap", m.subset_cap},
      {"modules",
       {{"grouping", m.grouping},
        {"spatial_relations", m.spatial_relations},
        {"temporal_relations", m.temporal_relations},
        {"se_aggregation", m.se_aggregation}}},
      {"backbone",
       {{"input_height", m.backbone.input_height},
        {"input_width", m.backbone.input_width},
        {"in_channels", m.backbone.in_channels},
        {"coord_channels", m.backbone.coord_channels},
        {"channels", m.backbone.channels},
        {"strides", m.backbone.strides},
        {"norm_groups", m.backbone.norm_groups}}},
      {"mixstyle",
       {{"enabled", m.mixstyle.enabled},
        {"prob", m.mixstyle.prob},
        {"alpha", m.mixstyle.alpha},
        {"stage", m.mixstyle.stage},
        {"eps", m.mixstyle.eps}}},
  };
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  check_keys(j,
             {"variant", "seed", "epochs", "batch_size", "eval_batch_size", "lr", "momentum", "weight_decay",
              "lambda_ent", "lambda_rel", "max_train_clips", "n_segments", "num_classes", "groups", "tau",
              "spatial_dim", "temporal_dim", "relation_hidden", "se_reduction", "subset_cap", "modules", "backbone",
              "mixstyle"},
             "");
  TrainConfig cfg = base;
  ModelConfig& m = cfg.model;
  try {
    read(j, "variant", cfg.variant);
    read(j, "seed", cfg.seed);
    read(j, "epochs", cfg.epochs);
    read(j, "batch_size", cfg.batch_size);
    read(j, "eval_batch_size", cfg.eval_batch_size);
    read(j, "lr", cfg.lr);
    read(j, "momentum", cfg.momentum);
    read(j, "weight_decay", cfg.weight_decay);
    read(j, "lambda_ent", cfg.lambda_ent);
    read(j, "lambda_rel", cfg.lambda_rel);
    read(j, "max_train_clips", cfg.max_train_clips);
    read(j, "n_segments", m.n_segments);
    read(j, "num_classes", m.num_classes);
    read(j, "groups", m.groups);
    read(j, "tau", m.tau);
    read(j, "spatial_dim", m.spatial_dim);
    read(j, "temporal_dim", m.temporal_dim);
    read(j, "relation_hidden", m.relation_hidden);
    read(j, "se_reduction", m.se_reduction);
    read(j, "subset_cap", m.subset_cap);
    if (j.contains("modules")) {
      const json& mj = j.at("modules");
      check_keys(mj, {"grouping", "spatial_relations", "temporal_relations", "se_aggregation"}, "modules");
      read(mj, "grouping", m.grouping);
      read(mj, "spatial_relations", m.spatial_relations);
      read(mj, "temporal_relations", m.temporal_relations);
      read(mj, "se_aggregation", m.se_aggregation);
    }
    if (j.contains("backbone")) {
      const json& bj = j.at("backbone");
      check_keys(bj, {"input_height", "input_width", "in_channels", "coord_channels", "channels", "strides", "norm_groups"},
                 "backbone");
      read(bj, "input_height", m.backbone.input_height);
      read(bj, "input_width", m.backbone.input_width);
      read(bj, "in_channels", m.backbone.in_channels);
      read(bj, "coord_channels", m.backbone.coord_channels);
      read(bj, "channels", m.backbone.channels);
      read(bj, "strides", m.backbone.strides);
      read(bj, "norm_groups", m.backbone.norm_groups);
    }
    if (j.contains("mixstyle")) {
      const json& xj = j.at("mixstyle");
      check_keys(xj, {"enabled", "prob", "alpha", "stage", "eps"}, "mixstyle");
      read(xj, "enabled", m.mixstyle.enabled);
      read(xj, "prob", m.mixstyle.prob);
      read(xj, "alpha", m.mixstyle.alpha);
      read(xj, "stage", m.mixstyle.stage);
      read(xj, "eps", m.mixstyle.eps);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed config " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

void save_train_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config: " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"Backbone", "+SGM", "+TRM", "+STRM", "+MixStyle", "Full"};
  return names;
}

TrainConfig apply_variant(TrainConfig cfg, const std::string& variant) {
  ModelConfig& m = cfg.model;
  struct Switches {
    bool grouping, temporal, spatial, mixstyle, se;
  };
  Switches s{};
  if (variant == "Backbone") {
    s = {false, false, false, false, false};
  } else if (variant == "+SGM") {
    s = {true, false, false, false, false};
  } else if (variant == "+TRM") {
    s = {true, true, false, false, false};
  } else if (variant == "+STRM") {
    s = {true, true, true, false, false};
  } else if (variant == "+MixStyle") {
    s = {true, true, true, true, false};
  } else if (variant == "Full") {
    s = {true, true, true, true, true};
  } else {
    throw std::invalid_argument("unknown variant '" + variant + "' (expected Backbone, +SGM, +TRM, +STRM, +MixStyle, Full)");
  }
  m.grouping = s.grouping;
  m.temporal_relations = s.temporal;
  m.spatial_relations = s.spatial;
  m.mixstyle.enabled = s.mixstyle;
  m.se_aggregation = s.se;
  cfg.variant = variant;
  return cfg;
}

}  // namespace stdn
