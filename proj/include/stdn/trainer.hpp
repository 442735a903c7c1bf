#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdn/checkpoint.hpp"
#include "stdn/config.hpp"
#include "stdn/datagen.hpp"
#include "stdn/model.hpp"
#include "stdn/stats.hpp"

namespace stdn {

struct Batch {
  Tensor frames;  // [B*N, H, W, 3]
  std::vector<int> labels;
};

/// Samples N frames per clip. Random sampling draws one seed per clip from rng.
Batch make_batch(std::span<const VideoClip* const> clips, int n_segments, SamplingMode mode, Rng* rng,
                 const Normalization& norm);

struct StepResult {
  LossBreakdown loss;
  double accuracy = 0.0;
};

struct EvalResult {
  int count = 0;
  double accuracy = 0.0;
  double loss = 0.0;  // mean classification loss
  std::vector<double> per_class_accuracy;
  std::vector<int> per_class_count;
  std::vector<int> predictions;
};

nlohmann::json to_json(const EvalResult& r);

/// Raised when a training step produces a non-finite loss or gradient.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long step, LossBreakdown loss, const std::string& what)
      : std::runtime_error(what), step_(step), loss_(loss) {}
  long step() const { return step_; }
  const LossBreakdown& loss() const { return loss_; }

 private:
  long step_;
  LossBreakdown loss_;
};

/// Model plus SGD state (momentum buffers, generator, step counter).
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Normalization& norm);
  /// Restores weights, momentum, generator and step count.
  explicit Trainer(const Checkpoint& ckpt);

  const TrainConfig& config() const { return cfg_; }
  const Normalization& normalization() const { return norm_; }
  StdnModel& model() { return model_; }
  const StdnModel& model() const { return model_; }
  Rng& rng() { return rng_; }
  long steps() const { return step_; }

  /// Forward, backward and one SGD-with-momentum update.
  StepResult step(std::span<const VideoClip* const> clips);
  /// Centre-frame sampling, no gradients.
  EvalResult evaluate(std::span<const VideoClip> clips) const;

  Checkpoint snapshot(int epoch, double val_accuracy, double val_loss) const;

 private:
  void apply_update();

  TrainConfig cfg_;
  Normalization norm_;
  StdnModel model_;
  std::vector<Tensor> momentum_;
  Rng rng_;
  long step_ = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::ostream* log = nullptr;    // human-readable progress
  bool resume = false;            // continue from out_dir/last.ckpt
};

struct TrainResult {
  Checkpoint best;  // highest source-val accuracy, ties to lower val loss
  Checkpoint last;
  std::vector<nlohmann::json> epochs;
  nlohmann::json summary;
};

/// Trains on source-train and selects the checkpoint on source-val. No other
/// split is read. With an out_dir, writes config.json, metrics.jsonl,
/// best.ckpt, last.ckpt and summary.json there.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opts = {});

/// The config actually used for a dataset: class count and frame size come
/// from the dataset.
TrainConfig reconcile(TrainConfig cfg, const DatasetSpec& spec);

struct EvaluationReport {
  std::string split;
  std::vector<std::string> checkpoints;
  std::vector<EvalResult> results;
  MeanStd accuracy;
  std::vector<double> per_class_mean;

  nlohmann::json to_json() const;
};

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, std::span<const VideoClip> clips);
EvaluationReport evaluate_checkpoints(std::span<const std::filesystem::path> paths, const Dataset& data,
                                      const std::string& split);

struct AblationRow {
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::vector<double> target_accuracy;
  std::vector<double> source_val_accuracy;
  MeanStd target;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<std::vector<Checkpoint>> checkpoints;  // [variant][seed]

  std::string markdown() const;
  nlohmann::json to_json() const;
};

/// Directory-safe name for a variant ("+SGM" -> "plus_SGM").
std::string variant_slug(const std::string& variant);

/// Trains every variant for every seed and scores it on target-test.
/// Checkpoints go to out_dir/<slug>/seed<s>/ when out_dir is set.
AblationResult run_ablation(const TrainConfig& base, const Dataset& data, std::span<const std::string> variants,
                            std::span<const std::uint64_t> seeds, const std::filesystem::path& out_dir,
                            std::ostream* log);

}  // namespace stdn
