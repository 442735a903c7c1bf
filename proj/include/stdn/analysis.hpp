#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdn/datagen.hpp"
#include "stdn/model.hpp"

namespace stdn {

/// ‖a−b‖² / ((‖a‖²+‖b‖²)/2); 0 when both vectors are zero.
double normalized_pair_mse(std::span<const double> a, std::span<const double> b);

/// Mean normalized MSE over all scale pairs m≠m' of each video, then over
/// videos. Each tensor is one video's [scales, D_t] temporal features.
double diversity_mse(std::span<const Tensor> per_video);

/// Davies-Bouldin index of points [P, D] under a hard labelling. Empty
/// labels are ignored; fewer than two non-empty clusters is an error.
double davies_bouldin(const Tensor& points, std::span<const int> labels);

struct KMeansResult {
  std::vector<int> labels;
  Tensor centroids;  // [k, D]
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until assignments settle.
KMeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iter = 100);

/// Per-video and per-frame features of a model on a list of clips
/// (centre-frame sampling, evaluation mode).
struct CollectedFeatures {
  std::vector<Tensor> temporal;               // per video [N-1, D_t]; empty without temporal relations
  std::vector<Tensor> frame_maps;             // per frame [H*W, D]
  std::vector<std::vector<int>> assignments;  // per frame argmax group; empty without grouping
};

CollectedFeatures collect_features(const StdnModel& model, std::span<const VideoClip> clips, const Normalization& norm,
                                   int batch_size = 16);

struct FrameDbi {
  double mean = 0.0;
  int frames_used = 0;
  int frames_skipped = 0;   // fewer than two non-empty groups
  long empty_groups = 0;    // groups left empty after argmax, summed over frames
};

/// Mean over frames of the per-frame DBI of the given hard partitions.
FrameDbi mean_frame_dbi(std::span<const Tensor> frame_maps, std::span<const std::vector<int>> labels);

struct GroupingReport {
  int groups = 0;
  FrameDbi stdn;
  FrameDbi baseline;
  double ratio = 0.0;  // stdn / baseline

  nlohmann::json to_json() const;
};

/// DBI of the argmax partition of a grouping model against k-means (K equal
/// to the model's group count) on the feature maps of a model without
/// grouping.
GroupingReport grouping_separation_report(const StdnModel& grouped, const Normalization& grouped_norm,
                                          const StdnModel& baseline, const Normalization& baseline_norm,
                                          std::span<const VideoClip> clips, std::uint64_t seed);

/// k-means DBI on one model's feature maps, K clusters per frame.
FrameDbi kmeans_frame_dbi(std::span<const Tensor> frame_maps, int k, std::uint64_t seed);

inline constexpr const char* kDiversityNormalization = "||a-b||^2 / ((||a||^2 + ||b||^2) / 2)";

}  // namespace stdn
