#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdn/config.hpp"
#include "stdn/datagen.hpp"
#include "stdn/tensor.hpp"

namespace stdn {

struct NamedTensor {
  std::string name;
  Tensor value;
};

enum class BlobType { f64, f32 };

/// Everything needed to resume training or evaluate: weights, optimizer
/// momentum, generator state, the config and the data normalisation.
struct Checkpoint {
  TrainConfig config;
  Normalization normalization;
  int epoch = 0;
  long step = 0;
  double source_val_accuracy = 0.0;
  double source_val_loss = 0.0;
  std::string rng_state;  // textual mt19937_64 state
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> momentum;
};

/// Container: the magic line, an 8-byte little-endian manifest length, a JSON
/// manifest, then raw little-endian blobs. f64 blobs round-trip exactly; f32
/// is an export format.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, BlobType type = BlobType::f64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Manifest only, without reading blobs.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path);

}  // namespace stdn
