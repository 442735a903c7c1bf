#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdn/rng.hpp"
#include "stdn/tensor.hpp"

namespace stdn {

enum class Domain { source, target };

std::string to_string(Domain d);

/// Motion patterns that define the class of a clip. Class c uses pattern c.
enum class MotionPattern { drift_right, drift_left, orbit_clockwise, orbit_counterclockwise, zigzag, bounce };

inline constexpr int kMaxClasses = 6;

std::string to_string(MotionPattern p);

struct VideoClip {
  int frames = 0;  // T
  int height = 0;
  int width = 0;
  int channels = 3;
  int label = 0;
  Domain domain = Domain::source;
  std::string clip_id;
  std::vector<std::uint8_t> pixels;  // T*H*W*C, row-major

  std::uint8_t pixel(int t, int y, int x, int c) const {
    return pixels[((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c];
  }
};

struct DatasetSpec {
  int num_classes = 4;
  int clips_per_class_per_split = 50;
  int image_height = 64;
  int image_width = 64;
  int frames_per_clip = 25;
  double spurious_strength = 1.0;
  std::uint64_t seed = 0;
  int n_segments = 5;  // the smallest segment count the data must support

  /// Throws std::invalid_argument with a readable message.
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

/// Per-channel constants in pixel units: normalized = (pixel - mean) / std.
struct Normalization {
  std::array<double, 3> mean{127.5, 127.5, 127.5};
  std::array<double, 3> std{64.0, 64.0, 64.0};
};

struct SampledFrames {
  Tensor frames;  // [N, H, W, 3], normalized
  std::vector<int> segment_indices;
};

enum class SamplingMode { train_random, test_center };

/// Bounds [begin, end) of segment i when T frames are split into n segments.
std::pair<int, int> segment_bounds(int frames, int n_segments, int index);

std::vector<int> segment_indices(int frames, int n_segments, SamplingMode mode, Rng* rng);

SampledFrames sample_segments(const VideoClip& clip, int n_segments, SamplingMode mode, std::uint64_t seed,
                              const Normalization& norm);

// --- synthesis -------------------------------------------------------------

/// Sprite centre per frame as (x, y) in pixel coordinates.
using Trajectory = std::vector<std::array<double, 2>>;

Trajectory make_trajectory(MotionPattern pattern, int frames, int height, int width, Rng& rng);

/// Renders one clip; a pure function of its arguments.
VideoClip synthesize_clip(const DatasetSpec& spec, int label, Domain domain, std::uint64_t clip_seed,
                          std::string clip_id);

/// Sprite centroid per frame, found from the sprite's reserved colour.
Trajectory track_sprite(const VideoClip& clip);

/// Rule-based inverse of the trajectory synthesis.
MotionPattern classify_trajectory(const Trajectory& traj, int width);

// --- on-disk formats -------------------------------------------------------

void write_clip(const VideoClip& clip, const std::filesystem::path& path);
VideoClip read_clip(const std::filesystem::path& path);

struct ClipRecord {
  std::string clip_id;
  std::string path;  // relative to the dataset root
  int label = 0;
  Domain domain = Domain::source;
};

inline constexpr const char* kSourceTrain = "source-train";
inline constexpr const char* kSourceVal = "source-val";
inline constexpr const char* kTargetTest = "target-test";

/// Dataset manifest plus lazy access to the clips of each split.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root);

  const DatasetSpec& spec() const { return spec_; }
  const Normalization& normalization() const { return norm_; }
  const std::filesystem::path& root() const { return root_; }
  bool has_split(const std::string& name) const;
  const std::vector<ClipRecord>& records(const std::string& split) const;
  std::vector<std::string> split_names() const;

  /// Reads every clip in a split from disk.
  std::vector<VideoClip> load_split(const std::string& split) const;

 private:
  std::filesystem::path root_;
  DatasetSpec spec_;
  Normalization norm_;
  std::vector<std::pair<std::string, std::vector<ClipRecord>>> splits_;
};

/// Generates source-train, source-val and target-test under out_dir and
/// writes manifest.json. Returns the manifest path.
std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// Per-channel pixel mean/std over every frame of the given clips.
Normalization compute_normalization(const std::vector<VideoClip>& clips);

}  // namespace stdn
