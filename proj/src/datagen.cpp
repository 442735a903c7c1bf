#include "stdn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace stdn {

namespace fs = std::filesystem;

namespace {

constexpr char kClipMagic[] = "STDV1\n";
constexpr std::size_t kClipMagicLen = 6;
constexpr std::uint8_t kSpriteLevel = 255;
constexpr int kSpriteThreshold = 230;
constexpr double kBackgroundCeiling = 200.0;

// A small, faint marker: the shortcut is learnable but not overwhelming.
constexpr int kMarkerSize = 3;
constexpr double kMarkerAlpha = 0.35;

// Marker colours, blended onto the background at kMarkerAlpha.
constexpr std::array<std::array<std::uint8_t, 3>, kMaxClasses> kMarkerPalette{{
    {230, 40, 40},
    {40, 200, 40},
    {40, 80, 230},
    {230, 200, 30},
    {200, 40, 200},
    {30, 200, 200},
}};

struct Geometry {
  double sprite_radius;
  int marker_size;
  double top_band;  // rows reserved for markers
  double margin;
};

Geometry geometry_for(int height, int width) {
  const int s = std::min(height, width);
  Geometry g;
  g.sprite_radius = std::max(2.0, std::round(s / 16.0));
  g.marker_size = kMarkerSize;
  g.top_band = g.marker_size + 2.0;
  g.margin = g.sprite_radius + 1.0;
  return g;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw std::runtime_error("truncated clip header");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

double triangle_wave(double phase) {
  const double f = phase - std::floor(phase);
  return f < 0.5 ? 4.0 * f - 1.0 : 3.0 - 4.0 * f;
}

// Static background texture plus per-frame sensor noise; the two domains
// differ in colour, spatial frequency, contrast and noise level.
void paint_background(VideoClip& clip, Domain domain, Rng& rng) {
  const int h = clip.height;
  const int w = clip.width;
  const double s = std::min(h, w);
  const bool source = domain == Domain::source;

  std::array<double, 3> base = source ? std::array<double, 3>{60, 90, 110} : std::array<double, 3>{125, 85, 60};
  for (double& b : base) b += uniform(rng, -15.0, 15.0);
  const double amplitude = source ? 22.0 : 40.0;
  const double noise = source ? 3.0 : 6.0;

  struct Wave {
    double kx, ky, phase;
    std::array<double, 3> tint;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    const double wavelength = source ? uniform(rng, 0.5 * s, 1.2 * s) : uniform(rng, 0.12 * s, 0.25 * s);
    const double angle = source ? uniform(rng, 0.0, 2.0 * std::numbers::pi)
                                : uniform(rng, -0.3, 0.3) + (i % 2 ? std::numbers::pi / 2 : 0.0);
    const double k = 2.0 * std::numbers::pi / wavelength;
    Wave wv{k * std::cos(angle), k * std::sin(angle), uniform(rng, 0.0, 2.0 * std::numbers::pi), {}};
    for (double& t : wv.tint) t = uniform(rng, 0.5, 1.0);
    waves.push_back(wv);
  }

  std::vector<double> texture(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (const Wave& wv : waves) v += amplitude / 3.0 * wv.tint[c] * std::sin(wv.kx * x + wv.ky * y + wv.phase);
        texture[(static_cast<std::size_t>(y) * w + x) * 3 + c] = v;
      }

  std::normal_distribution<double> jitter(0.0, noise);
  for (int t = 0; t < clip.frames; ++t)
    for (std::size_t i = 0; i < texture.size(); ++i) {
      const double v = std::clamp(texture[i] + jitter(rng), 0.0, kBackgroundCeiling);
      clip.pixels[static_cast<std::size_t>(t) * texture.size() + i] = static_cast<std::uint8_t>(std::lround(v));
    }
}

void paint_marker(VideoClip& clip, int key, int num_classes) {
  const Geometry g = geometry_for(clip.height, clip.width);
  const double spacing = static_cast<double>(clip.width) / (num_classes + 1);
  const int x0 = static_cast<int>(std::lround(spacing * (key + 1) - g.marker_size / 2.0));
  const int y0 = 1;
  const auto& color = kMarkerPalette[static_cast<std::size_t>(key)];
  for (int t = 0; t < clip.frames; ++t)
    for (int y = y0; y < std::min(clip.height, y0 + g.marker_size); ++y)
      for (int x = std::max(0, x0); x < std::min(clip.width, x0 + g.marker_size); ++x)
        for (int c = 0; c < 3; ++c) {
          auto& px = clip.pixels[((static_cast<std::size_t>(t) * clip.height + y) * clip.width + x) * 3 + c];
          px = static_cast<std::uint8_t>(std::lround(kMarkerAlpha * color[c] + (1.0 - kMarkerAlpha) * px));
        }
}

void paint_sprite(VideoClip& clip, const Trajectory& traj) {
  const double r = geometry_for(clip.height, clip.width).sprite_radius;
  for (int t = 0; t < clip.frames; ++t) {
    const auto [cx, cy] = traj[static_cast<std::size_t>(t)];
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y_hi = std::min(clip.height - 1, static_cast<int>(std::ceil(cy + r + 1)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x_hi = std::min(clip.width - 1, static_cast<int>(std::ceil(cx + r + 1)));
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        if (dx * dx + dy * dy > r * r) continue;
        for (int c = 0; c < 3; ++c)
          clip.pixels[((static_cast<std::size_t>(t) * clip.height + y) * clip.width + x) * 3 + c] = kSpriteLevel;
      }
  }
}

std::string clip_name(const std::string& split, int label, int index) {
  std::ostringstream os;
  os << split << '-' << label << '-' << index;
  return os.str();
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

std::string to_string(MotionPattern p) {
  switch (p) {
    case MotionPattern::drift_right: return "drift_right";
    case MotionPattern::drift_left: return "drift_left";
    case MotionPattern::orbit_clockwise: return "orbit_clockwise";
    case MotionPattern::orbit_counterclockwise: return "orbit_counterclockwise";
    case MotionPattern::zigzag: return "zigzag";
    case MotionPattern::bounce: return "bounce";
  }
  return "unknown";
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid dataset spec: " + msg); };
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (num_classes > kMaxClasses) fail("num_classes must be <= " + std::to_string(kMaxClasses));
  if (clips_per_class_per_split < 1) fail("clips_per_class_per_split must be >= 1");
  if (image_height < 16 || image_width < 16) fail("image size must be at least 16x16");
  if (n_segments < 1) fail("n_segments must be >= 1");
  if (frames_per_clip < n_segments) fail("frames_per_clip (T) must be >= n_segments (N)");
  if (!(spurious_strength >= 0.0 && spurious_strength <= 1.0)) fail("spurious_strength must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"num_classes", s.num_classes},
                     {"clips_per_class_per_split", s.clips_per_class_per_split},
                     {"image_height", s.image_height},
                     {"image_width", s.image_width},
                     {"frames_per_clip", s.frames_per_clip},
                     {"spurious_strength", s.spurious_strength},
                     {"seed", s.seed},
                     {"n_segments", s.n_segments}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.num_classes = j.value("num_classes", d.num_classes);
  s.clips_per_class_per_split = j.value("clips_per_class_per_split", d.clips_per_class_per_split);
  s.image_height = j.value("image_height", d.image_height);
  s.image_width = j.value("image_width", d.image_width);
  s.frames_per_clip = j.value("frames_per_clip", d.frames_per_clip);
  s.spurious_strength = j.value("spurious_strength", d.spurious_strength);
  s.seed = j.value("seed", d.seed);
  s.n_segments = j.value("n_segments", d.n_segments);
}

std::pair<int, int> segment_bounds(int frames, int n_segments, int index) {
  const long long t = frames;
  return {static_cast<int>(t * index / n_segments), static_cast<int>(t * (index + 1) / n_segments)};
}

std::vector<int> segment_indices(int frames, int n_segments, SamplingMode mode, Rng* rng) {
  if (n_segments < 1) throw std::invalid_argument("n_segments must be >= 1");
  if (frames < n_segments) {
    throw std::invalid_argument("clip has " + std::to_string(frames) + " frames, fewer than " +
                                std::to_string(n_segments) + " segments");
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_segments));
  for (int i = 0; i < n_segments; ++i) {
    const auto [begin, end] = segment_bounds(frames, n_segments, i);
    const int len = end - begin;
    if (mode == SamplingMode::test_center) {
      out.push_back(begin + len / 2);
    } else {
      if (!rng) throw std::invalid_argument("train_random sampling needs a generator");
      out.push_back(begin + uniform_int(*rng, 0, len - 1));
    }
  }
  return out;
}

SampledFrames sample_segments(const VideoClip& clip, int n_segments, SamplingMode mode, std::uint64_t seed,
                              const Normalization& norm) {
  Rng rng(seed);
  SampledFrames out;
  out.segment_indices = segment_indices(clip.frames, n_segments, mode, &rng);
  out.frames = Tensor({n_segments, clip.height, clip.width, clip.channels}, 0.0);
  const std::size_t frame_size = static_cast<std::size_t>(clip.height) * clip.width * clip.channels;
  for (int n = 0; n < n_segments; ++n) {
    const std::size_t src = static_cast<std::size_t>(out.segment_indices[n]) * frame_size;
    double* dst = out.frames.data() + n * frame_size;
    for (std::size_t i = 0; i < frame_size; ++i) {
      const int c = static_cast<int>(i % clip.channels);
      dst[i] = (clip.pixels[src + i] - norm.mean[c]) / norm.std[c];
    }
  }
  return out;
}

Trajectory make_trajectory(MotionPattern pattern, int frames, int height, int width, Rng& rng) {
  const Geometry g = geometry_for(height, width);
  const double s = std::min(height, width);
  const double y_min = g.top_band + g.sprite_radius;
  const double y_max = height - g.margin;
  const double last = std::max(frames - 1, 1);
  Trajectory traj(static_cast<std::size_t>(frames));

  switch (pattern) {
    case MotionPattern::drift_right:
    case MotionPattern::drift_left: {
      const double travel = 0.5 * width;
      const double x0 = uniform(rng, g.margin, width - g.margin - travel);
      const double y = uniform(rng, y_min, y_max);
      const double dir = pattern == MotionPattern::drift_right ? 1.0 : -1.0;
      const double start = dir > 0 ? x0 : x0 + travel;
      for (int t = 0; t < frames; ++t) traj[t] = {start + dir * travel * t / last, y};
      break;
    }
    case MotionPattern::orbit_clockwise:
    case MotionPattern::orbit_counterclockwise: {
      const double radius = uniform(rng, 0.15 * s, 0.25 * s);
      const double cx = uniform(rng, g.margin + radius, width - g.margin - radius);
      const double cy = uniform(rng, y_min + radius, y_max - radius);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      // Image rows grow downwards, so increasing angle turns clockwise on screen.
      const double dir = pattern == MotionPattern::orbit_clockwise ? 1.0 : -1.0;
      for (int t = 0; t < frames; ++t) {
        const double a = phase + dir * 2.0 * std::numbers::pi * t / frames;
        traj[t] = {cx + radius * std::cos(a), cy + radius * std::sin(a)};
      }
      break;
    }
    case MotionPattern::zigzag: {
      const double travel = 0.5 * width;
      const double amp = 0.12 * s;
      const double x0 = uniform(rng, g.margin, width - g.margin - travel);
      const double yc = uniform(rng, y_min + amp, y_max - amp);
      const double phase = uniform(rng, 0.0, 1.0);
      for (int t = 0; t < frames; ++t) traj[t] = {x0 + travel * t / last, yc + amp * triangle_wave(phase + 3.0 * t / last)};
      break;
    }
    case MotionPattern::bounce: {
      const double travel = 0.3 * width;
      const double amp = 0.25 * s;
      const double x0 = uniform(rng, g.margin + travel, width - g.margin);
      const double ground = uniform(rng, y_min + amp, y_max);
      for (int t = 0; t < frames; ++t) {
        const double hop = std::abs(std::sin(std::numbers::pi * 3.0 * t / last));
        traj[t] = {x0 - travel * t / last, ground - amp * hop};
      }
      break;
    }
  }
  return traj;
}

VideoClip synthesize_clip(const DatasetSpec& spec, int label, Domain domain, std::uint64_t clip_seed,
                          std::string clip_id) {
  if (label < 0 || label >= spec.num_classes) throw std::invalid_argument("label out of range");
  Rng rng(clip_seed);
  VideoClip clip;
  clip.frames = spec.frames_per_clip;
  clip.height = spec.image_height;
  clip.width = spec.image_width;
  clip.channels = 3;
  clip.label = label;
  clip.domain = domain;
  clip.clip_id = std::move(clip_id);
  clip.pixels.assign(static_cast<std::size_t>(clip.frames) * clip.height * clip.width * clip.channels, 0);

  // Draw every random quantity in a fixed order so the marker knob does not
  // perturb the rest of the clip.
  const Trajectory traj = make_trajectory(static_cast<MotionPattern>(label), clip.frames, clip.height, clip.width, rng);
  const bool marker = uniform(rng, 0.0, 1.0) < spec.spurious_strength;
  paint_background(clip, domain, rng);
  if (domain == Domain::source && marker) paint_marker(clip, label, spec.num_classes);
  paint_sprite(clip, traj);
  return clip;
}

Trajectory track_sprite(const VideoClip& clip) {
  Trajectory traj(static_cast<std::size_t>(clip.frames), {0.0, 0.0});
  for (int t = 0; t < clip.frames; ++t) {
    double sx = 0.0, sy = 0.0, count = 0.0;
    for (int y = 0; y < clip.height; ++y)
      for (int x = 0; x < clip.width; ++x) {
        bool lit = true;
        for (int c = 0; c < 3 && lit; ++c) lit = clip.pixel(t, y, x, c) >= kSpriteThreshold;
        if (!lit) continue;
        sx += x + 0.5;
        sy += y + 0.5;
        count += 1.0;
      }
    if (count == 0.0) throw std::runtime_error("sprite not found in frame " + std::to_string(t));
    traj[t] = {sx / count, sy / count};
  }
  return traj;
}

MotionPattern classify_trajectory(const Trajectory& traj, int width) {
  if (traj.size() < 3) throw std::invalid_argument("trajectory too short to classify");
  const double dx = traj.back()[0] - traj.front()[0];

  // Orbits close on themselves; every other pattern travels sideways.
  if (std::abs(dx) < 0.15 * width) {
    double cx = 0.0, cy = 0.0;
    for (const auto& p : traj) {
      cx += p[0];
      cy += p[1];
    }
    cx /= static_cast<double>(traj.size());
    cy /= static_cast<double>(traj.size());
    double swept = 0.0;
    for (std::size_t t = 1; t < traj.size(); ++t) {
      double d = std::atan2(traj[t][1] - cy, traj[t][0] - cx) - std::atan2(traj[t - 1][1] - cy, traj[t - 1][0] - cx);
      while (d > std::numbers::pi) d -= 2.0 * std::numbers::pi;
      while (d < -std::numbers::pi) d += 2.0 * std::numbers::pi;
      swept += d;
    }
    return swept > 0 ? MotionPattern::orbit_clockwise : MotionPattern::orbit_counterclockwise;
  }

  const auto [lo, hi] = std::minmax_element(traj.begin(), traj.end(),
                                            [](const auto& a, const auto& b) { return a[1] < b[1]; });
  if ((*hi)[1] - (*lo)[1] < 0.08 * width) return dx > 0 ? MotionPattern::drift_right : MotionPattern::drift_left;
  return dx > 0 ? MotionPattern::zigzag : MotionPattern::bounce;
}

void write_clip(const VideoClip& clip, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open clip for writing: " + path.string());
  os.write(kClipMagic, kClipMagicLen);
  put_u32(os, static_cast<std::uint32_t>(clip.frames));
  put_u32(os, static_cast<std::uint32_t>(clip.height));
  put_u32(os, static_cast<std::uint32_t>(clip.width));
  put_u32(os, static_cast<std::uint32_t>(clip.channels));
  put_u32(os, static_cast<std::uint32_t>(clip.label));
  os.write(reinterpret_cast<const char*>(clip.pixels.data()), static_cast<std::streamsize>(clip.pixels.size()));
  if (!os) throw std::runtime_error("failed writing clip: " + path.string());
}

VideoClip read_clip(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open clip: " + path.string());
  char magic[kClipMagicLen];
  is.read(magic, kClipMagicLen);
  if (!is || std::string(magic, kClipMagicLen) != std::string(kClipMagic, kClipMagicLen)) {
    throw std::runtime_error("not an STDV1 clip: " + path.string());
  }
  VideoClip clip;
  clip.frames = static_cast<int>(get_u32(is));
  clip.height = static_cast<int>(get_u32(is));
  clip.width = static_cast<int>(get_u32(is));
  clip.channels = static_cast<int>(get_u32(is));
  clip.label = static_cast<int>(get_u32(is));
  const std::size_t n = static_cast<std::size_t>(clip.frames) * clip.height * clip.width * clip.channels;
  clip.pixels.resize(n);
  is.read(reinterpret_cast<char*>(clip.pixels.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw std::runtime_error("truncated clip data: " + path.string());
  clip.clip_id = path.stem().string();
  return clip;
}

Normalization compute_normalization(const std::vector<VideoClip>& clips) {
  std::array<double, 3> sum{}, sq{};
  double count = 0.0;
  for (const VideoClip& c : clips) {
    for (std::size_t i = 0; i < c.pixels.size(); ++i) {
      const double v = c.pixels[i];
      sum[i % 3] += v;
      sq[i % 3] += v * v;
    }
    count += static_cast<double>(c.pixels.size() / 3);
  }
  if (count == 0.0) throw std::invalid_argument("cannot normalise an empty clip set");
  Normalization n;
  for (int c = 0; c < 3; ++c) {
    n.mean[c] = sum[c] / count;
    n.std[c] = std::sqrt(std::max(sq[c] / count - n.mean[c] * n.mean[c], 1e-12));
  }
  return n;
}

fs::path generate_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);

  struct SplitPlan {
    const char* name;
    Domain domain;
  };
  const std::array<SplitPlan, 3> plans{{{kSourceTrain, Domain::source},
                                        {kSourceVal, Domain::source},
                                        {kTargetTest, Domain::target}}};

  nlohmann::json splits = nlohmann::json::object();
  std::vector<VideoClip> train_clips;
  for (std::size_t s = 0; s < plans.size(); ++s) {
    const SplitPlan& plan = plans[s];
    fs::create_directories(out_dir / plan.name);
    nlohmann::json records = nlohmann::json::array();
    for (int label = 0; label < spec.num_classes; ++label) {
      for (int i = 0; i < spec.clips_per_class_per_split; ++i) {
        const std::string id = clip_name(plan.name, label, i);
        const std::uint64_t seed = derive_seed(spec.seed, {s, static_cast<std::uint64_t>(label),
                                                           static_cast<std::uint64_t>(i)});
        VideoClip clip = synthesize_clip(spec, label, plan.domain, seed, id);
        const std::string rel = std::string(plan.name) + "/" + id + ".stdv";
        write_clip(clip, out_dir / rel);
        records.push_back({{"clip_id", id}, {"path", rel}, {"label", label}, {"domain", to_string(plan.domain)}});
        if (s == 0) train_clips.push_back(std::move(clip));
      }
    }
    splits[plan.name] = std::move(records);
  }

  const Normalization norm = compute_normalization(train_clips);
  nlohmann::json manifest{{"format", "stdn-dataset"},
                          {"version", 1},
                          {"spec", spec},
                          {"normalization", {{"mean", norm.mean}, {"std", norm.std}, {"source", kSourceTrain}}},
                          {"splits", splits}};
  const fs::path path = out_dir / "manifest.json";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path.string());
  os << manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing manifest: " + path.string());
  return path;
}

Dataset Dataset::open(const fs::path& root) {
  const fs::path path = fs::is_directory(root) ? root / "manifest.json" : root;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset manifest: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed dataset manifest " + path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.root_ = path.parent_path();
  ds.spec_ = j.at("spec").get<DatasetSpec>();
  ds.norm_.mean = j.at("normalization").at("mean").get<std::array<double, 3>>();
  ds.norm_.std = j.at("normalization").at("std").get<std::array<double, 3>>();
  for (auto it = j.at("splits").begin(); it != j.at("splits").end(); ++it) {
    std::vector<ClipRecord> records;
    for (const auto& r : it.value()) {
      ClipRecord rec;
      rec.clip_id = r.at("clip_id").get<std::string>();
      rec.path = r.at("path").get<std::string>();
      rec.label = r.at("label").get<int>();
      rec.domain = r.at("domain").get<std::string>() == "target" ? Domain::target : Domain::source;
      records.push_back(std::move(rec));
    }
    ds.splits_.emplace_back(it.key(), std::move(records));
  }
  return ds;
}

bool Dataset::has_split(const std::string& name) const {
  return std::any_of(splits_.begin(), splits_.end(), [&](const auto& s) { return s.first == name; });
}

const std::vector<ClipRecord>& Dataset::records(const std::string& split) const {
  for (const auto& s : splits_) {
    if (s.first == split) return s.second;
  }
  throw std::out_of_range("dataset has no split named '" + split + "'");
}

std::vector<std::string> Dataset::split_names() const {
  std::vector<std::string> names;
  for (const auto& s : splits_) names.push_back(s.first);
  return names;
}

std::vector<VideoClip> Dataset::load_split(const std::string& split) const {
  std::vector<VideoClip> clips;
  for (const ClipRecord& rec : records(split)) {
    VideoClip clip = read_clip(root_ / rec.path);
    if (clip.label != rec.label) throw std::runtime_error("label mismatch between manifest and " + rec.path);
    clip.clip_id = rec.clip_id;
    clip.domain = rec.domain;
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace stdn
