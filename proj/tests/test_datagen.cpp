#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "stdn/datagen.hpp"

using namespace stdn;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec(std::uint64_t seed) {
  DatasetSpec s;
  s.num_classes = 4;
  s.clips_per_class_per_split = 3;
  s.image_height = 32;
  s.image_width = 32;
  s.frames_per_clip = 10;
  s.seed = seed;
  return s;
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("stdn_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("test-time sampling takes segment midpoints") {
  CHECK(segment_indices(25, 5, SamplingMode::test_center, nullptr) == std::vector<int>{2, 7, 12, 17, 22});
  Rng rng(1);
  CHECK(segment_indices(5, 5, SamplingMode::test_center, nullptr) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(segment_indices(5, 5, SamplingMode::train_random, &rng) == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("random sampling stays inside segment bounds over 1000 draws") {
  Rng rng(123);
  std::vector<std::set<int>> seen(5);
  for (int draw = 0; draw < 1000; ++draw) {
    const std::vector<int> idx = segment_indices(25, 5, SamplingMode::train_random, &rng);
    REQUIRE(idx.size() == 5);
    for (int i = 0; i < 5; ++i) {
      const auto [lo, hi] = segment_bounds(25, 5, i);
      CHECK(idx[i] >= lo);
      CHECK(idx[i] < hi);
      if (i > 0) CHECK(idx[i] > idx[i - 1]);
      seen[i].insert(idx[i]);
    }
  }
  for (int i = 0; i < 5; ++i) CHECK(seen[i].size() == 5);  // every frame of each segment is reachable
}

TEST_CASE("segment bounds partition uneven clips") {
  for (int t = 3; t <= 40; ++t)
    for (int n = 1; n <= t; ++n) {
      int expect = 0;
      for (int i = 0; i < n; ++i) {
        const auto [lo, hi] = segment_bounds(t, n, i);
        CHECK(lo == expect);
        CHECK(hi > lo);
        expect = hi;
      }
      CHECK(expect == t);
    }
}

TEST_CASE("sampling fewer frames than segments is rejected") {
  CHECK_THROWS_AS(segment_indices(4, 5, SamplingMode::test_center, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(segment_indices(25, 5, SamplingMode::train_random, nullptr), std::invalid_argument);
}

TEST_CASE("sampled frames are normalised with the given constants") {
  const DatasetSpec spec = small_spec(2);
  const VideoClip clip = synthesize_clip(spec, 1, Domain::source, 99, "c");
  Normalization norm;
  norm.mean = {10.0, 20.0, 30.0};
  norm.std = {2.0, 4.0, 8.0};
  const SampledFrames s = sample_segments(clip, 5, SamplingMode::test_center, 0, norm);
  CHECK(s.frames.shape() == Shape{5, 32, 32, 3});
  const int t = s.segment_indices[3];
  CHECK(s.frames.at({3, 7, 9, 2}) == doctest::Approx((clip.pixel(t, 7, 9, 2) - 30.0) / 8.0));
}

TEST_CASE("spec validation rejects bad values") {
  DatasetSpec s;
  s.num_classes = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = DatasetSpec{};
  s.frames_per_clip = 4;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = DatasetSpec{};
  s.spurious_strength = 1.5;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = DatasetSpec{};
  s.num_classes = kMaxClasses + 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_NOTHROW(DatasetSpec{}.validate());
}

TEST_CASE("the rule-based motion classifier recovers every label") {
  for (int size : {32, 64}) {
    DatasetSpec spec;
    spec.num_classes = kMaxClasses;
    spec.image_height = size;
    spec.image_width = size;
    for (Domain d : {Domain::source, Domain::target}) {
      for (int label = 0; label < kMaxClasses; ++label) {
        for (int i = 0; i < 25; ++i) {
          const VideoClip clip = synthesize_clip(spec, label, d, derive_seed(size, {static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)}), "x");
          const MotionPattern p = classify_trajectory(track_sprite(clip), clip.width);
          CHECK(static_cast<int>(p) == label);
        }
      }
    }
  }
}

TEST_CASE("pixels stay in range and the sprite is the only saturated region") {
  DatasetSpec spec;
  for (Domain d : {Domain::source, Domain::target}) {
    const VideoClip clip = synthesize_clip(spec, 2, d, 7, "x");
    CHECK(clip.pixels.size() == static_cast<std::size_t>(25) * 64 * 64 * 3);
    const Trajectory traj = track_sprite(clip);
    CHECK(traj.size() == 25);
  }
}

TEST_CASE("marker presence follows spurious_strength") {
  // The marker knob is drawn in a fixed slot, so a clip differs from its
  // strength-0 twin exactly when the marker was painted.
  DatasetSpec on = small_spec(0);
  DatasetSpec off = on;
  off.spurious_strength = 0.0;
  DatasetSpec half = on;
  half.spurious_strength = 0.5;
  int present = 0;
  const int trials = 400;
  for (int i = 0; i < trials; ++i) {
    const int label = i % 4;
    const VideoClip a = synthesize_clip(half, label, Domain::source, 1000 + i, "x");
    const VideoClip b = synthesize_clip(off, label, Domain::source, 1000 + i, "x");
    present += a.pixels != b.pixels;
  }
  // Binomial(400, 0.5): 99% interval is 200 +/- 2.576 * 10.
  CHECK(present >= 174);
  CHECK(present <= 226);

  for (int label = 0; label < 4; ++label) {
    const VideoClip a = synthesize_clip(on, label, Domain::source, 5, "x");
    const VideoClip b = synthesize_clip(off, label, Domain::source, 5, "x");
    CHECK(a.pixels != b.pixels);
    const VideoClip ta = synthesize_clip(on, label, Domain::target, 5, "x");
    const VideoClip tb = synthesize_clip(off, label, Domain::target, 5, "x");
    CHECK(ta.pixels == tb.pixels);  // never in the target domain
  }
}

TEST_CASE("the marker position is keyed to the class") {
  DatasetSpec on = small_spec(0);
  DatasetSpec off = on;
  off.spurious_strength = 0.0;
  std::set<int> columns;
  for (int label = 0; label < 4; ++label) {
    const VideoClip a = synthesize_clip(on, label, Domain::source, 11, "x");
    const VideoClip b = synthesize_clip(off, label, Domain::source, 11, "x");
    int min_x = a.width;
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        for (int c = 0; c < 3; ++c)
          if (a.pixel(0, y, x, c) != b.pixel(0, y, x, c) && a.pixel(0, y, x, c) != 255) min_x = std::min(min_x, x);
    columns.insert(min_x);
  }
  CHECK(columns.size() == 4);
}

TEST_CASE("dataset generation is deterministic, balanced and disjoint") {
  const DatasetSpec spec = small_spec(7);
  const fs::path a = temp_dir("gen_a");
  const fs::path b = temp_dir("gen_b");
  generate_dataset(spec, a);
  generate_dataset(spec, b);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));

  const Dataset ds = Dataset::open(a);
  CHECK(ds.spec().seed == 7);
  std::set<std::string> ids;
  std::size_t total = 0;
  for (const char* split : {kSourceTrain, kSourceVal, kTargetTest}) {
    REQUIRE(ds.has_split(split));
    std::vector<int> per_class(4, 0);
    for (const ClipRecord& r : ds.records(split)) {
      ++per_class[r.label];
      ids.insert(r.clip_id);
      CHECK(slurp(a / r.path) == slurp(b / r.path));
      CHECK((r.domain == Domain::target) == (std::string(split) == kTargetTest));
      ++total;
    }
    CHECK(per_class == std::vector<int>(4, 3));
  }
  CHECK(ids.size() == total);

  const DatasetSpec other = small_spec(8);
  const fs::path c = temp_dir("gen_c");
  generate_dataset(other, c);
  const ClipRecord& r0 = ds.records(kSourceTrain).front();
  CHECK(slurp(a / r0.path) != slurp(c / r0.path));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
}

TEST_CASE("normalisation constants come from source-train") {
  const DatasetSpec spec = small_spec(3);
  const fs::path dir = temp_dir("norm");
  generate_dataset(spec, dir);
  const Dataset ds = Dataset::open(dir / "manifest.json");
  const Normalization expect = compute_normalization(ds.load_split(kSourceTrain));
  for (int c = 0; c < 3; ++c) {
    CHECK(ds.normalization().mean[c] == doctest::Approx(expect.mean[c]).epsilon(1e-12));
    CHECK(ds.normalization().std[c] == doctest::Approx(expect.std[c]).epsilon(1e-12));
  }
  fs::remove_all(dir);
}

TEST_CASE("compute_normalization matches a direct population estimate") {
  VideoClip clip;
  clip.frames = 1;
  clip.height = 1;
  clip.width = 2;
  clip.pixels = {0, 10, 20, 100, 110, 120};
  const Normalization n = compute_normalization({clip});
  CHECK(n.mean[0] == doctest::Approx(50.0));
  CHECK(n.std[0] == doctest::Approx(50.0));
  CHECK(n.mean[2] == doctest::Approx(70.0));
}

TEST_CASE("clip files round-trip and reject corruption") {
  const DatasetSpec spec = small_spec(4);
  const VideoClip clip = synthesize_clip(spec, 3, Domain::target, 17, "target-test-3-0");
  const fs::path dir = temp_dir("clipio");
  fs::create_directories(dir);
  write_clip(clip, dir / "c.stdv");
  const VideoClip back = read_clip(dir / "c.stdv");
  CHECK(back.frames == clip.frames);
  CHECK(back.height == clip.height);
  CHECK(back.width == clip.width);
  CHECK(back.label == 3);
  CHECK(back.pixels == clip.pixels);

  const std::string bytes = slurp(dir / "c.stdv");
  CHECK(bytes.substr(0, 6) == "STDV1\n");
  {
    std::ofstream os(dir / "bad.stdv", std::ios::binary);
    os << "NOPE!!" << bytes.substr(6);
  }
  CHECK_THROWS(read_clip(dir / "bad.stdv"));
  {
    std::ofstream os(dir / "short.stdv", std::ios::binary);
    os << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS(read_clip(dir / "short.stdv"));
  CHECK_THROWS(read_clip(dir / "missing.stdv"));
  fs::remove_all(dir);
}

TEST_CASE("opening a missing dataset fails with a message") {
  CHECK_THROWS(Dataset::open(temp_dir("nothing_here")));
}
