#include "stdn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "stdn/trainer.hpp"

namespace stdn {

namespace {

constexpr double kCentroidEps = 1e-12;

double sq_dist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

double normalized_pair_mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("normalized_pair_mse: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = 0.5 * (na + nb);
  return denom > 0.0 ? diff / denom : 0.0;
}

double diversity_mse(std::span<const Tensor> per_video) {
  if (per_video.empty()) throw std::invalid_argument("diversity_mse: no videos");
  double total = 0.0;
  for (const Tensor& t : per_video) {
    if (t.rank() != 2) throw std::invalid_argument("diversity_mse: expected [scales, D] per video");
    const int s = t.dim(0);
    const int d = t.dim(1);
    if (s < 2) throw std::invalid_argument("diversity_mse: needs at least two temporal scales (N >= 3)");
    double sum = 0.0;
    int pairs = 0;
    for (int i = 0; i < s; ++i) {
      for (int j = i + 1; j < s; ++j) {
        sum += normalized_pair_mse(std::span(t.data() + static_cast<std::size_t>(i) * d, d),
                                   std::span(t.data() + static_cast<std::size_t>(j) * d, d));
        ++pairs;
      }
    }
    total += sum / pairs;
  }
  return total / static_cast<double>(per_video.size());
}

double davies_bouldin(const Tensor& points, std::span<const int> labels) {
  if (points.rank() != 2) throw std::invalid_argument("davies_bouldin: points must be [P, D]");
  const int p = points.dim(0);
  const int d = points.dim(1);
  if (labels.size() != static_cast<std::size_t>(p)) throw std::invalid_argument("davies_bouldin: label count mismatch");
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("davies_bouldin: negative label");
    k = std::max(k, l + 1);
  }
  std::vector<double> centroid(static_cast<std::size_t>(k) * d, 0.0);
  std::vector<int> count(k, 0);
  for (int i = 0; i < p; ++i) {
    ++count[labels[i]];
    for (int j = 0; j < d; ++j) centroid[static_cast<std::size_t>(labels[i]) * d + j] += points[static_cast<std::size_t>(i) * d + j];
  }
  std::vector<int> live;
  for (int c = 0; c < k; ++c) {
    if (count[c] == 0) continue;
    live.push_back(c);
    for (int j = 0; j < d; ++j) centroid[static_cast<std::size_t>(c) * d + j] /= count[c];
  }
  if (live.size() < 2) throw std::invalid_argument("davies_bouldin: needs at least two non-empty clusters");
  std::vector<double> scatter(k, 0.0);
  for (int i = 0; i < p; ++i) {
    const int c = labels[i];
    scatter[c] += std::sqrt(sq_dist(points.data() + static_cast<std::size_t>(i) * d,
                                    centroid.data() + static_cast<std::size_t>(c) * d, d));
  }
  for (int c : live) scatter[c] /= count[c];
  double total = 0.0;
  for (int a : live) {
    double worst = 0.0;
    for (int b : live) {
      if (a == b) continue;
      const double sep = std::sqrt(sq_dist(centroid.data() + static_cast<std::size_t>(a) * d,
                                           centroid.data() + static_cast<std::size_t>(b) * d, d));
      worst = std::max(worst, (scatter[a] + scatter[b]) / std::max(sep, kCentroidEps));
    }
    total += worst;
  }
  return total / static_cast<double>(live.size());
}

KMeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iter) {
  if (points.rank() != 2) throw std::invalid_argument("kmeans: points must be [P, D]");
  const int p = points.dim(0);
  const int d = points.dim(1);
  if (k < 1 || k > p) throw std::invalid_argument("kmeans: k must lie in [1, number of points]");
  Rng rng(seed);
  auto row = [&](int i) { return points.data() + static_cast<std::size_t>(i) * d; };

  KMeansResult r;
  r.centroids = Tensor({k, d});
  auto cen = [&](int c) { return r.centroids.data() + static_cast<std::size_t>(c) * d; };
  std::vector<double> nearest(p, std::numeric_limits<double>::infinity());
  int pick = uniform_int(rng, 0, p - 1);
  for (int c = 0; c < k; ++c) {
    std::copy(row(pick), row(pick) + d, cen(c));
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(row(i), cen(c), d));
      total += nearest[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = uniform_int(rng, 0, p - 1);
      continue;
    }
    double u = uniform(rng, 0.0, total);
    pick = p - 1;
    for (int i = 0; i < p; ++i) {
      u -= nearest[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
  }

  r.labels.assign(p, -1);
  std::vector<int> count(k);
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    bool changed = false;
    for (int i = 0; i < p; ++i) {
      int best = 0;
      double best_d = sq_dist(row(i), cen(0), d);
      for (int c = 1; c < k; ++c) {
        const double dd = sq_dist(row(i), cen(c), d);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (r.labels[i] != best) {
        r.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    r.centroids.fill(0.0);
    std::fill(count.begin(), count.end(), 0);
    for (int i = 0; i < p; ++i) {
      ++count[r.labels[i]];
      for (int j = 0; j < d; ++j) cen(r.labels[i])[j] += row(i)[j];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        for (int j = 0; j < d; ++j) cen(c)[j] /= count[c];
        continue;
      }
      // Re-seed an empty cluster at the point farthest from its centroid.
      int far = 0;
      double far_d = -1.0;
      for (int i = 0; i < p; ++i) {
        const double dd = sq_dist(row(i), cen(r.labels[i]), d);
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      std::copy(row(far), row(far) + d, cen(c));
    }
  }
  r.iterations = std::min(r.iterations, max_iter);
  return r;
}

CollectedFeatures collect_features(const StdnModel& model, std::span<const VideoClip> clips, const Normalization& norm,
                                   int batch_size) {
  ag::NoGradGuard no_grad;
  const ModelConfig& cfg = model.config();
  CollectedFeatures out;
  Rng subset_rng(derive_seed(0, {0x55}));
  for (std::size_t start = 0; start < clips.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const VideoClip*> ptrs;
    for (std::size_t i = start; i < std::min(clips.size(), start + batch_size); ++i) ptrs.push_back(&clips[i]);
    Batch b = make_batch(ptrs, cfg.n_segments, SamplingMode::test_center, nullptr, norm);
    ForwardOutput f = model.forward(b.frames, {}, false, &subset_rng);
    const Tensor& maps = f.feature_maps.value();
    const int frames = maps.dim(0);
    const int hw = maps.dim(1) * maps.dim(2);
    const int d = maps.dim(3);
    for (int t = 0; t < frames; ++t) {
      const double* src = maps.data() + static_cast<std::size_t>(t) * hw * d;
      out.frame_maps.emplace_back(Shape{hw, d}, std::vector<double>(src, src + static_cast<std::size_t>(hw) * d));
    }
    if (f.grouping) {
      const Tensor& q = f.grouping->assignments.value();  // [F, HW, K]
      const int k = q.dim(2);
      for (int t = 0; t < frames; ++t) {
        std::vector<int> lab(hw);
        for (int i = 0; i < hw; ++i) {
          const double* qi = q.data() + (static_cast<std::size_t>(t) * hw + i) * k;
          lab[i] = static_cast<int>(std::max_element(qi, qi + k) - qi);
        }
        out.assignments.push_back(std::move(lab));
      }
    }
    if (!f.temporal.empty()) {
      const int scales = static_cast<int>(f.temporal.size());
      const int dt = f.temporal.front().shape()[1];
      for (std::size_t v = 0; v < ptrs.size(); ++v) {
        Tensor z({scales, dt});
        for (int m = 0; m < scales; ++m) {
          const double* src = f.temporal[m].value().data() + v * dt;
          std::copy(src, src + dt, z.data() + static_cast<std::size_t>(m) * dt);
        }
        out.temporal.push_back(std::move(z));
      }
    }
  }
  return out;
}

FrameDbi mean_frame_dbi(std::span<const Tensor> frame_maps, std::span<const std::vector<int>> labels) {
  if (frame_maps.size() != labels.size()) throw std::invalid_argument("mean_frame_dbi: frame/label count mismatch");
  FrameDbi r;
  double sum = 0.0;
  for (std::size_t f = 0; f < frame_maps.size(); ++f) {
    const std::vector<int>& lab = labels[f];
    const int k = lab.empty() ? 0 : *std::max_element(lab.begin(), lab.end()) + 1;
    std::vector<int> count(k, 0);
    for (int l : lab) ++count[l];
    const int live = static_cast<int>(std::count_if(count.begin(), count.end(), [](int c) { return c > 0; }));
    r.empty_groups += k - live;
    if (live < 2) {
      ++r.frames_skipped;
      continue;
    }
    sum += davies_bouldin(frame_maps[f], lab);
    ++r.frames_used;
  }
  if (r.frames_used == 0) throw std::runtime_error("no frame has two or more non-empty groups");
  r.mean = sum / r.frames_used;
  return r;
}

FrameDbi kmeans_frame_dbi(std::span<const Tensor> frame_maps, int k, std::uint64_t seed) {
  std::vector<std::vector<int>> labels;
  labels.reserve(frame_maps.size());
  for (std::size_t f = 0; f < frame_maps.size(); ++f) {
    labels.push_back(kmeans(frame_maps[f], k, derive_seed(seed, {f})).labels);
  }
  return mean_frame_dbi(frame_maps, labels);
}

nlohmann::json GroupingReport::to_json() const {
  auto part = [](const FrameDbi& f) {
    return nlohmann::json{{"dbi", f.mean},
                          {"frames_used", f.frames_used},
                          {"frames_skipped", f.frames_skipped},
                          {"empty_groups", f.empty_groups}};
  };
  return nlohmann::json{{"groups", groups}, {"stdn", part(stdn)}, {"kmeans_baseline", part(baseline)}, {"ratio", ratio}};
}

GroupingReport grouping_separation_report(const StdnModel& grouped, const Normalization& grouped_norm,
                                          const StdnModel& baseline, const Normalization& baseline_norm,
                                          std::span<const VideoClip> clips, std::uint64_t seed) {
  if (!grouped.config().grouping) throw std::invalid_argument("grouping report: first model has no spatial grouping");
  if (baseline.config().grouping) throw std::invalid_argument("grouping report: baseline model must not group");
  GroupingReport r;
  r.groups = grouped.config().groups;
  const CollectedFeatures g = collect_features(grouped, clips, grouped_norm);
  r.stdn = mean_frame_dbi(g.frame_maps, g.assignments);
  const CollectedFeatures b = collect_features(baseline, clips, baseline_norm);
  r.baseline = kmeans_frame_dbi(b.frame_maps, r.groups, seed);
  r.ratio = r.stdn.mean / r.baseline.mean;
  return r;
}

}  // namespace stdn
