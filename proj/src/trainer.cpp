#include "stdn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace stdn {

using nlohmann::json;

Batch make_batch(std::span<const VideoClip* const> clips, int n_segments, SamplingMode mode, Rng* rng,
                 const Normalization& norm) {
  if (clips.empty()) throw std::invalid_argument("make_batch: empty batch");
  if (mode == SamplingMode::train_random && !rng) throw std::invalid_argument("make_batch: random sampling needs rng");
  const VideoClip& first = *clips.front();
  const std::size_t per_video = static_cast<std::size_t>(n_segments) * first.height * first.width * 3;
  Batch b;
  b.frames = Tensor({static_cast<int>(clips.size()) * n_segments, first.height, first.width, 3});
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const VideoClip& clip = *clips[i];
    if (clip.height != first.height || clip.width != first.width) {
      throw std::invalid_argument("make_batch: clips differ in frame size");
    }
    const std::uint64_t seed = rng ? (*rng)() : 0;
    SampledFrames s = sample_segments(clip, n_segments, mode, seed, norm);
    std::copy(s.frames.values().begin(), s.frames.values().end(), b.frames.data() + i * per_video);
    b.labels.push_back(clip.label);
  }
  return b;
}

namespace {

std::vector<int> argmax_rows(const Tensor& logits) {
  const int rows = logits.dim(0);
  const int cols = logits.dim(1);
  std::vector<int> out(rows);
  for (int r = 0; r < rows; ++r) {
    const double* p = logits.data() + static_cast<std::size_t>(r) * cols;
    out[r] = static_cast<int>(std::max_element(p, p + cols) - p);
  }
  return out;
}

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace

json to_json(const EvalResult& r) {
  return json{{"count", r.count},
              {"accuracy", r.accuracy},
              {"loss", r.loss},
              {"per_class_accuracy", r.per_class_accuracy},
              {"per_class_count", r.per_class_count}};
}

Trainer::Trainer(const TrainConfig& cfg, const Normalization& norm)
    : cfg_(cfg), norm_(norm), model_(cfg.model, derive_seed(cfg.seed, {0x11})), rng_(derive_seed(cfg.seed, {0x22})) {
  cfg_.validate();
  for (const auto& e : model_.params().entries()) momentum_.emplace_back(e.var.shape());
}

Trainer::Trainer(const Checkpoint& ckpt) : Trainer(ckpt.config, ckpt.normalization) {
  const auto& entries = model_.params().entries();
  auto restore = [&](const std::vector<NamedTensor>& list, bool params) {
    if (list.size() != entries.size()) {
      throw std::runtime_error("checkpoint has " + std::to_string(list.size()) + " tensors, model expects " +
                               std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const NamedTensor& nt = list[i];
      if (nt.name != entries[i].name || nt.value.shape() != entries[i].var.shape()) {
        throw std::runtime_error("checkpoint tensor '" + nt.name + "' " + shape_str(nt.value.shape()) +
                                 " does not match model tensor '" + entries[i].name + "' " +
                                 shape_str(entries[i].var.shape()));
      }
      if (params) {
        ag::Var v = entries[i].var;
        v.mutable_value() = nt.value;
      } else {
        momentum_[i] = nt.value;
      }
    }
  };
  restore(ckpt.params, true);
  if (!ckpt.momentum.empty()) restore(ckpt.momentum, false);
  if (!ckpt.rng_state.empty()) {
    std::istringstream is(ckpt.rng_state);
    is >> rng_;
    if (!is) throw std::runtime_error("checkpoint generator state is unreadable");
  }
  step_ = ckpt.step;
}

StepResult Trainer::step(std::span<const VideoClip* const> clips) {
  Batch b = make_batch(clips, cfg_.model.n_segments, SamplingMode::train_random, &rng_, norm_);
  ForwardOutput out = model_.forward(b.frames, b.labels, true, &rng_);
  TotalLoss tl = total_loss(out.logits, b.labels, out.emin, out.emax, out.rel, cfg_.lambda_ent, cfg_.lambda_rel);
  if (!std::isfinite(tl.values.total)) {
    throw DivergenceError(step_, tl.values, "training diverged at step " + std::to_string(step_) + ": " +
                                                describe(tl.values));
  }
  model_.params().zero_grad();
  ag::backward(tl.total);
  for (const auto& e : model_.params().entries()) {
    if (!e.var.grad().empty() && !all_finite(e.var.grad())) {
      throw DivergenceError(step_, tl.values, "non-finite gradient for " + e.name + " at step " +
                                                  std::to_string(step_) + ": " + describe(tl.values));
    }
  }
  apply_update();
  ++step_;

  StepResult r;
  r.loss = tl.values;
  const std::vector<int> pred = argmax_rows(out.logits.value());
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  return r;
}

void Trainer::apply_update() {
  const auto& entries = model_.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ag::Var v = entries[i].var;
    const Tensor& g = v.grad();
    if (g.empty()) continue;  // parameter unused by this variant's graph
    Tensor& w = v.mutable_value();
    Tensor& buf = momentum_[i];
    const double wd = entries[i].decay ? cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = g[k] + wd * w[k];
      buf[k] = cfg_.momentum * buf[k] + d;
      w[k] -= cfg_.lr * buf[k];
    }
  }
}

EvalResult Trainer::evaluate(std::span<const VideoClip> clips) const {
  ag::NoGradGuard no_grad;
  EvalResult r;
  const int c = cfg_.model.num_classes;
  r.per_class_count.assign(c, 0);
  std::vector<int> per_class_correct(c, 0);
  Rng subset_rng(derive_seed(cfg_.seed, {0x33}));
  double loss_sum = 0.0;
  const std::size_t bs = static_cast<std::size_t>(cfg_.eval_batch_size);
  for (std::size_t start = 0; start < clips.size(); start += bs) {
    std::vector<const VideoClip*> ptrs;
    for (std::size_t i = start; i < std::min(clips.size(), start + bs); ++i) ptrs.push_back(&clips[i]);
    Batch b = make_batch(ptrs, cfg_.model.n_segments, SamplingMode::test_center, nullptr, norm_);
    ForwardOutput out = model_.forward(b.frames, {}, false, &subset_rng);
    loss_sum += ag::cross_entropy(out.logits, b.labels).value()[0] * static_cast<double>(ptrs.size());
    const std::vector<int> pred = argmax_rows(out.logits.value());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int y = b.labels[i];
      if (y < 0 || y >= c) throw std::invalid_argument("evaluate: label outside the model's classes");
      ++r.per_class_count[y];
      per_class_correct[y] += pred[i] == y;
      r.predictions.push_back(pred[i]);
    }
  }
  r.count = static_cast<int>(clips.size());
  int correct = 0;
  for (int k = 0; k < c; ++k) {
    correct += per_class_correct[k];
    r.per_class_accuracy.push_back(r.per_class_count[k] ? static_cast<double>(per_class_correct[k]) / r.per_class_count[k]
                                                        : 0.0);
  }
  if (r.count > 0) {
    r.accuracy = static_cast<double>(correct) / r.count;
    r.loss = loss_sum / r.count;
  }
  return r;
}

Checkpoint Trainer::snapshot(int epoch, double val_accuracy, double val_loss) const {
  Checkpoint ck;
  ck.config = cfg_;
  ck.normalization = norm_;
  ck.epoch = epoch;
  ck.step = step_;
  ck.source_val_accuracy = val_accuracy;
  ck.source_val_loss = val_loss;
  ck.rng_state = rng_to_string(rng_);
  const auto& entries = model_.params().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ck.params.push_back({entries[i].name, entries[i].var.value()});
    ck.momentum.push_back({entries[i].name, momentum_[i]});
  }
  return ck;
}

TrainConfig reconcile(TrainConfig cfg, const DatasetSpec& spec) {
  cfg.model.num_classes = spec.num_classes;
  cfg.model.backbone.input_height = spec.image_height;
  cfg.model.backbone.input_width = spec.image_width;
  if (cfg.model.n_segments > spec.frames_per_clip) {
    throw std::invalid_argument("n_segments " + std::to_string(cfg.model.n_segments) + " exceeds the " +
                                std::to_string(spec.frames_per_clip) + " frames per clip");
  }
  return cfg;
}

namespace {

bool better(const Checkpoint& cand, const Checkpoint& best, bool have_best) {
  if (!have_best) return true;
  if (cand.source_val_accuracy != best.source_val_accuracy) return cand.source_val_accuracy > best.source_val_accuracy;
  return cand.source_val_loss < best.source_val_loss;
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const Dataset& data, const TrainOptions& opts) {
  const TrainConfig cfg = reconcile(cfg_in, data.spec());
  cfg.validate();
  for (const char* split : {kSourceTrain, kSourceVal}) {
    if (!data.has_split(split)) throw std::invalid_argument(std::string("dataset has no ") + split + " split");
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<VideoClip> train_clips = data.load_split(kSourceTrain);
  const std::vector<VideoClip> val_clips = data.load_split(kSourceVal);
  if (cfg.max_train_clips > 0 && static_cast<std::size_t>(cfg.max_train_clips) < train_clips.size()) {
    Rng pick(derive_seed(cfg.seed, {0x44}));
    std::shuffle(train_clips.begin(), train_clips.end(), pick);
    train_clips.resize(static_cast<std::size_t>(cfg.max_train_clips));
  }
  if (train_clips.empty()) throw std::invalid_argument("source-train split is empty");

  const bool to_disk = !opts.out_dir.empty();
  TrainResult result;
  bool have_best = false;
  int start_epoch = 1;
  std::optional<Trainer> trainer;
  if (opts.resume) {
    if (!to_disk) throw std::invalid_argument("resume needs an output directory");
    Checkpoint last = load_checkpoint(opts.out_dir / "last.ckpt");
    trainer.emplace(last);
    start_epoch = last.epoch + 1;
    result.last = std::move(last);
    if (std::filesystem::exists(opts.out_dir / "best.ckpt")) {
      result.best = load_checkpoint(opts.out_dir / "best.ckpt");
      have_best = true;
    }
  } else {
    trainer.emplace(cfg, data.normalization());
  }

  std::ofstream metrics;
  if (to_disk) {
    std::filesystem::create_directories(opts.out_dir);
    save_train_config(cfg, opts.out_dir / "config.json");
    metrics.open(opts.out_dir / "metrics.jsonl", opts.resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot write metrics in " + opts.out_dir.string());
  }

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  double last_train_acc = 0.0;
  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_clips.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), trainer->rng());
    double acc_sum = 0.0;
    int acc_n = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const VideoClip*> ptrs;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) ptrs.push_back(&train_clips[order[i]]);
      StepResult r;
      try {
        r = trainer->step(ptrs);
      } catch (const DivergenceError& e) {
        if (to_disk) {
          metrics << json{{"kind", "divergence"}, {"step", e.step()}, {"epoch", epoch}, {"loss", e.loss()},
                          {"message", e.what()}}.dump()
                  << '\n';
        }
        throw;
      }
      acc_sum += r.accuracy * static_cast<double>(ptrs.size());
      acc_n += static_cast<int>(ptrs.size());
      if (to_disk) {
        metrics << json{{"kind", "step"}, {"step", trainer->steps()}, {"epoch", epoch}, {"split", kSourceTrain},
                        {"loss", r.loss}, {"accuracy", r.accuracy}}.dump()
                << '\n';
      }
    }
    last_train_acc = acc_n ? acc_sum / acc_n : 0.0;
    const EvalResult v = trainer->evaluate(val_clips);
    json epoch_line{{"kind", "epoch"},          {"epoch", epoch},       {"step", trainer->steps()},
                    {"split", kSourceVal},      {"accuracy", v.accuracy}, {"loss", v.loss},
                    {"per_class_accuracy", v.per_class_accuracy}, {"train_accuracy", last_train_acc}};
    if (to_disk) metrics << epoch_line.dump() << '\n' << std::flush;
    result.epochs.push_back(epoch_line);
    if (opts.log) {
      *opts.log << "[" << cfg.variant << " seed " << cfg.seed << "] epoch " << epoch << "/" << cfg.epochs
                << " train_acc " << last_train_acc << " val_acc " << v.accuracy << " val_loss " << v.loss << std::endl;
    }
    Checkpoint snap = trainer->snapshot(epoch, v.accuracy, v.loss);
    if (better(snap, result.best, have_best)) {
      result.best = snap;
      have_best = true;
      if (to_disk) save_checkpoint(result.best, opts.out_dir / "best.ckpt");
    }
    if (to_disk) save_checkpoint(snap, opts.out_dir / "last.ckpt");
    result.last = std::move(snap);
  }
  if (!have_best) throw std::runtime_error("no epoch was run");

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.summary = json{{"variant", cfg.variant},
                        {"seed", cfg.seed},
                        {"epochs", cfg.epochs},
                        {"steps", trainer->steps()},
                        {"best_epoch", result.best.epoch},
                        {"best_source_val_accuracy", result.best.source_val_accuracy},
                        {"best_source_val_loss", result.best.source_val_loss},
                        {"final_source_val_accuracy", result.last.source_val_accuracy},
                        {"final_train_accuracy", last_train_acc},
                        {"train_clips", train_clips.size()},
                        {"parameter_count", trainer->model().params().scalar_count()},
                        {"seconds", seconds},
                        {"config", to_json(cfg)}};
  if (to_disk) {
    std::ofstream os(opts.out_dir / "summary.json");
    os << result.summary.dump(2) << '\n';
  }
  return result;
}

EvalResult evaluate_checkpoint(const Checkpoint& ckpt, std::span<const VideoClip> clips) {
  Trainer t(ckpt);
  return t.evaluate(clips);
}

json EvaluationReport::to_json() const {
  json runs = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    json r = stdn::to_json(results[i]);
    r["checkpoint"] = checkpoints[i];
    runs.push_back(r);
  }
  return json{{"split", split},
              {"accuracy_mean", accuracy.mean},
              {"accuracy_std", accuracy.std},
              {"per_class_accuracy_mean", per_class_mean},
              {"runs", runs}};
}

EvaluationReport evaluate_checkpoints(std::span<const std::filesystem::path> paths, const Dataset& data,
                                      const std::string& split) {
  if (paths.empty()) throw std::invalid_argument("no checkpoints to evaluate");
  if (!data.has_split(split)) throw std::invalid_argument("dataset has no split '" + split + "'");
  const std::vector<VideoClip> clips = data.load_split(split);
  EvaluationReport rep;
  rep.split = split;
  std::vector<double> accs;
  for (const auto& p : paths) {
    const Checkpoint ck = load_checkpoint(p);
    const DatasetSpec& spec = data.spec();
    const BackboneConfig& bb = ck.config.model.backbone;
    if (ck.config.model.num_classes != spec.num_classes || bb.input_height != spec.image_height ||
        bb.input_width != spec.image_width) {
      throw std::invalid_argument("checkpoint " + p.string() + " was trained for a different dataset shape");
    }
    rep.checkpoints.push_back(p.string());
    rep.results.push_back(evaluate_checkpoint(ck, clips));
    accs.push_back(rep.results.back().accuracy);
  }
  rep.accuracy = mean_std(accs);
  const std::size_t c = rep.results.front().per_class_accuracy.size();
  rep.per_class_mean.assign(c, 0.0);
  for (const EvalResult& r : rep.results) {
    for (std::size_t k = 0; k < c; ++k) rep.per_class_mean[k] += r.per_class_accuracy[k] / rep.results.size();
  }
  return rep;
}

std::string variant_slug(const std::string& variant) {
  std::string s;
  for (char ch : variant) {
    if (ch == '+') {
      s += "plus_";
    } else if (std::isalnum(static_cast<unsigned char>(ch))) {
      s += ch;
    } else {
      s += '_';
    }
  }
  return s;
}

std::string AblationResult::markdown() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << "| Variant | Target acc. (%) | Per seed | Source-val acc. (%) |\n";
  os << "|---|---|---|---|\n";
  for (const AblationRow& r : rows) {
    os << "| " << r.variant << " | " << 100.0 * r.target.mean << " ± " << 100.0 * r.target.std << " | ";
    for (std::size_t i = 0; i < r.target_accuracy.size(); ++i) {
      os << (i ? ", " : "") << 100.0 * r.target_accuracy[i];
    }
    os << " | " << 100.0 * mean_std(r.source_val_accuracy).mean << " |\n";
  }
  return os.str();
}

json AblationResult::to_json() const {
  json out = json::array();
  for (const AblationRow& r : rows) {
    out.push_back({{"variant", r.variant},
                   {"seeds", r.seeds},
                   {"target_accuracy", r.target_accuracy},
                   {"source_val_accuracy", r.source_val_accuracy},
                   {"target_mean", r.target.mean},
                   {"target_std", r.target.std}});
  }
  return json{{"rows", out}};
}

AblationResult run_ablation(const TrainConfig& base, const Dataset& data, std::span<const std::string> variants,
                            std::span<const std::uint64_t> seeds, const std::filesystem::path& out_dir,
                            std::ostream* log) {
  if (variants.empty() || seeds.empty()) throw std::invalid_argument("ablation needs variants and seeds");
  if (!data.has_split(kTargetTest)) throw std::invalid_argument("dataset has no target-test split");
  for (const std::string& v : variants) (void)apply_variant(base, v);  // fail before any training
  const std::vector<VideoClip> target = data.load_split(kTargetTest);
  AblationResult res;
  for (const std::string& v : variants) {
    AblationRow row;
    row.variant = v;
    std::vector<Checkpoint> cks;
    for (std::uint64_t s : seeds) {
      TrainConfig cfg = apply_variant(base, v);
      cfg.seed = s;
      TrainOptions opts;
      opts.log = log;
      if (!out_dir.empty()) opts.out_dir = out_dir / variant_slug(v) / ("seed" + std::to_string(s));
      TrainResult tr = train(cfg, data, opts);
      const EvalResult ev = evaluate_checkpoint(tr.best, target);
      if (log) *log << "[" << v << " seed " << s << "] target-test accuracy " << ev.accuracy << std::endl;
      row.seeds.push_back(s);
      row.target_accuracy.push_back(ev.accuracy);
      row.source_val_accuracy.push_back(tr.best.source_val_accuracy);
      cks.push_back(std::move(tr.best));
    }
    row.target = mean_std(row.target_accuracy);
    res.rows.push_back(std::move(row));
    res.checkpoints.push_back(std::move(cks));
  }
  return res;
}

}  // namespace stdn
