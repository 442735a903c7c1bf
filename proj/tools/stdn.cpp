// Command-line entry point: generate-data, train, evaluate, ablate, analyze.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stdn/analysis.hpp"
#include "stdn/checkpoint.hpp"
#include "stdn/config.hpp"
#include "stdn/datagen.hpp"
#include "stdn/plot.hpp"
#include "stdn/stats.hpp"
#include "stdn/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stdn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const std::string& tok : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + tok + "' in --seeds");
    }
  }
  if (out.empty()) throw UsageError("--seeds is empty");
  return out;
}

/// Expands "{seed}" in a checkpoint path once per seed; without seeds the
/// path is used as given.
std::vector<fs::path> expand_checkpoints(const std::string& pattern, const std::vector<std::uint64_t>& seeds) {
  const std::string key = "{seed}";
  const auto pos = pattern.find(key);
  if (seeds.empty()) {
    if (pos != std::string::npos) throw UsageError("--checkpoint contains {seed} but --seeds was not given");
    return {fs::path(pattern)};
  }
  if (pos == std::string::npos) {
    if (seeds.size() > 1) throw UsageError("several --seeds need a {seed} placeholder in --checkpoint");
    return {fs::path(pattern)};
  }
  std::vector<fs::path> out;
  for (std::uint64_t s : seeds) {
    std::string p = pattern;
    p.replace(pos, key.size(), std::to_string(s));
    out.emplace_back(p);
  }
  return out;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

bool deterministic_env() {
  const char* v = std::getenv("STDN_DETERMINISTIC");
  return v && std::string(v) == "1";
}

void emit(const json& j, const std::string& out_dir, const std::string& file) {
  if (!out_dir.empty()) write_text_file(fs::path(out_dir) / file, j.dump(2) + "\n");
  std::cout << j.dump() << std::endl;
}

int cmd_generate(const std::string& spec_path, const std::string& out, const std::optional<std::uint64_t>& seed,
                 const std::optional<double>& strength) {
  DatasetSpec spec;
  if (!spec_path.empty()) {
    require_file(spec_path, "spec file");
    std::ifstream is(spec_path);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw std::invalid_argument("malformed spec file: " + std::string(e.what()));
    }
    spec = j.get<DatasetSpec>();
  }
  if (seed) spec.seed = *seed;
  if (strength) spec.spurious_strength = *strength;
  spec.validate();
  const fs::path manifest = generate_dataset(spec, out);
  std::cout << json{{"manifest", manifest.string()}, {"spec", spec}}.dump() << std::endl;
  return 0;
}

TrainConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  require_file(path, "config file");
  return load_train_config(path);
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              const std::optional<std::uint64_t>& seed, const std::optional<int>& epochs, const std::string& variant,
              bool resume, bool quiet) {
  TrainConfig cfg = load_config_or_default(config);
  if (!variant.empty()) cfg = apply_variant(cfg, variant);
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.epochs = *epochs;
  const Dataset ds = Dataset::open(data);
  TrainOptions opts;
  opts.out_dir = out;
  opts.resume = resume;
  opts.log = quiet ? nullptr : &std::cerr;
  TrainResult r = train(cfg, ds, opts);
  json summary = r.summary;
  summary["deterministic"] = deterministic_env();
  write_text_file(fs::path(out) / "summary.json", summary.dump(2) + "\n");
  std::cout << json{{"best_checkpoint", (fs::path(out) / "best.ckpt").string()},
                    {"best_epoch", r.best.epoch},
                    {"best_source_val_accuracy", r.best.source_val_accuracy}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data, const std::string& split,
                 const std::string& seeds, const std::string& out) {
  const std::vector<fs::path> paths = expand_checkpoints(checkpoint, seeds.empty() ? std::vector<std::uint64_t>{}
                                                                                    : parse_seeds(seeds));
  for (const auto& p : paths) require_file(p, "checkpoint");
  const Dataset ds = Dataset::open(data);
  const EvaluationReport rep = evaluate_checkpoints(paths, ds, split);
  if (!out.empty()) {
    std::vector<Bar> bars;
    for (std::size_t i = 0; i < rep.results.size(); ++i) {
      bars.push_back({fs::path(rep.checkpoints[i]).parent_path().filename().string(), 100.0 * rep.results[i].accuracy});
    }
    bars.push_back({"mean", 100.0 * rep.accuracy.mean, 100.0 * rep.accuracy.std});
    write_text_file(fs::path(out) / "evaluation.svg", bar_chart_svg("Accuracy on " + split, "accuracy (%)", bars));
  }
  emit(rep.to_json(), out, "evaluation.json");
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& data, const std::string& variants,
               const std::string& seeds, const std::string& out, bool quiet) {
  TrainConfig cfg = load_config_or_default(config);
  std::vector<std::string> names = variants.empty() ? ablation_variants() : split_list(variants);
  const std::vector<std::uint64_t> seed_list = parse_seeds(seeds);
  const Dataset ds = Dataset::open(data);
  const AblationResult res = run_ablation(cfg, ds, names, seed_list, out, quiet ? nullptr : &std::cerr);
  std::vector<Bar> bars;
  for (const AblationRow& r : res.rows) bars.push_back({r.variant, 100.0 * r.target.mean, 100.0 * r.target.std});
  if (!out.empty()) {
    write_text_file(fs::path(out) / "ablation.md", res.markdown());
    write_text_file(fs::path(out) / "ablation.svg", bar_chart_svg("Target accuracy by variant", "accuracy (%)", bars));
  }
  std::cerr << res.markdown();
  emit(res.to_json(), out, "ablation.json");
  return 0;
}

int cmd_analyze(const std::string& checkpoint, const std::string& data, const std::string& metric,
                const std::string& baseline, const std::string& split, const std::string& seeds,
                const std::string& out) {
  const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector<std::uint64_t>{} : parse_seeds(seeds);
  const std::vector<fs::path> paths = expand_checkpoints(checkpoint, seed_list);
  std::vector<fs::path> base_paths;
  if (metric == "grouping-report") {
    if (baseline.empty()) throw UsageError("grouping-report needs --baseline <checkpoint of a model without grouping>");
    base_paths = expand_checkpoints(baseline, seed_list);
  }
  for (const auto& p : paths) require_file(p, "checkpoint");
  for (const auto& p : base_paths) require_file(p, "baseline checkpoint");
  const Dataset ds = Dataset::open(data);
  if (!ds.has_split(split)) throw std::invalid_argument("dataset has no split '" + split + "'");
  const std::vector<VideoClip> clips = ds.load_split(split);

  json runs = json::array();
  std::vector<double> values;
  std::vector<double> baseline_values;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Checkpoint ck = load_checkpoint(paths[i]);
    const Trainer t(ck);
    json run{{"checkpoint", paths[i].string()}};
    if (metric == "diversity-mse") {
      const CollectedFeatures f = collect_features(t.model(), clips, ck.normalization);
      if (f.temporal.empty()) throw std::invalid_argument("checkpoint has no temporal relation features");
      const double v = diversity_mse(f.temporal);
      run["diversity_mse"] = v;
      values.push_back(v);
    } else if (metric == "davies-bouldin") {
      const CollectedFeatures f = collect_features(t.model(), clips, ck.normalization);
      const FrameDbi dbi = f.assignments.empty()
                               ? kmeans_frame_dbi(f.frame_maps, t.model().config().groups, ck.config.seed)
                               : mean_frame_dbi(f.frame_maps, f.assignments);
      run["partition"] = f.assignments.empty() ? "kmeans" : "argmax_assignment";
      run["dbi"] = dbi.mean;
      run["frames_used"] = dbi.frames_used;
      run["frames_skipped"] = dbi.frames_skipped;
      run["empty_groups"] = dbi.empty_groups;
      values.push_back(dbi.mean);
    } else if (metric == "grouping-report") {
      const Checkpoint bck = load_checkpoint(base_paths[i]);
      const Trainer bt(bck);
      const GroupingReport rep =
          grouping_separation_report(t.model(), ck.normalization, bt.model(), bck.normalization, clips, ck.config.seed);
      if (rep.stdn.empty_groups > 0 || rep.stdn.frames_skipped > 0) {
        std::cerr << "warning: " << rep.stdn.empty_groups << " empty groups after argmax, " << rep.stdn.frames_skipped
                  << " frames excluded\n";
      }
      run["report"] = rep.to_json();
      run["baseline_checkpoint"] = base_paths[i].string();
      values.push_back(rep.stdn.mean);
      baseline_values.push_back(rep.baseline.mean);
    } else {
      throw UsageError("unknown --metric '" + metric + "'");
    }
    runs.push_back(run);
  }
  const MeanStd ms = mean_std(values);
  json result{{"metric", metric}, {"split", split}, {"mean", ms.mean}, {"std", ms.std}, {"runs", runs}};
  std::vector<Bar> bars;
  if (metric == "diversity-mse") {
    result["normalization"] = kDiversityNormalization;
    bars.push_back({"diversity", ms.mean, ms.std});
  } else if (metric == "grouping-report") {
    const MeanStd bs = mean_std(baseline_values);
    result["baseline_mean"] = bs.mean;
    result["baseline_std"] = bs.std;
    result["ratio"] = ms.mean / bs.mean;
    bars.push_back({"STDN", ms.mean, ms.std});
    bars.push_back({"k-means", bs.mean, bs.std});
  } else {
    bars.push_back({"DBI", ms.mean, ms.std});
  }
  if (!out.empty()) write_text_file(fs::path(out) / (metric + ".svg"), bar_chart_svg(metric, "value", bars));
  emit(result, out, metric + ".json");
  return 0;
}

void print_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal grouping and relation network for video domain generalization"};
  app.require_subcommand(1);

  std::string spec_path, out, config, data, checkpoint, split = kTargetTest, seeds, variants, metric, baseline, variant;
  std::optional<std::uint64_t> seed;
  std::optional<double> strength;
  std::optional<int> epochs;
  bool resume = false, quiet = false;

  auto* gen = app.add_subcommand("generate-data", "Write the synthetic benchmark");
  gen->add_option("--spec", spec_path, "Dataset spec JSON (defaults when omitted)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the dataset seed");
  gen->add_option("--spurious-strength", strength, "Override spurious_strength");

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "Training config JSON");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_option("--seed", seed, "Override the config seed");
  tr->add_option("--epochs", epochs, "Override the epoch count");
  tr->add_option("--variant", variant, "Ablation variant (Backbone, +SGM, +TRM, +STRM, +MixStyle, Full)");
  tr->add_flag("--resume", resume, "Continue from <out>/last.ckpt");
  tr->add_flag("--quiet", quiet, "No progress output");

  auto* ev = app.add_subcommand("evaluate", "Score checkpoints on a split");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file; {seed} expands per --seeds")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "Split name")->capture_default_str();
  ev->add_option("--seeds", seeds, "Comma-separated seeds");
  ev->add_option("--out", out, "Directory for evaluation.json and a plot");

  auto* ab = app.add_subcommand("ablate", "Train and score a ladder of variants");
  ab->add_option("--config", config, "Base training config JSON");
  ab->add_option("--data", data, "Dataset directory")->required();
  ab->add_option("--variants", variants, "Comma-separated variants (default: the full ladder)");
  ab->add_option("--seeds", seeds, "Comma-separated seeds")->required();
  ab->add_option("--out", out, "Output directory")->required();
  ab->add_flag("--quiet", quiet, "No progress output");

  auto* an = app.add_subcommand("analyze", "Feature diversity and grouping diagnostics");
  an->add_option("--checkpoint", checkpoint, "Checkpoint file; {seed} expands per --seeds")->required();
  an->add_option("--data", data, "Dataset directory")->required();
  an->add_option("--metric", metric, "diversity-mse, davies-bouldin or grouping-report")
      ->required()
      ->check(CLI::IsMember({"diversity-mse", "davies-bouldin", "grouping-report"}));
  an->add_option("--baseline", baseline, "Checkpoint of a model without grouping (grouping-report)");
  an->add_option("--split", split, "Split name")->capture_default_str();
  an->add_option("--seeds", seeds, "Comma-separated seeds");
  an->add_option("--out", out, "Directory for results and plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(spec_path, out, seed, strength);
    if (tr->parsed()) return cmd_train(config, data, out, seed, epochs, variant, resume, quiet);
    if (ev->parsed()) return cmd_evaluate(checkpoint, data, split, seeds, out);
    if (ab->parsed()) return cmd_ablate(config, data, variants, seeds, out, quiet);
    if (an->parsed()) return cmd_analyze(checkpoint, data, metric, baseline, split, seeds, out);
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    print_error("divergence", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    print_error("invalid_argument", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 1;
}
