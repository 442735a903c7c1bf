#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "stdn_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string& args) {
  static int counter = 0;
  const fs::path out = work() / ("stdout" + std::to_string(counter) + ".txt");
  const fs::path err = work() / ("stderr" + std::to_string(counter++) + ".txt");
  const std::string cmd = "STDN_DETERMINISTIC=1 \"" STDN_CLI_PATH "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WEXITSTATUS(status), slurp(out), slurp(err)};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

const fs::path& dataset() {
  static const fs::path dir = [] {
    write(work() / "spec.json",
          R"({"num_classes": 2, "clips_per_class_per_split": 2, "image_height": 16, "image_width": 16,
              "frames_per_clip": 6, "n_segments": 3, "seed": 4, "spurious_strength": 1.0})");
    write(work() / "config.json",
          R"({"epochs": 1, "batch_size": 4, "eval_batch_size": 4, "lr": 0.01, "n_segments": 3, "groups": 2,
              "spatial_dim": 8, "temporal_dim": 8, "relation_hidden": 6,
              "backbone": {"channels": [4, 4, 6, 6], "norm_groups": 2}})");
    const Run r = run("generate-data --spec \"" + (work() / "spec.json").string() + "\" --out \"" +
                      (work() / "data").string() + "\"");
    REQUIRE(r.code == 0);
    return work() / "data";
  }();
  return dir;
}

std::string common() {
  return "--data \"" + dataset().string() + "\" --config \"" + (work() / "config.json").string() + "\"";
}

}  // namespace

TEST_CASE("generate-data writes the manifest and splits") {
  CHECK(fs::exists(dataset() / "manifest.json"));
  for (const char* s : {"source-train", "source-val", "target-test"}) CHECK(fs::is_directory(dataset() / s));
}

TEST_CASE("train twice gives byte-identical metrics") {
  for (int i : {1, 2}) {
    const Run r = run("train " + common() + " --quiet --seed 1 --out \"" + (work() / ("t" + std::to_string(i))).string() + "\"");
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out).contains("best_checkpoint"));
  }
  CHECK(slurp(work() / "t1" / "metrics.jsonl") == slurp(work() / "t2" / "metrics.jsonl"));
  const json summary = json::parse(slurp(work() / "t1" / "summary.json"));
  CHECK(summary["deterministic"] == true);
  CHECK(summary["seed"] == 1);
}

TEST_CASE("command-line flags override the config file") {
  const Run r = run("train " + common() + " --quiet --epochs 2 --seed 9 --out \"" + (work() / "flags").string() + "\"");
  REQUIRE(r.code == 0);
  const json cfg = json::parse(slurp(work() / "flags" / "config.json"));
  CHECK(cfg["epochs"] == 2);
  CHECK(cfg["seed"] == 9);
  CHECK(cfg["lr"] == 0.01);
}

TEST_CASE("evaluate over seeds reports mean and std") {
  for (int s : {1, 2, 3}) {
    const Run r = run("train " + common() + " --quiet --seed " + std::to_string(s) + " --out \"" +
                      (work() / ("seed" + std::to_string(s))).string() + "\"");
    REQUIRE(r.code == 0);
  }
  const Run r = run("evaluate --data \"" + dataset().string() + "\" --checkpoint \"" +
                    (work() / "seed{seed}" / "best.ckpt").string() + "\" --seeds 1,2,3 --out \"" +
                    (work() / "eval").string() + "\"");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["runs"].size() == 3);
  CHECK(j.contains("accuracy_mean"));
  CHECK(j.contains("accuracy_std"));
  CHECK(j["split"] == "target-test");
  CHECK(fs::exists(work() / "eval" / "evaluation.json"));
  CHECK(fs::exists(work() / "eval" / "evaluation.svg"));
}

TEST_CASE("ablate with two variants gives a two-row table") {
  const Run r = run("ablate " + common() + " --quiet --variants Backbone,Full --seeds 1 --out \"" +
                    (work() / "ablate").string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["rows"].size() == 2);
  const std::string md = slurp(work() / "ablate" / "ablation.md");
  CHECK(md.find("| Backbone |") != std::string::npos);
  CHECK(md.find("| Full |") != std::string::npos);
  CHECK(fs::exists(work() / "ablate" / "plus_SGM") == false);
  CHECK(fs::exists(work() / "ablate" / "Full" / "seed1" / "best.ckpt"));
}

TEST_CASE("analyze metrics") {
  const fs::path ckpt = work() / "seed1" / "best.ckpt";
  REQUIRE(fs::exists(ckpt));
  const Run div = run("analyze --data \"" + dataset().string() + "\" --checkpoint \"" + ckpt.string() +
                      "\" --metric diversity-mse --out \"" + (work() / "an").string() + "\"");
  REQUIRE(div.code == 0);
  const json d = json::parse(div.out);
  CHECK(d["mean"].get<double>() >= 0.0);
  CHECK(d.contains("normalization"));
  CHECK(fs::exists(work() / "an" / "diversity-mse.svg"));

  const Run dbi = run("analyze --data \"" + dataset().string() + "\" --checkpoint \"" + ckpt.string() +
                      "\" --metric davies-bouldin");
  REQUIRE(dbi.code == 0);
  CHECK(json::parse(dbi.out)["runs"][0]["partition"] == "argmax_assignment");

  const fs::path base = work() / "ablate" / "Backbone" / "seed1" / "best.ckpt";
  const Run rep = run("analyze --data \"" + dataset().string() + "\" --checkpoint \"" + ckpt.string() +
                      "\" --baseline \"" + base.string() + "\" --metric grouping-report");
  REQUIRE(rep.code == 0);
  const json g = json::parse(rep.out);
  CHECK(g.contains("baseline_mean"));
  CHECK(g.contains("ratio"));
}

TEST_CASE("failures produce a one-line JSON error record and a nonzero exit") {
  const Run missing = run("evaluate --data \"" + dataset().string() + "\" --checkpoint /nonexistent/x.ckpt");
  CHECK(missing.code != 0);
  const json e = json::parse(missing.err);
  CHECK(e["error"].contains("type"));
  CHECK(e["error"]["message"].get<std::string>().find("x.ckpt") != std::string::npos);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);

  const Run usage = run("analyze --data x --checkpoint y --metric bogus");
  CHECK(usage.code == 2);
  CHECK(json::parse(usage.err)["error"]["type"] == "usage");

  write(work() / "bad.json", R"({"lr": 0.1, "typo_key": 3})");
  const Run bad = run("train --data \"" + dataset().string() + "\" --config \"" + (work() / "bad.json").string() +
                      "\" --out \"" + (work() / "bad").string() + "\"");
  CHECK(bad.code != 0);
  CHECK(json::parse(bad.err)["error"]["message"].get<std::string>().find("typo_key") != std::string::npos);

  const Run nosub = run("");
  CHECK(nosub.code != 0);
}
