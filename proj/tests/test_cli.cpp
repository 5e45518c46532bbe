/* Copyright 2026 The qtlab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qtlab/cli.hpp"

using namespace qtlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string &name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string &s) const { return (path / s).string(); }
};

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Small-but-complete pipeline config so CLI tests stay fast.
nlohmann::json tiny_pipeline_config() {
    return nlohmann::json{
        {"seeds", {7}},
        {"model",
         {{"depth", 2}, {"dim", 16}, {"heads", 4}, {"mlp_ratio", 2}, {"seq_len", 6}, {"num_classes", 4}}},
        {"task_noise", 0.7},
        {"dataset_size", 300},
        {"pretrain_steps", 25},
        {"finetune_steps", 10},
        {"batch_size", 8},
        {"inject_magnitude", 10.0},
        {"inject_fraction", 0.05},
        {"calib_batches", 3},
        {"calib_batch_size", 20},
        {"methods", {"minmax", "percentile"}},
        {"eval_bits", {8}},
        {"sweep_thresholds", {0.9999, 1.0}},
        {"sweep_bits", 7}};
}

int run_cli(std::initializer_list<std::string> args) { return cli::run(std::vector<std::string>(args)); }

} // namespace

TEST_CASE("help exits 0, usage errors exit 2") {
    CHECK(run_cli({"--help"}) == 0);
    CHECK(run_cli({"calibrate", "--help"}) == 0);
    CHECK(run_cli({"--no-such-flag"}) == 2);
    CHECK(run_cli({"calibrate", "--bogus"} ) == 2);
    CHECK(run_cli({}) == 2);                // missing subcommand
    CHECK(run_cli({"frobnicate"}) == 2);    // unknown subcommand
}

TEST_CASE("domain failures exit 1") {
    // calibrate without --model is a configuration error
    CHECK(run_cli({"calibrate", "--method", "minmax"}) == 1);
    // unknown calibration method
    TempDir tmp("qtlab_cli_err");
    CHECK(run_cli({"calibrate", "--model", tmp.sub("nope"), "--method", "sorcery"}) == 1);
}

TEST_CASE("config overrides apply to dotted paths") {
    nlohmann::json j = nlohmann::json::object();
    cli::apply_override(j, "model.depth=3");
    cli::apply_override(j, "methods=[\"minmax\"]");
    cli::apply_override(j, "note=plain text");
    CHECK(j.at("model").at("depth") == 3);
    CHECK(j.at("methods").size() == 1);
    CHECK(j.at("note") == "plain text");
    CHECK_THROWS_AS(cli::apply_override(j, "novalue"), ConfigError);
}

TEST_CASE("train then calibrate/sweep/analyze/quantize-eval chain") {
    TempDir tmp("qtlab_cli_chain");
    const std::string cfg_path = tmp.sub("config.json");
    write_json_file(cfg_path, tiny_pipeline_config());

    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", tmp.sub("train"), "--seed", "7",
                     "--steps", "25"}) == 0);
    REQUIRE(fs::exists(tmp.path / "train" / "checkpoint" / "manifest.json"));
    REQUIRE(fs::exists(tmp.path / "train" / "training_log.ndjson"));

    const std::string model_dir = tmp.sub("train/checkpoint");

    SECTION("calibrate records the requested percentile precision") {
        REQUIRE(run_cli({"calibrate", "--config", cfg_path, "--model", model_dir, "--out",
                         tmp.sub("cal"), "--seed", "7", "--method", "percentile", "--p", "0.99999",
                         "--bits", "8", "--batches", "3", "--batch-size", "20"}) == 0);
        const nlohmann::json report = read_json_file(tmp.path / "cal" / "calibration.json");
        CHECK(report.at("method") == "percentile");
        CHECK(report.at("percentile_p") == 0.99999);
        CHECK(report.at("bits") == 8);
        REQUIRE(report.at("sites").is_array());
        REQUIRE_FALSE(report.at("sites").empty());
        for (const auto &entry : report.at("sites")) {
            CHECK(entry.contains("site_id"));
            CHECK(entry.at("method") == "percentile");
            CHECK(entry.at("range").get<double>() > 0.0);
            CHECK(entry.at("scale").get<double>() > 0.0);
            CHECK(entry.at("bits") == 8);
        }
    }

    SECTION("sweep emits per-threshold rows") {
        REQUIRE(run_cli({"sweep", "--config", cfg_path, "--model", model_dir, "--out", tmp.sub("sw"),
                         "--seed", "7", "--bits", "7", "--batches", "3", "--batch-size", "20"}) == 0);
        const std::string csv = slurp(tmp.path / "sw" / "sweep.csv");
        CHECK(csv.find("threshold,accuracy") == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 thresholds
        const nlohmann::json summary = read_json_file(tmp.path / "sw" / "sweep_summary.json");
        CHECK(summary.contains("best_threshold"));
    }

    SECTION("analyze emits per-site and per-block reports") {
        REQUIRE(run_cli({"analyze", "--config", cfg_path, "--model", model_dir, "--out",
                         tmp.sub("an"), "--seed", "7", "--bits", "8", "--threshold", "0.9999",
                         "--batches", "3", "--batch-size", "20"}) == 0);
        const std::string sites = slurp(tmp.path / "an" / "sites.csv");
        CHECK(sites.find("site_id,block,kind,range_before,range_after,saturation_error,"
                         "precision_error,precision_share,kl") == 0);
        const std::string blocks = slurp(tmp.path / "an" / "blocks.csv");
        CHECK(std::count(blocks.begin(), blocks.end(), '\n') == 3);  // header + 2 blocks
        const nlohmann::json summary = read_json_file(tmp.path / "an" / "analyze_summary.json");
        CHECK(summary.contains("precision_share"));
        CHECK(summary.contains("block_range_spearman"));
    }

    SECTION("quantize-eval reports accuracy and drop") {
        REQUIRE(run_cli({"quantize-eval", "--config", cfg_path, "--model", model_dir, "--out",
                         tmp.sub("qe"), "--seed", "7", "--method", "minmax", "--bits", "8",
                         "--batches", "3", "--batch-size", "20"}) == 0);
        const nlohmann::json summary = read_json_file(tmp.path / "qe" / "eval.json");
        CHECK(summary.at("method") == "minmax");
        CHECK(summary.at("accuracy").get<double>() >= 0.0);
        CHECK(summary.at("fp_accuracy").get<double>() <= 1.0);
        CHECK(summary.contains("accuracy_drop"));
    }

    SECTION("finetune continues from the checkpoint") {
        REQUIRE(run_cli({"finetune", "--config", cfg_path, "--model", model_dir, "--out",
                         tmp.sub("ft"), "--seed", "7", "--steps", "5", "--alpha", "0.5",
                         "--schedule", "linear", "--magnitude", "10", "--fraction", "0.05"}) == 0);
        REQUIRE(fs::exists(tmp.path / "ft" / "checkpoint" / "manifest.json"));
        const nlohmann::json manifest = read_json_file(tmp.path / "ft" / "checkpoint" / "manifest.json");
        CHECK(manifest.at("metadata").at("final_alpha").get<double>() >= 0.0);
        const std::string log = slurp(tmp.path / "ft" / "training_log.ndjson");
        CHECK(std::count(log.begin(), log.end(), '\n') == 5);
    }
}

TEST_CASE("pipeline bundle: schema and byte-identical reruns") {
    TempDir tmp("qtlab_cli_pipeline");
    const std::string cfg_path = tmp.sub("config.json");
    write_json_file(cfg_path, tiny_pipeline_config());

    REQUIRE(run_cli({"pipeline", "--config", cfg_path, "--out", tmp.sub("a")}) == 0);
    REQUIRE(run_cli({"pipeline", "--config", cfg_path, "--out", tmp.sub("b")}) == 0);

    // summary schema
    const nlohmann::json summary = read_json_file(tmp.path / "a" / "summary.json");
    REQUIRE(summary.contains("config"));
    REQUIRE(summary.contains("per_seed"));
    REQUIRE(summary.contains("aggregate"));
    const auto &seed0 = summary.at("per_seed").at(0);
    for (const char *key : {"seed", "baseline_fp_accuracy", "injected_fp_accuracy", "alpha0",
                            "quanttune", "blocks"})
        CHECK(seed0.contains(key));
    for (const char *key : {"fp_accuracy", "metric_start", "metric_end", "mean_range", "accuracy",
                            "drop", "sweep_best_threshold"})
        CHECK(seed0.at("quanttune").contains(key));
    CHECK(summary.at("aggregate").contains("median_drop"));

    // one row per (seed, arm, method, bits) triple
    const std::string results = slurp(tmp.path / "a" / "results.csv");
    const auto lines = std::count(results.begin(), results.end(), '\n');
    CHECK(lines == 1 + 1 * 2 * 2 * 1);  // header + seeds*arms*methods*bits

    // byte-identical reports, manifests excluded (they carry the timestamp)
    for (const char *name : {"results.csv", "sweep.csv", "sites.csv", "blocks.csv", "summary.json",
                             "training_log_alpha0_seed7.ndjson",
                             "training_log_quanttune_seed7.ndjson"}) {
        INFO(name);
        CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
    }

    // checkpoints round-trip identically too
    CHECK(slurp(tmp.path / "a" / "checkpoints" / "quanttune_seed7" / "weights" / "head.weight.bin") ==
          slurp(tmp.path / "b" / "checkpoints" / "quanttune_seed7" / "weights" / "head.weight.bin"));
}

TEST_CASE("steps = 0 pipeline still produces a calibration-only report") {
    TempDir tmp("qtlab_cli_zero");
    nlohmann::json cfg = tiny_pipeline_config();
    cfg["pretrain_steps"] = 0;
    cfg["finetune_steps"] = 0;
    const std::string cfg_path = tmp.sub("config.json");
    write_json_file(cfg_path, cfg);
    REQUIRE(run_cli({"pipeline", "--config", cfg_path, "--out", tmp.sub("out")}) == 0);
    const std::string results = slurp(tmp.path / "out" / "results.csv");
    CHECK(std::count(results.begin(), results.end(), '\n') == 1 + 2 * 2);
    const nlohmann::json summary = read_json_file(tmp.path / "out" / "summary.json");
    CHECK(summary.at("per_seed").at(0).at("alpha0").contains("accuracy"));
}
