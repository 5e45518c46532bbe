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
#pragma once

#include <chrono>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "qtlab/experiment.hpp"

namespace qtlab::cli {

inline ToyTransformerConfig model_config_for_seed(const PipelineConfig &cfg, std::uint64_t seed) {
    ToyTransformerConfig mc = cfg.model;
    mc.seed = mix_hash(seed, 0x0de1);
    return mc;
}

inline SyntheticTask::Config task_config_for_seed(const PipelineConfig &cfg, std::uint64_t seed) {
    SyntheticTask::Config tc;
    tc.num_classes = cfg.model.num_classes;
    tc.seq_len = cfg.model.seq_len;
    tc.dim = cfg.model.dim;
    tc.dataset_size = cfg.dataset_size;
    tc.noise = cfg.task_noise;
    tc.seed = mix_hash(seed, 0x7a5c);
    return tc;
}

/// Apply one `dotted.path=value` override onto a JSON config. The value is
/// parsed as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json &config, const std::string &kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value, got '" + kv + "'");
    const std::string path = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error &) {
        value = raw;
    }
    nlohmann::json *node = &config;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty())
            throw ConfigError("override path has an empty segment: '" + path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "qtlab-out";
    std::string model_dir;
    std::uint64_t seed = 1;
    std::vector<std::string> sets;
};

inline nlohmann::json load_config_json(const CommonOpts &opts) {
    nlohmann::json j = nlohmann::json::object();
    if (!opts.config_path.empty())
        j = read_json_file(opts.config_path);
    for (const auto &kv : opts.sets)
        apply_override(j, kv);
    return j;
}

inline PipelineConfig pipeline_config_from(const nlohmann::json &j, std::uint64_t seed) {
    PipelineConfig cfg = j.empty() ? PipelineConfig{} : j.get<PipelineConfig>();
    if (!j.contains("seeds") && !j.contains("seed"))
        cfg.seeds = {seed};
    return cfg;
}

inline void write_manifest(const fs::path &out_dir, const std::string &command,
                           const nlohmann::json &config, const std::vector<std::string> &artifacts) {
    nlohmann::json m;
    m["command"] = command;
    m["config"] = config;
    m["artifacts"] = artifacts;
    m["created_at_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    write_json_file(out_dir / "manifest.json", m);
}

inline void write_training_log(const fs::path &path, const FinetuneResult &result) {
    std::ofstream log(path);
    for (const auto &rec : result.log)
        log << nlohmann::json(rec).dump() << '\n';
}

inline void write_site_csv(const fs::path &path, const ToyTransformer &model,
                           const std::vector<ErrorDecomposition> &sites) {
    CsvWriter csv(path, {"site_id", "block", "kind", "range_before", "range_after", "saturation_error",
                         "precision_error", "precision_share", "kl"});
    for (const auto &d : sites) {
        const ObserverSite &site = model.site(d.site_id);
        csv.write_row({d.site_id, std::to_string(site.block_index), to_string(site.kind),
                       format_double(d.range_before), format_double(d.range_after),
                       format_double(d.saturation_error), format_double(d.precision_error),
                       format_double(d.precision_share), format_double(d.kl_divergence)});
    }
}

// -- subcommand bodies -------------------------------------------------------

inline int cmd_train(const CommonOpts &opts, std::size_t steps_override, std::size_t batch_override,
                     double alpha, const std::string &schedule) {
    const nlohmann::json cj = load_config_json(opts);
    PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    const std::uint64_t seed = cfg.seeds.front();
    const SyntheticTask task(task_config_for_seed(cfg, seed));
    ToyTransformer model(model_config_for_seed(cfg, seed));

    TrainConfig tc;
    tc.steps = steps_override ? steps_override : cfg.pretrain_steps;
    tc.batch_size = batch_override ? batch_override : cfg.batch_size;
    tc.optimizer = cfg.pretrain_optimizer;
    tc.outlier.alpha = alpha;
    if (alpha > 0.0) {
        tc.outlier.schedule = schedule == "constant" ? OutlierLossConfig::Schedule::Constant
                              : schedule == "cosine" ? OutlierLossConfig::Schedule::CosineDecay
                                                     : OutlierLossConfig::Schedule::LinearDecay;
        tc.outlier.total_steps = tc.steps;
    }
    tc.seed = mix_hash(seed, 0x9a5e);
    const FinetuneResult result = finetune(model, task, tc);
    const double acc = evaluate_accuracy(model, task);

    fs::create_directories(opts.out_dir);
    nlohmann::json meta;
    meta["steps"] = tc.steps;
    meta["final_alpha"] = result.final_alpha;
    meta["seed"] = seed;
    save_checkpoint(fs::path(opts.out_dir) / "checkpoint", make_checkpoint(model, meta));
    write_training_log(fs::path(opts.out_dir) / "training_log.ndjson", result);
    nlohmann::json summary;
    summary["fp_accuracy"] = acc;
    summary["steps"] = tc.steps;
    summary["aborted"] = result.aborted;
    write_json_file(fs::path(opts.out_dir) / "summary.json", summary);
    write_manifest(opts.out_dir, "train", cj,
                   {"checkpoint", "training_log.ndjson", "summary.json"});
    std::cout << "fp_accuracy " << format_double(acc) << "\n";
    return 0;
}

inline int cmd_finetune(const CommonOpts &opts, std::size_t steps_override, std::size_t batch_override,
                        double alpha, const std::string &schedule, double magnitude, double fraction) {
    if (opts.model_dir.empty())
        throw ConfigError("finetune requires --model <checkpoint dir>");
    const nlohmann::json cj = load_config_json(opts);
    PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    const std::uint64_t seed = cfg.seeds.front();
    ToyTransformer model = model_from_checkpoint(load_checkpoint(opts.model_dir));
    cfg.model = model.config();
    const SyntheticTask task(task_config_for_seed(cfg, seed));

    if (magnitude > 1.0)
        model.inject_outliers(magnitude, fraction);

    TrainConfig tc;
    tc.steps = steps_override ? steps_override : cfg.finetune_steps;
    tc.batch_size = batch_override ? batch_override : cfg.batch_size;
    tc.optimizer = cfg.finetune_optimizer;
    tc.outlier.alpha = alpha;
    tc.outlier.schedule = schedule == "constant" ? OutlierLossConfig::Schedule::Constant
                          : schedule == "cosine" ? OutlierLossConfig::Schedule::CosineDecay
                                                 : OutlierLossConfig::Schedule::LinearDecay;
    if (tc.outlier.schedule != OutlierLossConfig::Schedule::Constant)
        tc.outlier.total_steps = tc.steps;
    tc.seed = mix_hash(seed, 0xf17e);
    const FinetuneResult result = finetune(model, task, tc);
    const double acc = evaluate_accuracy(model, task);

    fs::create_directories(opts.out_dir);
    nlohmann::json meta;
    meta["steps"] = tc.steps;
    meta["final_alpha"] = result.final_alpha;
    meta["seed"] = seed;
    save_checkpoint(fs::path(opts.out_dir) / "checkpoint", make_checkpoint(model, meta));
    write_training_log(fs::path(opts.out_dir) / "training_log.ndjson", result);
    nlohmann::json summary;
    summary["fp_accuracy"] = acc;
    summary["aborted"] = result.aborted;
    write_json_file(fs::path(opts.out_dir) / "summary.json", summary);
    write_manifest(opts.out_dir, "finetune", cj,
                   {"checkpoint", "training_log.ndjson", "summary.json"});
    std::cout << "fp_accuracy " << format_double(acc) << "\n";
    return 0;
}

inline int cmd_calibrate(const CommonOpts &opts, const std::string &method, int bits,
                         std::size_t batches, std::size_t batch_size, double p) {
    if (opts.model_dir.empty())
        throw ConfigError("calibrate requires --model <checkpoint dir>");
    const nlohmann::json cj = load_config_json(opts);
    PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    const std::uint64_t seed = cfg.seeds.front();
    cfg.percentile_p = p;
    const ToyTransformer model = model_from_checkpoint(load_checkpoint(opts.model_dir));
    cfg.model = model.config();
    const SyntheticTask task(task_config_for_seed(cfg, seed));

    const auto stats = collect_stats(model, task.calibration_batches(batches, batch_size));
    const CalibrationMethod m = cfg.method_by_name(method);
    std::vector<CalibrationEntry> entries;
    for (const auto &[site_id, s] : stats) {
        if (s.sample_count() == 0 || !(s.max_abs() > 0.0))
            continue;
        const QuantSpec spec = calibrate(s, m, bits);
        entries.push_back(CalibrationEntry{site_id, m.name(), spec.range(), spec.scale, bits});
    }
    fs::create_directories(opts.out_dir);
    nlohmann::json report = nlohmann::json::array();
    for (const auto &e : entries)
        report.push_back(e);
    nlohmann::json doc;
    doc["method"] = m.name();
    doc["bits"] = bits;
    doc["batches"] = batches;
    doc["batch_size"] = batch_size;
    if (m.kind == CalibrationMethod::Kind::Percentile)
        doc["percentile_p"] = p;
    doc["sites"] = std::move(report);
    write_json_file(fs::path(opts.out_dir) / "calibration.json", doc);
    write_manifest(opts.out_dir, "calibrate", cj, {"calibration.json"});
    std::cout << "calibrated " << entries.size() << " sites\n";
    return 0;
}

inline int cmd_sweep(const CommonOpts &opts, int bits, std::size_t batches, std::size_t batch_size) {
    if (opts.model_dir.empty())
        throw ConfigError("sweep requires --model <checkpoint dir>");
    const nlohmann::json cj = load_config_json(opts);
    PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    const std::uint64_t seed = cfg.seeds.front();
    const ToyTransformer model = model_from_checkpoint(load_checkpoint(opts.model_dir));
    cfg.model = model.config();
    const SyntheticTask task(task_config_for_seed(cfg, seed));

    const auto stats = collect_stats(model, task.calibration_batches(batches, batch_size));
    const auto points = saturation_sweep(model, task, stats, cfg.sweep_thresholds, bits, cfg.kl_bins);

    fs::create_directories(opts.out_dir);
    CsvWriter csv(fs::path(opts.out_dir) / "sweep.csv",
                  {"threshold", "accuracy", "saturation_error", "precision_error", "precision_share"});
    for (const auto &pt : points)
        csv.write_row({format_double(pt.threshold), format_double(pt.accuracy),
                       format_double(pt.aggregate.saturation_error),
                       format_double(pt.aggregate.precision_error),
                       format_double(pt.aggregate.precision_share)});
    const SweepPoint &best = points[sweep_optimum(points)];
    nlohmann::json summary;
    summary["bits"] = bits;
    summary["best_threshold"] = best.threshold;
    summary["best_accuracy"] = best.accuracy;
    summary["best_precision_share"] = best.aggregate.precision_share;
    write_json_file(fs::path(opts.out_dir) / "sweep_summary.json", summary);
    write_manifest(opts.out_dir, "sweep", cj, {"sweep.csv", "sweep_summary.json"});
    std::cout << "best threshold " << format_double(best.threshold) << " accuracy "
              << format_double(best.accuracy) << "\n";
    return 0;
}

inline int cmd_analyze(const CommonOpts &opts, int bits, double threshold, std::size_t batches,
                       std::size_t batch_size) {
    if (opts.model_dir.empty())
        throw ConfigError("analyze requires --model <checkpoint dir>");
    const nlohmann::json cj = load_config_json(opts);
    PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    const std::uint64_t seed = cfg.seeds.front();
    const ToyTransformer model = model_from_checkpoint(load_checkpoint(opts.model_dir));
    cfg.model = model.config();
    const SyntheticTask task(task_config_for_seed(cfg, seed));

    const auto stats = collect_stats(model, task.calibration_batches(batches, batch_size));
    const auto specs = act_specs_from_ranges(
        stats, bits, [threshold](const ActivationStats &s) { return s.percentile(threshold); });
    const EvalResult eval = evaluate(model, task, &specs, nullptr, cfg.kl_bins);
    const auto blocks = dynamic_range_report(model, task, stats, threshold, bits, cfg.kl_bins);

    fs::create_directories(opts.out_dir);
    write_site_csv(fs::path(opts.out_dir) / "sites.csv", model, eval.sites);
    CsvWriter bcsv(fs::path(opts.out_dir) / "blocks.csv",
                   {"block", "range_before", "range_after", "kl"});
    std::vector<double> ranges;
    for (const auto &row : blocks) {
        bcsv.write_row({std::to_string(row.block), format_double(row.range_before),
                        format_double(row.range_after), format_double(row.kl)});
        ranges.push_back(row.range_before);
    }
    ErrorDecomposition aggregate;
    for (const auto &d : eval.sites)
        aggregate.accumulate(d);
    nlohmann::json summary;
    summary["bits"] = bits;
    summary["threshold"] = threshold;
    summary["total_saturation_error"] = aggregate.saturation_error;
    summary["total_precision_error"] = aggregate.precision_error;
    summary["precision_share"] = aggregate.precision_share;
    summary["total_kl"] = aggregate.kl_divergence;
    if (ranges.size() >= 2)
        summary["block_range_spearman"] = spearman_against_depth(ranges);
    write_json_file(fs::path(opts.out_dir) / "analyze_summary.json", summary);
    write_manifest(opts.out_dir, "analyze", cj, {"sites.csv", "blocks.csv", "analyze_summary.json"});
    std::cout << "precision_share " << format_double(aggregate.precision_share) << "\n";
    return 0;
}

inline int cmd_quantize_eval(const CommonOpts &opts, const std::string &method, int bits,
                             std::size_t batches, std::size_t batch_size, double p) {
    if (opts.model_dir.empty())
        throw ConfigError("quantize-eval requires --model <checkpoint dir>");
    const nlohmann::json cj = load_config_json(opts);
    PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    const std::uint64_t seed = cfg.seeds.front();
    cfg.percentile_p = p;
    const ToyTransformer model = model_from_checkpoint(load_checkpoint(opts.model_dir));
    cfg.model = model.config();
    const SyntheticTask task(task_config_for_seed(cfg, seed));

    const auto stats = collect_stats(model, task.calibration_batches(batches, batch_size));
    const auto specs = calibrate_all(stats, cfg.method_by_name(method), bits);
    const auto qweights = model.quantized_weights(bits);
    const EvalResult quant = evaluate(model, task, &specs, &qweights, cfg.kl_bins);
    const double fp = evaluate_accuracy(model, task);

    fs::create_directories(opts.out_dir);
    write_site_csv(fs::path(opts.out_dir) / "sites.csv", model, quant.sites);
    nlohmann::json summary;
    summary["method"] = method;
    summary["bits"] = bits;
    summary["accuracy"] = quant.accuracy;
    summary["fp_accuracy"] = fp;
    summary["accuracy_drop"] = fp - quant.accuracy;
    write_json_file(fs::path(opts.out_dir) / "eval.json", summary);
    write_manifest(opts.out_dir, "quantize-eval", cj, {"eval.json", "sites.csv"});
    std::cout << "accuracy " << format_double(quant.accuracy) << " (fp " << format_double(fp) << ")\n";
    return 0;
}

inline int cmd_pipeline(const CommonOpts &opts) {
    const nlohmann::json cj = load_config_json(opts);
    const PipelineConfig cfg = pipeline_config_from(cj, opts.seed);
    experiment_pipeline(cfg, opts.out_dir);
    write_manifest(opts.out_dir, "pipeline", cj,
                   {"results.csv", "sweep.csv", "sites.csv", "blocks.csv", "summary.json"});
    std::cout << "report bundle written to " << opts.out_dir << "\n";
    return 0;
}

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 1 domain/config/data error, 2 usage error.
inline int run(const std::vector<std::string> &args) {
    CLI::App app{"qtlab: post-training quantization laboratory"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::size_t steps = 0, batch_size_override = 0;
    std::size_t batches = 10, batch_size = 100;  // calibration protocol defaults
    double alpha = 0.0;
    std::string schedule = "linear";
    std::string method = "minmax";
    int bits = 8;
    double p = 0.99999;
    double threshold = 0.9999;
    double magnitude = 1.0, fraction = 0.04;

    auto add_common = [&](CLI::App *cmd, bool with_model) {
        cmd->add_option("--config", opts.config_path, "JSON config file");
        cmd->add_option("--out", opts.out_dir, "output directory");
        cmd->add_option("--seed", opts.seed, "experiment seed");
        cmd->add_option("--set", opts.sets, "config override key.path=value")->take_all();
        if (with_model)
            cmd->add_option("--model", opts.model_dir, "model checkpoint directory");
    };

    CLI::App *train = app.add_subcommand("train", "train a toy transformer from scratch");
    add_common(train, false);
    train->add_option("--steps", steps, "training steps");
    train->add_option("--batch-size", batch_size_override, "training batch size");
    train->add_option("--alpha", alpha, "outlier loss balance factor");
    train->add_option("--schedule", schedule, "alpha schedule: constant|linear|cosine");

    CLI::App *ft = app.add_subcommand("finetune", "fine-tune a checkpoint (QuantTune)");
    add_common(ft, true);
    ft->add_option("--steps", steps, "fine-tuning steps");
    ft->add_option("--batch-size", batch_size_override, "training batch size");
    ft->add_option("--alpha", alpha, "outlier loss balance factor");
    ft->add_option("--schedule", schedule, "alpha schedule: constant|linear|cosine");
    ft->add_option("--magnitude", magnitude, "outlier injection magnitude (1 disables)");
    ft->add_option("--fraction", fraction, "outlier injection channel fraction");

    CLI::App *cal = app.add_subcommand("calibrate", "estimate quantization ranges");
    add_common(cal, true);
    cal->add_option("--method", method, "minmax|ema|percentile|omse");
    cal->add_option("--bits", bits, "quantization bit-width");
    cal->add_option("--batches", batches, "calibration batches");
    cal->add_option("--batch-size", batch_size, "samples per calibration batch");
    cal->add_option("--p", p, "percentile fraction (percentile method)");

    CLI::App *sw = app.add_subcommand("sweep", "saturation-threshold sweep");
    add_common(sw, true);
    sw->add_option("--bits", bits, "quantization bit-width");
    sw->add_option("--batches", batches, "calibration batches");
    sw->add_option("--batch-size", batch_size, "samples per calibration batch");

    CLI::App *an = app.add_subcommand("analyze", "error decomposition and range report");
    add_common(an, true);
    an->add_option("--bits", bits, "quantization bit-width");
    an->add_option("--threshold", threshold, "saturation threshold");
    an->add_option("--batches", batches, "calibration batches");
    an->add_option("--batch-size", batch_size, "samples per calibration batch");

    CLI::App *qe = app.add_subcommand("quantize-eval", "calibrate and evaluate the quantized model");
    add_common(qe, true);
    qe->add_option("--method", method, "minmax|ema|percentile|omse");
    qe->add_option("--bits", bits, "quantization bit-width");
    qe->add_option("--batches", batches, "calibration batches");
    qe->add_option("--batch-size", batch_size, "samples per calibration batch");
    qe->add_option("--p", p, "percentile fraction (percentile method)");

    CLI::App *pl = app.add_subcommand("pipeline", "full experiment pipeline");
    add_common(pl, false);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return 2;  // usage error
    }

    try {
        if (app.got_subcommand(train))
            return cmd_train(opts, steps, batch_size_override, alpha, schedule);
        if (app.got_subcommand(ft))
            return cmd_finetune(opts, steps, batch_size_override, alpha, schedule, magnitude, fraction);
        if (app.got_subcommand(cal))
            return cmd_calibrate(opts, method, bits, batches, batch_size, p);
        if (app.got_subcommand(sw))
            return cmd_sweep(opts, bits, batches, batch_size);
        if (app.got_subcommand(an))
            return cmd_analyze(opts, bits, threshold, batches, batch_size);
        if (app.got_subcommand(qe))
            return cmd_quantize_eval(opts, method, bits, batches, batch_size, p);
        if (app.got_subcommand(pl))
            return cmd_pipeline(opts);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace qtlab::cli
