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

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtlab/calibration.hpp"
#include "qtlab/data.hpp"
#include "qtlab/error_analysis.hpp"
#include "qtlab/errors.hpp"
#include "qtlab/io.hpp"
#include "qtlab/model.hpp"
#include "qtlab/trainer.hpp"

namespace qtlab {

// ---------------------------------------------------------------------------
// Observation and calibration over a model
// ---------------------------------------------------------------------------

/// Run the calibration batches through the model at full precision and fold
/// every observer site's activations into per-site stats.
inline std::map<std::string, ActivationStats> collect_stats(
    const ToyTransformer &model, const std::vector<SyntheticTask::Batch> &batches) {
    if (batches.empty())
        throw DataError("collect_stats: no calibration batches");
    std::map<std::string, ActivationStats> stats;
    for (const auto &site : model.sites())
        stats.emplace(site.site_id, ActivationStats(site.site_id));
    for (const auto &batch : batches) {
        std::map<std::string, Tensor> capture;
        InferOptions opt;
        opt.capture = &capture;
        (void)model.forward(batch.inputs, opt);
        for (auto &[site_id, tensor] : capture)
            stats.at(site_id).observe(tensor);
    }
    return stats;
}

/// Per-site specs with ranges chosen by `range_of`; sites whose stats carry
/// no signal (zero range) are left unquantized.
inline std::map<std::string, QuantSpec> act_specs_from_ranges(
    const std::map<std::string, ActivationStats> &stats, int bits,
    const std::function<double(const ActivationStats &)> &range_of) {
    std::map<std::string, QuantSpec> specs;
    for (const auto &[site_id, s] : stats) {
        if (s.sample_count() == 0 || !(s.max_abs() > 0.0))
            continue;
        const double r = range_of(s);
        if (r > 0.0)
            specs.emplace(site_id, scale_from_range(r, bits));
    }
    return specs;
}

inline std::map<std::string, QuantSpec> calibrate_all(
    const std::map<std::string, ActivationStats> &stats, const CalibrationMethod &method, int bits) {
    std::map<std::string, QuantSpec> specs;
    for (const auto &[site_id, s] : stats) {
        if (s.sample_count() == 0 || !(s.max_abs() > 0.0))
            continue;
        specs.emplace(site_id, calibrate(s, method, bits));
    }
    return specs;
}

// ---------------------------------------------------------------------------
// Saturation-threshold sweep
// ---------------------------------------------------------------------------

struct SweepPoint {
    double threshold = 1.0;
    double accuracy = 0.0;
    ErrorDecomposition aggregate;  // sums across sites
    std::vector<ErrorDecomposition> sites;
};

/// For each threshold, clamp every activation range to that percentile of
/// |values|, fake-quantize the whole model at `bits`, and record accuracy
/// plus the saturation/precision split. threshold = 1.0 is exactly min-max.
inline std::vector<SweepPoint> saturation_sweep(const ToyTransformer &model, const SyntheticTask &task,
                                                const std::map<std::string, ActivationStats> &stats,
                                                const std::vector<double> &thresholds, int bits,
                                                int kl_bins = 512) {
    if (stats.empty())
        throw StateError("saturation_sweep requires calibration stats");
    if (thresholds.empty())
        throw DomainError("saturation_sweep: empty threshold list");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.9 && thresholds[i] <= 1.0))
            throw DomainError("saturation thresholds must lie in (0.9, 1.0]");
        if (i > 0 && thresholds[i] <= thresholds[i - 1])
            throw DomainError("saturation thresholds must be sorted ascending");
    }
    const std::map<std::string, Tensor> qweights = model.quantized_weights(bits);
    std::vector<SweepPoint> points;
    points.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto specs = act_specs_from_ranges(
            stats, bits, [t](const ActivationStats &s) { return s.percentile(t); });
        const EvalResult eval = evaluate(model, task, &specs, &qweights, kl_bins);
        SweepPoint point;
        point.threshold = t;
        point.accuracy = eval.accuracy;
        point.sites = eval.sites;
        for (const auto &d : eval.sites)
            point.aggregate.accumulate(d);
        point.aggregate.site_id = "aggregate";
        points.push_back(std::move(point));
    }
    return points;
}

/// Index of the sweep point with the highest accuracy (first on ties).
inline std::size_t sweep_optimum(const std::vector<SweepPoint> &points) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < points.size(); ++i)
        if (points[i].accuracy > points[best].accuracy)
            best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Per-block dynamic-range report
// ---------------------------------------------------------------------------

struct BlockRangeRow {
    int block = 0;
    double range_before = 0.0;
    double range_after = 0.0;
    double kl = 0.0;
};

/// One row per transformer block in depth order. Ranges follow the residual
/// stream (the block's LayerNorm-input sites, i.e. its sublayer output
/// tensors); KL sums the per-site precision-loss measure of the block's
/// sites under the saturated specs.
inline std::vector<BlockRangeRow> dynamic_range_report(const ToyTransformer &model,
                                                       const SyntheticTask &task,
                                                       const std::map<std::string, ActivationStats> &stats,
                                                       double threshold, int bits, int kl_bins = 512) {
    if (stats.empty())
        throw StateError("dynamic_range_report requires a calibrated model");
    const auto specs = act_specs_from_ranges(
        stats, bits, [threshold](const ActivationStats &s) { return s.percentile(threshold); });
    const EvalResult eval = evaluate(model, task, &specs, nullptr, kl_bins);
    std::map<std::string, const ErrorDecomposition *> by_site;
    for (const auto &d : eval.sites)
        by_site.emplace(d.site_id, &d);

    const int depth = static_cast<int>(model.config().depth);
    std::vector<BlockRangeRow> rows(static_cast<std::size_t>(depth));
    for (int b = 0; b < depth; ++b)
        rows[static_cast<std::size_t>(b)].block = b;
    for (const auto &site : model.sites()) {
        if (site.block_index >= depth)
            continue;  // classifier stage is not a transformer block
        BlockRangeRow &row = rows[static_cast<std::size_t>(site.block_index)];
        const ActivationStats &s = stats.at(site.site_id);
        if (site.kind == ObserverSite::Kind::LayerNormInput) {
            row.range_before = std::max(row.range_before, s.max_abs());
            if (s.sample_count() > 0 && s.max_abs() > 0.0)
                row.range_after = std::max(row.range_after, s.percentile(threshold));
        }
        auto it = by_site.find(site.site_id);
        if (it != by_site.end())
            row.kl += it->second->kl_divergence;
    }
    return rows;
}

/// Spearman rank correlation against position 0..n-1 (no-tie ranks; ties in
/// value are broken by position, which is conservative for trend checks).
inline double spearman_against_depth(const std::vector<double> &values) {
    const std::size_t n = values.size();
    if (n < 2)
        throw DomainError("spearman needs at least 2 values");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&values](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> rank(n);
    for (std::size_t r = 0; r < n; ++r)
        rank[order[r]] = static_cast<double>(r);
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = rank[i] - static_cast<double>(i);
        d2 += d * d;
    }
    const double nn = static_cast<double>(n);
    return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

// ---------------------------------------------------------------------------
// Full experiment pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::vector<std::uint64_t> seeds = {1};
    ToyTransformerConfig model{3, 32, 4, 4, 12, 10, 0};
    double task_noise = 0.8;
    std::size_t dataset_size = 1500;
    std::size_t pretrain_steps = 250;
    std::size_t finetune_steps = 120;
    std::size_t batch_size = 16;
    OptimizerConfig pretrain_optimizer{OptimizerConfig::Kind::Adam, 2e-3, 0.9, 0.9, 0.999, 1e-8};
    OptimizerConfig finetune_optimizer{OptimizerConfig::Kind::Adam, 1e-3, 0.9, 0.9, 0.999, 1e-8};
    double alpha = 0.5;
    OutlierLossConfig::Schedule schedule = OutlierLossConfig::Schedule::LinearDecay;
    double inject_magnitude = 12.0;
    double inject_fraction = 0.04;
    std::size_t calib_batches = 10;   // paper protocol: 10 batches
    std::size_t calib_batch_size = 100;  // of 100 samples each
    std::vector<std::string> methods = {"minmax", "ema", "percentile", "omse"};
    double ema_decay = 0.9;
    double percentile_p = 0.99999;
    int omse_grid = 128;
    std::vector<int> eval_bits = {8, 7, 6};
    std::vector<double> sweep_thresholds = {0.9999, 0.99994, 0.99999, 1.0};
    int sweep_bits = 7;
    int kl_bins = 512;

    void validate() const {
        model.validate();
        if (seeds.empty())
            throw ConfigError("pipeline needs at least one seed");
        if (methods.empty() || eval_bits.empty())
            throw ConfigError("pipeline needs at least one method and bit-width");
        if (batch_size == 0 || calib_batches == 0 || calib_batch_size == 0)
            throw ConfigError("pipeline batch settings must be positive");
    }

    CalibrationMethod method_by_name(const std::string &name) const {
        return CalibrationMethod::parse(name, ema_decay, percentile_p, omse_grid);
    }
};

inline void to_json(nlohmann::json &j, const PipelineConfig &c) {
    const char *sched = c.schedule == OutlierLossConfig::Schedule::Constant ? "constant"
                        : c.schedule == OutlierLossConfig::Schedule::LinearDecay ? "linear"
                                                                                 : "cosine";
    j = nlohmann::json{{"seeds", c.seeds},
                       {"model", c.model},
                       {"task_noise", c.task_noise},
                       {"dataset_size", c.dataset_size},
                       {"pretrain_steps", c.pretrain_steps},
                       {"finetune_steps", c.finetune_steps},
                       {"batch_size", c.batch_size},
                       {"pretrain_optimizer", c.pretrain_optimizer},
                       {"finetune_optimizer", c.finetune_optimizer},
                       {"alpha", c.alpha},
                       {"schedule", sched},
                       {"inject_magnitude", c.inject_magnitude},
                       {"inject_fraction", c.inject_fraction},
                       {"calib_batches", c.calib_batches},
                       {"calib_batch_size", c.calib_batch_size},
                       {"methods", c.methods},
                       {"ema_decay", c.ema_decay},
                       {"percentile_p", c.percentile_p},
                       {"omse_grid", c.omse_grid},
                       {"eval_bits", c.eval_bits},
                       {"sweep_thresholds", c.sweep_thresholds},
                       {"sweep_bits", c.sweep_bits},
                       {"kl_bins", c.kl_bins}};
}

inline void from_json(const nlohmann::json &j, PipelineConfig &c) {
    c = PipelineConfig{};
    auto get = [&j](const char *key, auto &dst) {
        if (j.contains(key))
            j.at(key).get_to(dst);
    };
    get("seeds", c.seeds);
    if (j.contains("seed"))
        c.seeds = {j.at("seed").get<std::uint64_t>()};
    get("model", c.model);
    get("task_noise", c.task_noise);
    get("dataset_size", c.dataset_size);
    get("pretrain_steps", c.pretrain_steps);
    get("finetune_steps", c.finetune_steps);
    get("batch_size", c.batch_size);
    get("pretrain_optimizer", c.pretrain_optimizer);
    get("finetune_optimizer", c.finetune_optimizer);
    get("alpha", c.alpha);
    if (j.contains("schedule")) {
        const std::string s = j.at("schedule").get<std::string>();
        if (s == "constant")
            c.schedule = OutlierLossConfig::Schedule::Constant;
        else if (s == "linear")
            c.schedule = OutlierLossConfig::Schedule::LinearDecay;
        else if (s == "cosine")
            c.schedule = OutlierLossConfig::Schedule::CosineDecay;
        else
            throw ConfigError("unknown alpha schedule '" + s + "'");
    }
    get("inject_magnitude", c.inject_magnitude);
    get("inject_fraction", c.inject_fraction);
    get("calib_batches", c.calib_batches);
    get("calib_batch_size", c.calib_batch_size);
    get("methods", c.methods);
    get("ema_decay", c.ema_decay);
    get("percentile_p", c.percentile_p);
    get("omse_grid", c.omse_grid);
    get("eval_bits", c.eval_bits);
    get("sweep_thresholds", c.sweep_thresholds);
    get("sweep_bits", c.sweep_bits);
    get("kl_bins", c.kl_bins);
    c.validate();
}

struct QuantEvalRow {
    std::string method;
    int bits = 8;
    double accuracy = 0.0;
};

struct ArmOutcome {
    std::string name;
    double fp_accuracy = 0.0;
    FinetuneResult train;
    double metric_start = 0.0;  // mean site (max-median)/sigma at the first step
    double metric_end = 0.0;    // and at the last step
    double mean_range = 0.0;    // mean over sites of observed max|A|
    std::map<std::string, ActivationStats> stats;
    std::vector<QuantEvalRow> quant_rows;
    std::vector<SweepPoint> sweep;
    ModelCheckpoint checkpoint;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    double baseline_fp = 0.0;
    double injected_fp = 0.0;
    ArmOutcome alpha0;
    ArmOutcome quanttune;
    std::vector<BlockRangeRow> blocks;  // from the alpha0 arm
};

namespace detail {

inline double mean_site_metric(const TrainRecord &rec) {
    if (rec.site_metric.empty())
        return 0.0;
    double acc = 0.0;
    for (const auto &[site, v] : rec.site_metric)
        acc += v;
    return acc / static_cast<double>(rec.site_metric.size());
}

template <typename Stage>
auto run_stage(const char *tag, Stage &&stage) -> decltype(stage()) {
    try {
        return stage();
    } catch (const Error &e) {
        throw Error(std::string("[stage:") + tag + "] " + e.what());
    }
}

} // namespace detail

/// Baseline train -> outlier injection -> (alpha = 0 | QuantTune) fine-tune
/// arms -> calibration -> saturation sweep -> quantized evaluation.
inline SeedOutcome run_pipeline_seed(const PipelineConfig &cfg, std::uint64_t seed) {
    cfg.validate();
    SeedOutcome outcome;
    outcome.seed = seed;

    ToyTransformerConfig mc = cfg.model;
    mc.seed = mix_hash(seed, 0x0de1);
    SyntheticTask::Config tc;
    tc.num_classes = mc.num_classes;
    tc.seq_len = mc.seq_len;
    tc.dim = mc.dim;
    tc.dataset_size = cfg.dataset_size;
    tc.noise = cfg.task_noise;
    tc.seed = mix_hash(seed, 0x7a5c);
    const SyntheticTask task(tc);

    // baseline training from scratch (plain task loss)
    ToyTransformer model(mc);
    detail::run_stage("train", [&] {
        TrainConfig pre;
        pre.steps = cfg.pretrain_steps;
        pre.batch_size = cfg.batch_size;
        pre.optimizer = cfg.pretrain_optimizer;
        pre.outlier.alpha = 0.0;
        pre.seed = mix_hash(seed, 0x9a5e);
        finetune(model, task, pre);
        return 0;
    });
    outcome.baseline_fp = evaluate_accuracy(model, task);

    // synthetic channel outliers
    detail::run_stage("inject", [&] {
        model.inject_outliers(cfg.inject_magnitude, cfg.inject_fraction);
        return 0;
    });
    outcome.injected_fp = evaluate_accuracy(model, task);

    auto run_arm = [&](const std::string &name, double alpha) {
        ArmOutcome arm;
        arm.name = name;
        ToyTransformer tuned = model;
        detail::run_stage("finetune", [&] {
            TrainConfig ft;
            ft.steps = cfg.finetune_steps;
            ft.batch_size = cfg.batch_size;
            ft.optimizer = cfg.finetune_optimizer;
            ft.outlier.alpha = alpha;
            ft.outlier.schedule = alpha > 0.0 ? cfg.schedule : OutlierLossConfig::Schedule::Constant;
            ft.outlier.total_steps = cfg.finetune_steps;
            ft.seed = mix_hash(seed, 0xf17e);  // both arms see identical batches
            arm.train = finetune(tuned, task, ft);
            return 0;
        });
        arm.fp_accuracy = evaluate_accuracy(tuned, task);
        if (!arm.train.log.empty()) {
            arm.metric_start = detail::mean_site_metric(arm.train.log.front());
            arm.metric_end = detail::mean_site_metric(arm.train.log.back());
        }

        detail::run_stage("calibrate", [&] {
            arm.stats = collect_stats(tuned, task.calibration_batches(cfg.calib_batches,
                                                                      cfg.calib_batch_size));
            return 0;
        });
        double range_sum = 0.0;
        for (const auto &[site, s] : arm.stats)
            range_sum += s.max_abs();
        arm.mean_range = range_sum / static_cast<double>(arm.stats.size());

        detail::run_stage("quantize-eval", [&] {
            for (int bits : cfg.eval_bits) {
                const auto qweights = tuned.quantized_weights(bits);
                for (const auto &mname : cfg.methods) {
                    const auto specs = calibrate_all(arm.stats, cfg.method_by_name(mname), bits);
                    const EvalResult ev = evaluate(tuned, task, &specs, &qweights, cfg.kl_bins);
                    arm.quant_rows.push_back(QuantEvalRow{mname, bits, ev.accuracy});
                }
            }
            return 0;
        });

        detail::run_stage("sweep", [&] {
            arm.sweep = saturation_sweep(tuned, task, arm.stats, cfg.sweep_thresholds, cfg.sweep_bits,
                                         cfg.kl_bins);
            return 0;
        });

        nlohmann::json meta;
        meta["arm"] = name;
        meta["steps"] = cfg.finetune_steps;
        meta["final_alpha"] = arm.train.final_alpha;
        meta["seed"] = seed;
        arm.checkpoint = make_checkpoint(tuned, meta);
        return arm;
    };

    outcome.alpha0 = run_arm("alpha0", 0.0);
    outcome.quanttune = run_arm("quanttune", cfg.alpha);

    // per-block dynamic ranges on the arm trained without the outlier loss,
    // saturated at that arm's best sweep threshold
    detail::run_stage("analyze", [&] {
        const ToyTransformer arm_model = model_from_checkpoint(outcome.alpha0.checkpoint);
        const double threshold = outcome.alpha0.sweep.empty()
                                     ? 1.0
                                     : outcome.alpha0.sweep[sweep_optimum(outcome.alpha0.sweep)].threshold;
        outcome.blocks = dynamic_range_report(arm_model, task, outcome.alpha0.stats, threshold,
                                              cfg.sweep_bits, cfg.kl_bins);
        return 0;
    });
    return outcome;
}

inline double median(std::vector<double> v) {
    if (v.empty())
        throw DomainError("median of empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Run every seed, then write the report bundle (results.csv, sweep.csv,
/// sites.csv, blocks.csv, summary.json, per-arm training logs, checkpoints,
/// and a manifest). Returns the outcomes for callers that keep going.
inline std::vector<SeedOutcome> experiment_pipeline(const PipelineConfig &cfg, const fs::path &out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    std::vector<SeedOutcome> outcomes;
    outcomes.reserve(cfg.seeds.size());
    for (std::uint64_t seed : cfg.seeds)
        outcomes.push_back(run_pipeline_seed(cfg, seed));

    // results.csv: one row per (seed, arm, method, bits)
    {
        CsvWriter csv(out_dir / "results.csv",
                      {"seed", "arm", "method", "bits", "accuracy", "fp_accuracy", "accuracy_drop"});
        for (const auto &oc : outcomes)
            for (const ArmOutcome *arm : {&oc.alpha0, &oc.quanttune})
                for (const auto &row : arm->quant_rows)
                    csv.write_row({std::to_string(oc.seed), arm->name, row.method,
                                   std::to_string(row.bits), format_double(row.accuracy),
                                   format_double(arm->fp_accuracy),
                                   format_double(arm->fp_accuracy - row.accuracy)});
    }

    // sweep.csv
    {
        CsvWriter csv(out_dir / "sweep.csv",
                      {"seed", "arm", "threshold", "accuracy", "saturation_error", "precision_error",
                       "precision_share"});
        for (const auto &oc : outcomes)
            for (const ArmOutcome *arm : {&oc.alpha0, &oc.quanttune})
                for (const auto &p : arm->sweep)
                    csv.write_row({std::to_string(oc.seed), arm->name, format_double(p.threshold),
                                   format_double(p.accuracy), format_double(p.aggregate.saturation_error),
                                   format_double(p.aggregate.precision_error),
                                   format_double(p.aggregate.precision_share)});
    }

    // sites.csv at each arm's best sweep threshold
    {
        CsvWriter csv(out_dir / "sites.csv",
                      {"seed", "arm", "threshold", "site_id", "block", "kind", "range_before",
                       "range_after", "saturation_error", "precision_error", "precision_share", "kl"});
        for (const auto &oc : outcomes)
            for (const ArmOutcome *arm : {&oc.alpha0, &oc.quanttune}) {
                if (arm->sweep.empty())
                    continue;
                const SweepPoint &best = arm->sweep[sweep_optimum(arm->sweep)];
                const ToyTransformer probe = model_from_checkpoint(arm->checkpoint);
                for (const auto &d : best.sites) {
                    const ObserverSite &site = probe.site(d.site_id);
                    csv.write_row({std::to_string(oc.seed), arm->name, format_double(best.threshold),
                                   d.site_id, std::to_string(site.block_index), to_string(site.kind),
                                   format_double(d.range_before), format_double(d.range_after),
                                   format_double(d.saturation_error), format_double(d.precision_error),
                                   format_double(d.precision_share), format_double(d.kl_divergence)});
                }
            }
    }

    // blocks.csv: per-block dynamic ranges (alpha0 arm)
    {
        CsvWriter csv(out_dir / "blocks.csv",
                      {"seed", "block", "range_before", "range_after", "kl"});
        for (const auto &oc : outcomes)
            for (const auto &row : oc.blocks)
                csv.write_row({std::to_string(oc.seed), std::to_string(row.block),
                               format_double(row.range_before), format_double(row.range_after),
                               format_double(row.kl)});
    }

    // training logs (newline-delimited JSON) and checkpoints
    for (const auto &oc : outcomes)
        for (const ArmOutcome *arm : {&oc.alpha0, &oc.quanttune}) {
            const std::string stem = "training_log_" + arm->name + "_seed" + std::to_string(oc.seed);
            std::ofstream log(out_dir / (stem + ".ndjson"));
            for (const auto &rec : arm->train.log)
                log << nlohmann::json(rec).dump() << '\n';
            save_checkpoint(out_dir / "checkpoints" / (arm->name + "_seed" + std::to_string(oc.seed)),
                            arm->checkpoint);
        }

    // summary.json with per-seed details and cross-seed medians
    nlohmann::json summary;
    summary["config"] = cfg;
    nlohmann::json per_seed = nlohmann::json::array();
    std::map<std::string, std::vector<double>> drop_by_key_alpha0, drop_by_key_quanttune;
    std::vector<double> metric_reductions, fp_gaps, sweep_best_thresholds, sweep_best_shares,
        spearmans, range_ratios;
    for (const auto &oc : outcomes) {
        nlohmann::json js;
        js["seed"] = oc.seed;
        js["baseline_fp_accuracy"] = oc.baseline_fp;
        js["injected_fp_accuracy"] = oc.injected_fp;
        for (const ArmOutcome *arm : {&oc.alpha0, &oc.quanttune}) {
            nlohmann::json ja;
            ja["fp_accuracy"] = arm->fp_accuracy;
            ja["metric_start"] = arm->metric_start;
            ja["metric_end"] = arm->metric_end;
            ja["mean_range"] = arm->mean_range;
            for (const auto &row : arm->quant_rows) {
                const std::string key = row.method + ":" + std::to_string(row.bits);
                ja["accuracy"][key] = row.accuracy;
                ja["drop"][key] = arm->fp_accuracy - row.accuracy;
                (arm->name == "alpha0" ? drop_by_key_alpha0 : drop_by_key_quanttune)[key].push_back(
                    arm->fp_accuracy - row.accuracy);
            }
            if (!arm->sweep.empty()) {
                const SweepPoint &best = arm->sweep[sweep_optimum(arm->sweep)];
                ja["sweep_best_threshold"] = best.threshold;
                ja["sweep_best_accuracy"] = best.accuracy;
                ja["sweep_best_precision_share"] = best.aggregate.precision_share;
            }
            js[arm->name] = std::move(ja);
        }
        if (!oc.alpha0.sweep.empty()) {
            const SweepPoint &best = oc.alpha0.sweep[sweep_optimum(oc.alpha0.sweep)];
            sweep_best_thresholds.push_back(best.threshold);
            sweep_best_shares.push_back(best.aggregate.precision_share);
        }
        if (oc.quanttune.metric_start > 0.0)
            metric_reductions.push_back(1.0 - oc.quanttune.metric_end / oc.quanttune.metric_start);
        fp_gaps.push_back(oc.quanttune.fp_accuracy - oc.alpha0.fp_accuracy);
        if (oc.alpha0.mean_range > 0.0)
            range_ratios.push_back(oc.quanttune.mean_range / oc.alpha0.mean_range);
        if (oc.blocks.size() >= 2) {
            std::vector<double> ranges;
            for (const auto &row : oc.blocks)
                ranges.push_back(row.range_before);
            nlohmann::json jb = nlohmann::json::array();
            for (const auto &row : oc.blocks)
                jb.push_back({{"block", row.block},
                              {"range_before", row.range_before},
                              {"range_after", row.range_after},
                              {"kl", row.kl}});
            js["blocks"] = std::move(jb);
            spearmans.push_back(spearman_against_depth(ranges));
        }
        per_seed.push_back(std::move(js));
    }
    summary["per_seed"] = std::move(per_seed);

    nlohmann::json agg;
    for (const auto &[key, drops] : drop_by_key_alpha0)
        agg["median_drop"]["alpha0"][key] = median(drops);
    for (const auto &[key, drops] : drop_by_key_quanttune)
        agg["median_drop"]["quanttune"][key] = median(drops);
    if (!metric_reductions.empty())
        agg["median_outlier_metric_reduction"] = median(metric_reductions);
    if (!fp_gaps.empty())
        agg["median_fp_accuracy_gap"] = median(fp_gaps);
    if (!range_ratios.empty())
        agg["median_mean_range_ratio"] = median(range_ratios);
    if (!sweep_best_thresholds.empty()) {
        agg["median_sweep_best_threshold"] = median(sweep_best_thresholds);
        agg["median_sweep_best_precision_share"] = median(sweep_best_shares);
    }
    if (!spearmans.empty())
        agg["median_block_range_spearman"] = median(spearmans);
    summary["aggregate"] = std::move(agg);
    write_json_file(out_dir / "summary.json", summary);
    return outcomes;
}

} // namespace qtlab
