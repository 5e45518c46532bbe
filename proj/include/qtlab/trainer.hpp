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

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "qtlab/calibration.hpp"
#include "qtlab/data.hpp"
#include "qtlab/error_analysis.hpp"
#include "qtlab/errors.hpp"
#include "qtlab/model.hpp"
#include "qtlab/outlier_loss.hpp"

namespace qtlab {

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;  // SGD
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // Adam

    void validate() const {
        if (!(lr > 0.0))
            throw DomainError("learning rate must be positive");
    }
};

inline void to_json(nlohmann::json &j, const OptimizerConfig &c) {
    j = nlohmann::json{{"kind", c.kind == OptimizerConfig::Kind::Sgd ? "sgd" : "adam"},
                       {"lr", c.lr},
                       {"momentum", c.momentum},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"eps", c.eps}};
}

inline void from_json(const nlohmann::json &j, OptimizerConfig &c) {
    c = OptimizerConfig{};
    if (j.contains("kind")) {
        const std::string k = j.at("kind").get<std::string>();
        if (k == "sgd")
            c.kind = OptimizerConfig::Kind::Sgd;
        else if (k == "adam")
            c.kind = OptimizerConfig::Kind::Adam;
        else
            throw ConfigError("unknown optimizer '" + k + "'");
    }
    if (j.contains("lr"))
        j.at("lr").get_to(c.lr);
    if (j.contains("momentum"))
        j.at("momentum").get_to(c.momentum);
    if (j.contains("beta1"))
        j.at("beta1").get_to(c.beta1);
    if (j.contains("beta2"))
        j.at("beta2").get_to(c.beta2);
    if (j.contains("eps"))
        j.at("eps").get_to(c.eps);
    c.validate();
}

/// Per-tensor state keyed by weight name; one instance per training run.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    void step(std::map<std::string, Tensor> &weights,
              const std::map<std::string, std::vector<double>> &grads) {
        ++t_;
        for (auto &[name, w] : weights) {
            auto it = grads.find(name);
            if (it == grads.end())
                continue;
            const std::vector<double> &g = it->second;
            if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
                auto &v = state_m_[name];
                v.resize(g.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    v[i] = cfg_.momentum * v[i] + g[i];
                    w[i] -= cfg_.lr * v[i];
                }
            } else {
                auto &m = state_m_[name];
                auto &v = state_v_[name];
                m.resize(g.size(), 0.0);
                v.resize(g.size(), 0.0);
                const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
                for (std::size_t i = 0; i < g.size(); ++i) {
                    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                    const double mhat = m[i] / bc1;
                    const double vhat = v[i] / bc2;
                    w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> state_m_;
    std::map<std::string, std::vector<double>> state_v_;
};

// ---------------------------------------------------------------------------
// Fine-tuning loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch_size = 16;
    OptimizerConfig optimizer;
    OutlierLossConfig outlier;
    std::uint64_t seed = 0;
    std::size_t eval_every = 0;  // 0 disables held-out evaluation during training

    void validate() const {
        if (batch_size == 0)
            throw ConfigError("batch_size must be positive");
        optimizer.validate();
        outlier.validate();
    }
};

inline void to_json(nlohmann::json &j, const TrainConfig &c) {
    j = nlohmann::json{{"steps", c.steps},         {"batch_size", c.batch_size},
                       {"optimizer", c.optimizer}, {"outlier", c.outlier},
                       {"seed", c.seed},           {"eval_every", c.eval_every}};
}

inline void from_json(const nlohmann::json &j, TrainConfig &c) {
    c = TrainConfig{};
    if (j.contains("steps"))
        j.at("steps").get_to(c.steps);
    if (j.contains("batch_size"))
        j.at("batch_size").get_to(c.batch_size);
    if (j.contains("optimizer"))
        j.at("optimizer").get_to(c.optimizer);
    if (j.contains("outlier"))
        j.at("outlier").get_to(c.outlier);
    if (j.contains("seed"))
        j.at("seed").get_to(c.seed);
    if (j.contains("eval_every"))
        j.at("eval_every").get_to(c.eval_every);
    c.validate();
}

struct TrainRecord {
    std::size_t step = 0;
    double alpha = 0.0;
    double loss_cls = 0.0;
    double loss_out = 0.0;
    double loss_total = 0.0;
    std::map<std::string, double> site_metric;  // per-site mean (max-median)/sigma
    std::optional<double> eval_accuracy;
};

inline void to_json(nlohmann::json &j, const TrainRecord &r) {
    j = nlohmann::json{{"step", r.step},         {"alpha", r.alpha},
                       {"loss_cls", r.loss_cls}, {"loss_out", r.loss_out},
                       {"loss_total", r.loss_total}, {"site_metric", r.site_metric}};
    if (r.eval_accuracy)
        j["eval_accuracy"] = *r.eval_accuracy;
}

struct FinetuneResult {
    std::vector<TrainRecord> log;
    bool aborted = false;
    std::size_t abort_step = 0;
    double final_alpha = 0.0;
};

// forward declaration (evaluate is defined below)
struct EvalResult;
inline EvalResult evaluate(const ToyTransformer &model, const SyntheticTask &task,
                           const std::map<std::string, QuantSpec> *act_specs,
                           const std::map<std::string, Tensor> *qweights, int kl_bins);

inline double evaluate_accuracy(const ToyTransformer &model, const SyntheticTask &task);

/// One QuantTune fine-tuning run: forward with observers, blended loss with
/// alpha decay, backward, optimizer update. Divergence (non-finite loss)
/// aborts and restores the last good weights.
inline FinetuneResult finetune(ToyTransformer &model, const SyntheticTask &task, const TrainConfig &cfg) {
    cfg.validate();
    if (task.config().seq_len != model.config().seq_len || task.config().dim != model.config().dim ||
        task.config().num_classes != model.config().num_classes)
        throw DimensionError("task shapes do not match the model config");

    FinetuneResult result;
    Optimizer opt(cfg.optimizer);

    auto site_filter = [&cfg](const ObserverSite &s) { return cfg.outlier.site_included(s.site_id); };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double alpha = step_alpha(cfg.outlier, step);
        const SyntheticTask::Batch batch = task.training_batch(mix_hash(cfg.seed, step), cfg.batch_size);

        std::map<std::string, Tensor> last_good = model.weights();
        TrainRecord rec;
        rec.step = step;
        rec.alpha = alpha;
        bool diverged = false;
        try {
            Tape tape;
            ToyTransformer::TapeRun run = model.forward_tape(tape, batch.inputs, site_filter);
            const Tape::NodeId cls = classification_loss(tape, run.logits, batch.labels);
            const Tape::NodeId out = outlier_loss(tape, run.captured);
            const Tape::NodeId total = total_loss(tape, cls, out, alpha);

            rec.loss_cls = tape.value(cls)[0];
            rec.loss_out = tape.value(out)[0];
            rec.loss_total = tape.value(total)[0];
            for (const auto &site : run.captured) {
                double acc = 0.0;
                for (Tape::NodeId a : site.per_sample)
                    acc += outlier_metric(tape.value(a));
                rec.site_metric[site.site_id] = acc / static_cast<double>(site.per_sample.size());
            }
            if (!std::isfinite(rec.loss_total)) {
                diverged = true;
            } else {
                tape.backward(total);
                std::map<std::string, std::vector<double>> grads;
                for (const auto &[name, node] : run.weight_nodes)
                    grads.emplace(name, tape.grad(node));
                opt.step(model.weights(), grads);
                for (const auto &[name, w] : model.weights())
                    for (std::size_t i = 0; i < w.numel(); ++i)
                        if (!std::isfinite(w[i]))
                            diverged = true;
            }
        } catch (const DataError &) {
            diverged = true;
        }

        if (diverged) {
            model.weights() = std::move(last_good);
            result.aborted = true;
            result.abort_step = step;
            return result;
        }
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
            rec.eval_accuracy = evaluate_accuracy(model, task);
        result.log.push_back(std::move(rec));
        result.final_alpha = alpha;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    /// Per-site error decompositions, present for quantized evaluations.
    std::vector<ErrorDecomposition> sites;
};

inline std::size_t eval_threads() {
    const char *env = std::getenv("QTLAB_THREADS");
    if (!env)
        return 1;
    const long n = std::strtol(env, nullptr, 10);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
}

namespace detail {

inline std::size_t argmax_row(const Tensor &logits, std::size_t row) {
    const std::size_t k = logits.cols();
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (logits.at(row, j) > logits.at(row, best))
            best = j;
    return best;
}

} // namespace detail

/// Top-1 accuracy over the task's evaluation split. When quantization specs
/// are supplied the quantized model is scored and per-site decompositions
/// (squared-error split plus the KL precision-loss measure, summed over
/// evaluation batches) are attached. Batches may be processed in parallel
/// (QTLAB_THREADS); per-batch results are reduced in index order, so the
/// outcome does not depend on the thread count.
inline EvalResult evaluate(const ToyTransformer &model, const SyntheticTask &task,
                           const std::map<std::string, QuantSpec> *act_specs = nullptr,
                           const std::map<std::string, Tensor> *qweights = nullptr, int kl_bins = 512) {
    const auto &indices = task.eval_indices();
    if (indices.empty())
        throw DataError("task has no evaluation samples");
    const bool quantized = act_specs != nullptr || qweights != nullptr;
    if (act_specs)
        for (const auto &[site_id, spec] : *act_specs) {
            model.site(site_id);  // throws ConfigError on unknown ids
            spec.validate();
        }

    constexpr std::size_t kEvalBatch = 64;
    const std::size_t nbatches = (indices.size() + kEvalBatch - 1) / kEvalBatch;

    struct BatchOutcome {
        std::size_t correct = 0;
        std::size_t total = 0;
        std::map<std::string, ErrorDecomposition> sites;
    };
    std::vector<BatchOutcome> outcomes(nbatches);

    auto run_batch = [&](std::size_t bi) {
        const std::size_t lo = bi * kEvalBatch;
        const std::size_t hi = std::min(lo + kEvalBatch, indices.size());
        std::vector<std::size_t> batch_idx(indices.begin() + static_cast<std::ptrdiff_t>(lo),
                                           indices.begin() + static_cast<std::ptrdiff_t>(hi));
        const SyntheticTask::Batch batch = task.make_batch(batch_idx);
        BatchOutcome &out = outcomes[bi];
        out.total = batch_idx.size();

        InferOptions opt;
        opt.act_specs = act_specs;
        opt.weights_override = qweights;
        std::map<std::string, Tensor> capture;
        if (quantized && act_specs)
            opt.capture = nullptr;  // capture comes from the FP reference pass below
        const Tensor logits = model.forward(batch.inputs, opt);
        for (std::size_t i = 0; i < batch_idx.size(); ++i)
            if (detail::argmax_row(logits, i) == task.label_of(batch_idx[i]))
                ++out.correct;

        if (quantized && act_specs) {
            InferOptions fp_opt;
            fp_opt.capture = &capture;
            (void)model.forward(batch.inputs, fp_opt);
            for (const auto &[site_id, spec] : *act_specs) {
                const Tensor &x = capture.at(site_id);
                ErrorDecomposition d = decompose(x, spec);
                d.site_id = site_id;
                d.kl_divergence = kl_precision_loss(x, spec, kl_bins);
                out.sites.emplace(site_id, std::move(d));
            }
        }
    };

    const std::size_t threads = std::min(eval_threads(), nbatches);
    if (threads <= 1) {
        for (std::size_t bi = 0; bi < nbatches; ++bi)
            run_batch(bi);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&]() {
                for (std::size_t bi = next.fetch_add(1); bi < nbatches; bi = next.fetch_add(1))
                    run_batch(bi);
            });
        for (auto &th : pool)
            th.join();
    }

    EvalResult result;
    std::map<std::string, ErrorDecomposition> merged;
    for (const BatchOutcome &out : outcomes) {  // fixed index order
        result.correct += out.correct;
        result.total += out.total;
        for (const auto &[site_id, d] : out.sites) {
            auto [it, fresh] = merged.emplace(site_id, d);
            if (!fresh)
                it->second.accumulate(d);
        }
    }
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    for (auto &[site_id, d] : merged)
        result.sites.push_back(d);
    return result;
}

inline double evaluate_accuracy(const ToyTransformer &model, const SyntheticTask &task) {
    return evaluate(model, task).accuracy;
}

} // namespace qtlab
