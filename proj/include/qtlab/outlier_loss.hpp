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

#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtlab/autodiff.hpp"
#include "qtlab/errors.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

/// An instrumented tensor location: the input or output of a linear or
/// LayerNorm layer.
struct ObserverSite {
    enum class Kind { LinearInput, LinearOutput, LayerNormInput, LayerNormOutput };

    std::string site_id;
    Kind kind = Kind::LinearInput;
    int block_index = 0;

    bool is_input() const { return kind == Kind::LinearInput || kind == Kind::LayerNormInput; }
};

inline std::string to_string(ObserverSite::Kind k) {
    switch (k) {
    case ObserverSite::Kind::LinearInput: return "linear_in";
    case ObserverSite::Kind::LinearOutput: return "linear_out";
    case ObserverSite::Kind::LayerNormInput: return "layernorm_in";
    case ObserverSite::Kind::LayerNormOutput: return "layernorm_out";
    }
    return "?";
}

/// Balance factor and decay schedule for the blended training objective.
struct OutlierLossConfig {
    enum class Schedule { Constant, LinearDecay, CosineDecay };

    double alpha = 0.5;
    Schedule schedule = Schedule::Constant;
    std::size_t total_steps = 0;
    /// Sites contributing to the loss; empty optional means all sites.
    std::optional<std::set<std::string>> sites;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw DomainError("alpha must be in [0,1]");
        if (schedule != Schedule::Constant && total_steps == 0)
            throw DomainError("decay schedules require total_steps > 0");
    }

    bool site_included(const std::string &site_id) const {
        return !sites || sites->count(site_id) > 0;
    }
};

/// Alpha at a given step under the configured decay.
inline double step_alpha(const OutlierLossConfig &config, std::size_t step) {
    config.validate();
    switch (config.schedule) {
    case OutlierLossConfig::Schedule::Constant:
        return config.alpha;
    case OutlierLossConfig::Schedule::LinearDecay: {
        const double f = static_cast<double>(step) / static_cast<double>(config.total_steps);
        return config.alpha * std::max(0.0, 1.0 - f);
    }
    case OutlierLossConfig::Schedule::CosineDecay: {
        const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(config.total_steps));
        return config.alpha * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
    }
    }
    return config.alpha;
}

inline void to_json(nlohmann::json &j, const OutlierLossConfig &c) {
    const char *sched = c.schedule == OutlierLossConfig::Schedule::Constant ? "constant"
                        : c.schedule == OutlierLossConfig::Schedule::LinearDecay ? "linear"
                                                                                 : "cosine";
    j = nlohmann::json{{"alpha", c.alpha}, {"schedule", sched}, {"total_steps", c.total_steps}};
    if (c.sites)
        j["sites"] = *c.sites;
    else
        j["sites"] = "all";
}

inline void from_json(const nlohmann::json &j, OutlierLossConfig &c) {
    c = OutlierLossConfig{};
    if (j.contains("alpha"))
        c.alpha = j.at("alpha").get<double>();
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
    if (j.contains("total_steps"))
        c.total_steps = j.at("total_steps").get<std::size_t>();
    if (j.contains("sites") && j.at("sites").is_array())
        c.sites = j.at("sites").get<std::set<std::string>>();
    c.validate();
}

// ---------------------------------------------------------------------------
// Task loss (mean cross-entropy over softmax probabilities)
// ---------------------------------------------------------------------------

/// Differentiable tape version.
inline Tape::NodeId classification_loss(Tape &tape, Tape::NodeId logits, const Tensor &labels) {
    return tape.cross_entropy(logits, labels);
}

/// Value-only version for evaluation and logging.
inline double classification_loss_value(const Tensor &logits, const Tensor &labels) {
    Tape tape;
    return tape.value(tape.cross_entropy(tape.leaf(logits), labels))[0];
}

// ---------------------------------------------------------------------------
// Outlier-driven loss: mean over samples and observer sites of
// (max|A| - median|A|) / sigma(A), with sigma over the signed values.
// ---------------------------------------------------------------------------

/// Per-activation outlier term, value domain. sigma = 0 is degenerate.
inline double outlier_metric(const Tensor &activation) {
    if (activation.numel() < 2)
        throw DomainError("outlier metric needs at least 2 elements");
    const double sigma = stddev(activation);
    if (sigma == 0.0)
        throw DegenerateError("outlier metric: zero-variance activation");
    return (max_abs(activation) - median_abs(activation)) / sigma;
}

/// Activations captured at one observer site, one tape node per sample.
struct SiteActivationNodes {
    std::string site_id;
    std::vector<Tape::NodeId> per_sample;
};

/// Differentiable outlier-driven loss over the captured activations.
/// max and median propagate subgradients at their defining order
/// statistics; sigma is the population standard deviation.
inline Tape::NodeId outlier_loss(Tape &tape, const std::vector<SiteActivationNodes> &sites) {
    if (sites.empty())
        throw DomainError("outlier_loss: no observer sites");
    std::vector<Tape::NodeId> terms;
    for (const auto &site : sites) {
        if (site.per_sample.empty())
            throw DomainError("outlier_loss: site '" + site.site_id + "' has no samples");
        for (Tape::NodeId a : site.per_sample) {
            if (tape.value(a).numel() < 2)
                throw DomainError("outlier_loss: activation at site '" + site.site_id +
                                  "' has fewer than 2 elements");
            const Tape::NodeId sigma = tape.stddev(a);
            if (tape.value(sigma)[0] == 0.0)
                throw DegenerateError("outlier_loss: zero-variance activation at site '" + site.site_id +
                                      "'");
            const Tape::NodeId spread = tape.sub(tape.max_abs(a), tape.median_abs(a));
            terms.push_back(tape.div(spread, sigma));
        }
    }
    const Tape::NodeId total = terms.size() == 1 ? terms[0] : tape.add_many(terms);
    return tape.scale(total, 1.0 / static_cast<double>(terms.size()));
}

/// Value-only outlier loss over per-site, per-sample activation tensors.
inline double outlier_loss_value(const std::vector<std::vector<Tensor>> &activations_by_site) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto &site : activations_by_site)
        for (const Tensor &a : site) {
            sum += outlier_metric(a);
            ++count;
        }
    if (count == 0)
        throw DomainError("outlier_loss_value: no activations");
    return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Blended objective: (1 - alpha) * task loss + alpha * outlier loss
// ---------------------------------------------------------------------------

inline Tape::NodeId total_loss(Tape &tape, Tape::NodeId cls, Tape::NodeId out, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw DomainError("alpha must be in [0,1]");
    return tape.affine(cls, out, 1.0 - alpha, alpha);
}

inline double total_loss_value(double cls, double out, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw DomainError("alpha must be in [0,1]");
    return (1.0 - alpha) * cls + alpha * out;
}

} // namespace qtlab
