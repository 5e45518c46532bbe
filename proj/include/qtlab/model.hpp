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
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtlab/autodiff.hpp"
#include "qtlab/errors.hpp"
#include "qtlab/io.hpp"
#include "qtlab/outlier_loss.hpp"
#include "qtlab/quantizer.hpp"
#include "qtlab/rng.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

struct ToyTransformerConfig {
    std::size_t depth = 2;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t seq_len = 16;
    std::size_t num_classes = 10;
    std::uint64_t seed = 0;

    void validate() const {
        if (depth == 0 || dim == 0 || heads == 0 || mlp_ratio == 0 || seq_len == 0 || num_classes < 2)
            throw ConfigError("toy transformer extents must be positive (and >= 2 classes)");
        if (dim % heads != 0)
            throw ConfigError("dim must be divisible by heads");
    }

    std::size_t head_dim() const { return dim / heads; }
    std::size_t hidden() const { return dim * mlp_ratio; }
};

inline void to_json(nlohmann::json &j, const ToyTransformerConfig &c) {
    j = nlohmann::json{{"depth", c.depth},     {"dim", c.dim},
                       {"heads", c.heads},     {"mlp_ratio", c.mlp_ratio},
                       {"seq_len", c.seq_len}, {"num_classes", c.num_classes},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json &j, ToyTransformerConfig &c) {
    c = ToyTransformerConfig{};
    if (j.contains("depth"))
        j.at("depth").get_to(c.depth);
    if (j.contains("dim"))
        j.at("dim").get_to(c.dim);
    if (j.contains("heads"))
        j.at("heads").get_to(c.heads);
    if (j.contains("mlp_ratio"))
        j.at("mlp_ratio").get_to(c.mlp_ratio);
    if (j.contains("seq_len"))
        j.at("seq_len").get_to(c.seq_len);
    if (j.contains("num_classes"))
        j.at("num_classes").get_to(c.num_classes);
    if (j.contains("seed"))
        j.at("seed").get_to(c.seed);
    c.validate();
}

/// Execution-time record of what the forward pass quantized. Softmax
/// outputs and LayerNorm internals are never fake-quantized; the flags make
/// that checkable from outside.
struct InferInstrumentation {
    std::set<std::string> quantized_sites;
    std::size_t softmax_evals = 0;
    std::size_t layernorm_evals = 0;
    bool softmax_output_quantized = false;
    bool layernorm_internals_quantized = false;
};

struct InferOptions {
    /// Per-site activation specs; present sites are fake-quantized in flow.
    const std::map<std::string, QuantSpec> *act_specs = nullptr;
    /// Alternative (typically fake-quantized) weights.
    const std::map<std::string, Tensor> *weights_override = nullptr;
    /// When set, receives the full-precision tensor seen at every site.
    std::map<std::string, Tensor> *capture = nullptr;
    InferInstrumentation *instrumentation = nullptr;
};

/// Pre-LN transformer classifier: depth x (LN -> multi-head self-attention
/// -> residual; LN -> GELU MLP -> residual), final LN, sequence mean-pool,
/// linear head. Every linear and LayerNorm layer exposes exactly one input
/// and one output observer site.
class ToyTransformer {
public:
    explicit ToyTransformer(ToyTransformerConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        init_weights();
        build_sites();
    }

    const ToyTransformerConfig &config() const { return cfg_; }
    const std::map<std::string, Tensor> &weights() const { return weights_; }
    std::map<std::string, Tensor> &weights() { return weights_; }
    const std::vector<ObserverSite> &sites() const { return sites_; }

    const ObserverSite &site(const std::string &id) const {
        for (const auto &s : sites_)
            if (s.site_id == id)
                return s;
        throw ConfigError("unknown observer site '" + id + "'");
    }

    /// Only .weight tensors are quantized; biases and LayerNorm affine
    /// parameters stay full precision.
    static bool is_quantizable_weight(const std::string &name) {
        return name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    }

    static std::vector<std::string> expected_weight_names(const ToyTransformerConfig &cfg) {
        std::vector<std::string> names;
        for (std::size_t b = 0; b < cfg.depth; ++b) {
            const std::string p = "blocks." + std::to_string(b) + ".";
            names.push_back(p + "ln1.gamma");
            names.push_back(p + "ln1.beta");
            for (const char *lin : {"wq", "wk", "wv", "wo"}) {
                names.push_back(p + "attn." + lin + ".weight");
                names.push_back(p + "attn." + lin + ".bias");
            }
            names.push_back(p + "ln2.gamma");
            names.push_back(p + "ln2.beta");
            for (const char *lin : {"fc1", "fc2"}) {
                names.push_back(p + "mlp." + lin + ".weight");
                names.push_back(p + "mlp." + lin + ".bias");
            }
        }
        names.push_back("ln_f.gamma");
        names.push_back("ln_f.beta");
        names.push_back("head.weight");
        names.push_back("head.bias");
        return names;
    }

    /// Min-max weight specs at the given bit-width. All-zero tensors get a
    /// unit scale; fake quantization maps them to themselves.
    std::map<std::string, QuantSpec> weight_quant_specs(int bits) const {
        std::map<std::string, QuantSpec> specs;
        for (const auto &[name, w] : weights_) {
            if (!is_quantizable_weight(name))
                continue;
            const double r = max_abs(w);
            specs.emplace(name, r > 0.0 ? scale_from_range(r, bits) : QuantSpec(bits, 1.0));
        }
        return specs;
    }

    std::map<std::string, Tensor> quantized_weights(int bits) const {
        return quantize_model(weights_, weight_quant_specs(bits), [](const std::string &n) {
            return !is_quantizable_weight(n);
        });
    }

    // -- forward -------------------------------------------------------------

    struct TapeRun {
        Tape::NodeId logits = 0;
        std::map<std::string, Tape::NodeId> weight_nodes;
        std::vector<SiteActivationNodes> captured;
    };

    /// Differentiable forward. `capture` selects observer sites whose
    /// per-sample activations are sliced onto the tape for the outlier loss.
    TapeRun forward_tape(Tape &tape, const Tensor &inputs,
                         const std::function<bool(const ObserverSite &)> &capture = {}) const {
        return run_forward(tape, inputs, weights_, capture, InferOptions{}, nullptr);
    }

    /// Value-only forward, optionally fake-quantized per InferOptions. Runs
    /// on a scratch tape so full-precision numbers are produced by exactly
    /// the same kernels as training.
    Tensor forward(const Tensor &inputs, const InferOptions &opt = {}) const {
        Tape tape;
        const std::map<std::string, Tensor> &w = opt.weights_override ? *opt.weights_override : weights_;
        if (opt.weights_override) {
            auto expected = expected_weight_names(cfg_);
            for (const auto &name : expected)
                if (!w.count(name))
                    throw ConfigError("weight override is missing '" + name + "'");
            if (w.size() != expected.size())
                throw ConfigError("weight override names do not match the model config");
        }
        TapeRun run = run_forward(tape, inputs, w, {}, opt, opt.capture);
        return tape.value(run.logits);
    }

    // -- outlier injection -----------------------------------------------------

    struct InjectionReport {
        /// site ids where the activation dynamic range is expected to grow
        std::set<std::string> outlier_sites;
        /// layer name -> scaled output channels
        std::map<std::string, std::vector<std::size_t>> channels;
    };

    /// Reproduce pretraining-style channel outliers: scale a fraction of
    /// output channels of wq and wv by `magnitude` and divide the matching
    /// consumer channels (wk columns, wo rows) so the function is preserved
    /// exactly while the named activation sites carry outliers.
    InjectionReport inject_outliers(double magnitude, double fraction, std::uint64_t salt = 0x1e47) {
        if (!(magnitude >= 1.0) || !std::isfinite(magnitude))
            throw DomainError("outlier magnitude must be >= 1");
        if (!(fraction > 0.0 && fraction <= 0.05))
            throw DomainError("outlier fraction must be in (0, 0.05]");
        InjectionReport report;
        if (magnitude == 1.0)
            return report;
        Rng rng(mix_hash(cfg_.seed, salt));
        const std::size_t nc = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(cfg_.dim))));
        for (std::size_t b = 0; b < cfg_.depth; ++b) {
            const std::string p = "blocks." + std::to_string(b) + ".attn.";
            scale_pair(p + "wq", p + "wk", PairKind::QueryKey, pick_channels(rng, nc), magnitude,
                       report);
            scale_pair(p + "wv", p + "wo", PairKind::ValueOut, pick_channels(rng, nc), magnitude,
                       report);
            report.outlier_sites.insert(p + "wq.out");
            report.outlier_sites.insert(p + "wv.out");
            report.outlier_sites.insert(p + "wo.in");
        }
        return report;
    }

private:
    enum class PairKind { QueryKey, ValueOut };

    std::vector<std::size_t> pick_channels(Rng &rng, std::size_t nc) const {
        std::set<std::size_t> chosen;
        while (chosen.size() < nc)
            chosen.insert(static_cast<std::size_t>(rng.below(cfg_.dim)));
        return {chosen.begin(), chosen.end()};
    }

    void scale_pair(const std::string &producer, const std::string &consumer, PairKind kind,
                    const std::vector<std::size_t> &channels, double magnitude,
                    InjectionReport &report) {
        Tensor &pw = weights_.at(producer + ".weight");
        Tensor &pb = weights_.at(producer + ".bias");
        Tensor &cw = weights_.at(consumer + ".weight");
        Tensor &cb = weights_.at(consumer + ".bias");
        for (std::size_t c : channels) {
            for (std::size_t r = 0; r < pw.rows(); ++r)
                pw.at(r, c) *= magnitude;
            pb[c] *= magnitude;
            if (kind == PairKind::QueryKey) {
                // scores q.k are preserved when k's matching column shrinks
                for (std::size_t r = 0; r < cw.rows(); ++r)
                    cw.at(r, c) /= magnitude;
                cb[c] /= magnitude;
            } else {
                // attention output o = p.v is linear in v's channel, so the
                // matching wo input row compensates exactly
                for (std::size_t j = 0; j < cw.cols(); ++j)
                    cw.at(c, j) /= magnitude;
            }
        }
        report.channels[producer] = channels;
    }

    void init_weights() {
        Rng rng(mix_hash(cfg_.seed, 0x1417));
        for (const auto &name : expected_weight_names(cfg_)) {
            const Shape shape = weight_shape(name);
            if (name.find(".gamma") != std::string::npos)
                weights_.emplace(name, Tensor::full(shape, 1.0));
            else if (name.find(".beta") != std::string::npos || name.find(".bias") != std::string::npos)
                weights_.emplace(name, Tensor::zeros(shape));
            else
                weights_.emplace(name, Tensor::gaussian(shape, rng, 0.02));
        }
    }

    Shape weight_shape(const std::string &name) const {
        const std::size_t d = cfg_.dim, h = cfg_.hidden(), k = cfg_.num_classes;
        auto ends_with = [&name](const std::string &suffix) {
            return name.size() >= suffix.size() &&
                   name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        if (name.find(".ln") != std::string::npos || name.rfind("ln_f.", 0) == 0)
            return {d};
        if (name == "head.weight")
            return {d, k};
        if (name == "head.bias")
            return {k};
        if (name.find(".mlp.fc1.") != std::string::npos)
            return ends_with(".weight") ? Shape{d, h} : Shape{h};
        if (name.find(".mlp.fc2.") != std::string::npos)
            return ends_with(".weight") ? Shape{h, d} : Shape{d};
        // attention projections
        return ends_with(".weight") ? Shape{d, d} : Shape{d};
    }

    void build_sites() {
        auto add = [this](const std::string &id, ObserverSite::Kind kind, int block) {
            sites_.push_back(ObserverSite{id, kind, block});
        };
        using K = ObserverSite::Kind;
        for (std::size_t b = 0; b < cfg_.depth; ++b) {
            const std::string p = "blocks." + std::to_string(b) + ".";
            const int bi = static_cast<int>(b);
            add(p + "ln1.in", K::LayerNormInput, bi);
            add(p + "ln1.out", K::LayerNormOutput, bi);
            for (const char *lin : {"wq", "wk", "wv", "wo"}) {
                add(p + "attn." + lin + ".in", K::LinearInput, bi);
                add(p + "attn." + lin + ".out", K::LinearOutput, bi);
            }
            add(p + "ln2.in", K::LayerNormInput, bi);
            add(p + "ln2.out", K::LayerNormOutput, bi);
            for (const char *lin : {"fc1", "fc2"}) {
                add(p + "mlp." + lin + ".in", K::LinearInput, bi);
                add(p + "mlp." + lin + ".out", K::LinearOutput, bi);
            }
        }
        const int tail = static_cast<int>(cfg_.depth);
        add("ln_f.in", K::LayerNormInput, tail);
        add("ln_f.out", K::LayerNormOutput, tail);
        add("head.in", K::LinearInput, tail);
        add("head.out", K::LinearOutput, tail);
    }

    /// Shared forward builder. `capture` slices per-sample activations onto
    /// the tape (training); `opt`/`value_capture` drive fake quantization
    /// and full-tensor capture (inference/calibration).
    TapeRun run_forward(Tape &tape, const Tensor &inputs, const std::map<std::string, Tensor> &w,
                        const std::function<bool(const ObserverSite &)> &capture,
                        const InferOptions &opt, std::map<std::string, Tensor> *value_capture) const {
        if (inputs.ndim() != 3 || inputs.extent(1) != cfg_.seq_len || inputs.extent(2) != cfg_.dim)
            throw DimensionError("input batch must be [m x " + std::to_string(cfg_.seq_len) + " x " +
                                 std::to_string(cfg_.dim) + "], got " + shape_to_string(inputs.shape()));
        const std::size_t m = inputs.extent(0);
        const std::size_t seq = cfg_.seq_len;
        const std::size_t dh = cfg_.head_dim();

        TapeRun run;
        for (const auto &[name, tensor] : w)
            run.weight_nodes.emplace(name, tape.leaf(tensor));
        auto wid = [&run](const std::string &name) { return run.weight_nodes.at(name); };

        std::size_t site_cursor = 0;
        // Observes the tensor at the next site (sites_ is in forward order),
        // then applies that site's fake-quant spec if one was supplied.
        auto observe = [&](const std::string &id, Tape::NodeId node) -> Tape::NodeId {
            const ObserverSite &s = sites_[site_cursor];
            if (s.site_id != id)
                throw StateError("observer ordering bug at site '" + id + "'");
            ++site_cursor;
            if (capture && capture(s)) {
                const std::size_t rows_per_sample = tape.value(node).rows() / m;
                SiteActivationNodes cap{s.site_id, {}};
                cap.per_sample.reserve(m);
                for (std::size_t i = 0; i < m; ++i)
                    cap.per_sample.push_back(tape.slice_rows(node, i * rows_per_sample, rows_per_sample));
                run.captured.push_back(std::move(cap));
            }
            if (value_capture)
                value_capture->emplace(s.site_id, tape.value(node));
            if (opt.act_specs) {
                auto it = opt.act_specs->find(s.site_id);
                if (it != opt.act_specs->end()) {
                    const QuantSpec spec = it->second;
                    node = tape.transform(node, [spec](double v) { return fake_quant(v, spec); });
                    if (opt.instrumentation)
                        opt.instrumentation->quantized_sites.insert(s.site_id);
                }
            }
            return node;
        };

        Tape::NodeId x = tape.leaf(inputs.reshaped({m * seq, cfg_.dim}));

        for (std::size_t b = 0; b < cfg_.depth; ++b) {
            const std::string p = "blocks." + std::to_string(b) + ".";
            // attention sublayer
            Tape::NodeId ln_in = observe(p + "ln1.in", x);
            if (opt.instrumentation)
                ++opt.instrumentation->layernorm_evals;
            Tape::NodeId h = tape.layernorm(ln_in, wid(p + "ln1.gamma"), wid(p + "ln1.beta"));
            h = observe(p + "ln1.out", h);

            auto project = [&](const char *lin) {
                Tape::NodeId in = observe(p + "attn." + lin + ".in", h);
                Tape::NodeId out =
                    tape.linear(in, wid(p + "attn." + lin + ".weight"), wid(p + "attn." + lin + ".bias"));
                return observe(p + "attn." + lin + ".out", out);
            };
            Tape::NodeId q = project("wq");
            Tape::NodeId k = project("wk");
            Tape::NodeId v = project("wv");

            std::vector<Tape::NodeId> head_outputs;
            head_outputs.reserve(cfg_.heads);
            for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
                Tape::NodeId qh = tape.slice_cols(q, hd * dh, dh);
                Tape::NodeId kh = tape.slice_cols(k, hd * dh, dh);
                Tape::NodeId vh = tape.slice_cols(v, hd * dh, dh);
                Tape::NodeId scores = tape.attention_scores(qh, kh, m, seq);
                scores = tape.scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
                if (opt.instrumentation)
                    ++opt.instrumentation->softmax_evals;
                Tape::NodeId probs = tape.softmax_rows(scores);
                head_outputs.push_back(tape.attention_apply(probs, vh, m, seq));
            }
            Tape::NodeId o = cfg_.heads == 1 ? head_outputs[0] : tape.concat_cols(head_outputs);
            Tape::NodeId wo_in = observe(p + "attn.wo.in", o);
            Tape::NodeId attn =
                tape.linear(wo_in, wid(p + "attn.wo.weight"), wid(p + "attn.wo.bias"));
            attn = observe(p + "attn.wo.out", attn);
            x = tape.add(x, attn);

            // MLP sublayer
            Tape::NodeId ln2_in = observe(p + "ln2.in", x);
            if (opt.instrumentation)
                ++opt.instrumentation->layernorm_evals;
            Tape::NodeId h2 = tape.layernorm(ln2_in, wid(p + "ln2.gamma"), wid(p + "ln2.beta"));
            h2 = observe(p + "ln2.out", h2);

            Tape::NodeId fc1_in = observe(p + "mlp.fc1.in", h2);
            Tape::NodeId u =
                tape.linear(fc1_in, wid(p + "mlp.fc1.weight"), wid(p + "mlp.fc1.bias"));
            u = observe(p + "mlp.fc1.out", u);
            Tape::NodeId g = tape.gelu(u);
            Tape::NodeId fc2_in = observe(p + "mlp.fc2.in", g);
            Tape::NodeId y =
                tape.linear(fc2_in, wid(p + "mlp.fc2.weight"), wid(p + "mlp.fc2.bias"));
            y = observe(p + "mlp.fc2.out", y);
            x = tape.add(x, y);
        }

        Tape::NodeId lnf_in = observe("ln_f.in", x);
        if (opt.instrumentation)
            ++opt.instrumentation->layernorm_evals;
        Tape::NodeId xf = tape.layernorm(lnf_in, wid("ln_f.gamma"), wid("ln_f.beta"));
        xf = observe("ln_f.out", xf);
        Tape::NodeId pooled = tape.mean_rows_blocked(xf, seq);
        Tape::NodeId head_in = observe("head.in", pooled);
        Tape::NodeId logits = tape.linear(head_in, wid("head.weight"), wid("head.bias"));
        logits = observe("head.out", logits);
        run.logits = logits;
        return run;
    }

    ToyTransformerConfig cfg_;
    std::map<std::string, Tensor> weights_;
    std::vector<ObserverSite> sites_;
};

// ---------------------------------------------------------------------------
// Checkpoints: directory with manifest.json plus one tensor file pair per
// weight under weights/.
// ---------------------------------------------------------------------------

struct ModelCheckpoint {
    ToyTransformerConfig config;
    std::map<std::string, Tensor> weights;
    std::map<std::string, QuantSpec> quant_specs;
    nlohmann::json metadata;
};

inline ModelCheckpoint make_checkpoint(const ToyTransformer &model, nlohmann::json metadata = {}) {
    return ModelCheckpoint{model.config(), model.weights(), {}, std::move(metadata)};
}

inline void validate_checkpoint(const ModelCheckpoint &ckpt) {
    ckpt.config.validate();
    const auto expected = ToyTransformer::expected_weight_names(ckpt.config);
    if (ckpt.weights.size() != expected.size())
        throw ConfigError("checkpoint weight count does not match the config");
    for (const auto &name : expected)
        if (!ckpt.weights.count(name))
            throw ConfigError("checkpoint is missing weight '" + name + "'");
    for (const auto &[name, spec] : ckpt.quant_specs) {
        if (!ckpt.weights.count(name))
            throw ConfigError("quant spec references unknown weight '" + name + "'");
        spec.validate();
    }
}

inline void save_checkpoint(const fs::path &dir, const ModelCheckpoint &ckpt) {
    validate_checkpoint(ckpt);
    fs::create_directories(dir / "weights");
    nlohmann::json manifest;
    manifest["config"] = ckpt.config;
    manifest["metadata"] = ckpt.metadata;
    nlohmann::json index = nlohmann::json::object();
    for (const auto &[name, tensor] : ckpt.weights) {
        const std::string rel = "weights/" + name;
        write_tensor(dir / rel, tensor);
        index[name] = rel;
    }
    manifest["weights"] = index;
    nlohmann::json specs = nlohmann::json::object();
    for (const auto &[name, spec] : ckpt.quant_specs)
        specs[name] = spec;
    manifest["quant_specs"] = specs;
    write_json_file(dir / "manifest.json", manifest);
}

inline ModelCheckpoint load_checkpoint(const fs::path &dir) {
    const nlohmann::json manifest = read_json_file(dir / "manifest.json");
    ModelCheckpoint ckpt;
    ckpt.config = manifest.at("config").get<ToyTransformerConfig>();
    ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
    for (const auto &[name, rel] : manifest.at("weights").items())
        ckpt.weights.emplace(name, read_tensor(dir / rel.get<std::string>()));
    if (manifest.contains("quant_specs"))
        for (const auto &[name, spec] : manifest.at("quant_specs").items())
            ckpt.quant_specs.emplace(name, spec.get<QuantSpec>());
    validate_checkpoint(ckpt);
    return ckpt;
}

inline ToyTransformer model_from_checkpoint(const ModelCheckpoint &ckpt) {
    ToyTransformer model(ckpt.config);
    model.weights() = ckpt.weights;
    return model;
}

} // namespace qtlab
