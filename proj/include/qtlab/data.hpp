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

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "qtlab/errors.hpp"
#include "qtlab/rng.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

/// Synthetic sequence-classification task: each class owns a fixed gaussian
/// token-pattern prototype and samples are the prototype plus isotropic
/// noise. Sample i is a pure function of (seed, i), so batches, splits and
/// parallel evaluation never depend on generation order.
class SyntheticTask {
public:
    struct Config {
        std::size_t num_classes = 10;
        std::size_t seq_len = 16;
        std::size_t dim = 64;
        std::size_t dataset_size = 2000;
        double noise = 1.0;
        std::uint64_t seed = 0;
    };

    explicit SyntheticTask(Config cfg) : cfg_(cfg) {
        if (cfg_.num_classes < 2 || cfg_.seq_len == 0 || cfg_.dim == 0 || cfg_.dataset_size == 0)
            throw ConfigError("synthetic task extents must be positive (and >= 2 classes)");
        Rng proto_rng(mix_hash(cfg_.seed, 0xda7a5e7));
        prototypes_.reserve(cfg_.num_classes);
        for (std::size_t c = 0; c < cfg_.num_classes; ++c)
            prototypes_.push_back(Tensor::gaussian({cfg_.seq_len, cfg_.dim}, proto_rng));
        for (std::size_t i = 0; i < cfg_.dataset_size; ++i) {
            // 20% evaluation split by seed-stable hashing
            if (mix_hash(cfg_.seed ^ 0x5917ULL, i) % 5 == 0)
                eval_indices_.push_back(i);
            else
                train_indices_.push_back(i);
        }
    }

    const Config &config() const { return cfg_; }
    const std::vector<std::size_t> &train_indices() const { return train_indices_; }
    const std::vector<std::size_t> &eval_indices() const { return eval_indices_; }

    std::size_t label_of(std::size_t index) const {
        return mix_hash(cfg_.seed ^ 0xc1a55ULL, index) % cfg_.num_classes;
    }

    /// Features of sample `index`, shape [seq_len x dim].
    Tensor sample(std::size_t index) const {
        Rng rng(mix_hash(cfg_.seed ^ 0xfea7ULL, index));
        const Tensor &proto = prototypes_[label_of(index)];
        Tensor x = proto;
        for (std::size_t i = 0; i < x.numel(); ++i)
            x[i] += cfg_.noise * rng.gaussian();
        return x;
    }

    struct Batch {
        Tensor inputs;  // [m x seq_len x dim]
        Tensor labels;  // [m x num_classes] one-hot
        std::vector<std::size_t> indices;
    };

    Batch make_batch(const std::vector<std::size_t> &indices) const {
        if (indices.empty())
            throw DataError("make_batch: empty index list");
        const std::size_t m = indices.size();
        Tensor inputs = Tensor::zeros({m, cfg_.seq_len, cfg_.dim});
        Tensor labels = Tensor::zeros({m, cfg_.num_classes});
        const std::size_t stride = cfg_.seq_len * cfg_.dim;
        for (std::size_t i = 0; i < m; ++i) {
            const Tensor x = sample(indices[i]);
            std::copy(x.data(), x.data() + stride, inputs.data() + i * stride);
            labels[i * cfg_.num_classes + label_of(indices[i])] = 1.0;
        }
        return Batch{std::move(inputs), std::move(labels), indices};
    }

    /// Deterministic with-replacement training batch for step `step`.
    Batch training_batch(std::size_t step, std::size_t batch_size) const {
        if (train_indices_.empty())
            throw DataError("task has no training samples");
        Rng rng(mix_hash(cfg_.seed ^ 0xba7c4ULL, step));
        std::vector<std::size_t> idx(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i)
            idx[i] = train_indices_[rng.below(train_indices_.size())];
        return make_batch(idx);
    }

    /// Calibration batches follow the paper's fixed protocol: a dedicated
    /// stream of `batches` x `batch_size` training samples.
    std::vector<Batch> calibration_batches(std::size_t batches, std::size_t batch_size) const {
        std::vector<Batch> out;
        out.reserve(batches);
        for (std::size_t b = 0; b < batches; ++b) {
            Rng rng(mix_hash(cfg_.seed ^ 0xca11bULL, b));
            std::vector<std::size_t> idx(batch_size);
            for (std::size_t i = 0; i < batch_size; ++i)
                idx[i] = train_indices_[rng.below(train_indices_.size())];
            out.push_back(make_batch(idx));
        }
        return out;
    }

private:
    Config cfg_;
    std::vector<Tensor> prototypes_;
    std::vector<std::size_t> train_indices_;
    std::vector<std::size_t> eval_indices_;
};

inline void to_json(nlohmann::json &j, const SyntheticTask::Config &c) {
    j = nlohmann::json{{"num_classes", c.num_classes}, {"seq_len", c.seq_len},
                       {"dim", c.dim},                 {"dataset_size", c.dataset_size},
                       {"noise", c.noise},             {"seed", c.seed}};
}

inline void from_json(const nlohmann::json &j, SyntheticTask::Config &c) {
    c = SyntheticTask::Config{};
    if (j.contains("num_classes"))
        j.at("num_classes").get_to(c.num_classes);
    if (j.contains("seq_len"))
        j.at("seq_len").get_to(c.seq_len);
    if (j.contains("dim"))
        j.at("dim").get_to(c.dim);
    if (j.contains("dataset_size"))
        j.at("dataset_size").get_to(c.dataset_size);
    if (j.contains("noise"))
        j.at("noise").get_to(c.noise);
    if (j.contains("seed"))
        j.at("seed").get_to(c.seed);
}

} // namespace qtlab
