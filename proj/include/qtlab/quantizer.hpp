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
#include <string>
#include <vector>

#include "json.hpp"

#include "qtlab/errors.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

/// Round-half-to-even. Relies on the default FE_TONEAREST environment; the
/// library never changes the floating-point rounding mode.
inline double round_half_even(double v) { return std::nearbyint(v); }

/// Symmetric uniform quantization parameters: zero-point is always 0 and the
/// integer range is +-(2^(bits-1) - 1), discarding the extra negative code.
struct QuantSpec {
    int bits = 8;
    double scale = 1.0;

    QuantSpec() = default;
    QuantSpec(int bits_, double scale_) : bits(bits_), scale(scale_) { validate(); }

    int qmax() const { return (1 << (bits - 1)) - 1; }
    double range() const { return scale * static_cast<double>(qmax()); }

    void validate() const {
        if (bits < 2 || bits > 16)
            throw DomainError("quant bit-width must be in [2,16], got " + std::to_string(bits));
        if (!(scale > 0.0) || !std::isfinite(scale))
            throw DomainError("quant scale must be positive and finite");
    }
};

inline void to_json(nlohmann::json &j, const QuantSpec &s) {
    j = nlohmann::json{{"bits", s.bits}, {"scale", s.scale}};
}

inline void from_json(const nlohmann::json &j, QuantSpec &s) {
    s = QuantSpec(j.at("bits").get<int>(), j.at("scale").get<double>());
}

/// scale = r / qmax, the min-max rule for a symmetric range of half-width r.
inline QuantSpec scale_from_range(double r, int bits) {
    if (!(r > 0.0) || !std::isfinite(r))
        throw DomainError("quantization range must be positive and finite");
    QuantSpec probe(bits, 1.0);
    return QuantSpec(bits, r / static_cast<double>(probe.qmax()));
}

inline double fake_quant(double x, const QuantSpec &spec) {
    const double q = round_half_even(x / spec.scale);
    const double qm = static_cast<double>(spec.qmax());
    return std::clamp(q, -qm, qm) * spec.scale;
}

/// Simulated quantize->dequantize, shape preserved.
inline Tensor fake_quant(const Tensor &t, const QuantSpec &spec) {
    spec.validate();
    Tensor out = t;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = fake_quant(out[i], spec);
    return out;
}

/// Integer codes plus the spec that produced them.
struct QuantizedTensor {
    std::vector<std::int32_t> codes;
    QuantSpec spec;
    Shape shape;
};

inline QuantizedTensor quantize(const Tensor &t, const QuantSpec &spec) {
    spec.validate();
    QuantizedTensor out;
    out.spec = spec;
    out.shape = t.shape();
    out.codes.resize(t.numel());
    const double qm = static_cast<double>(spec.qmax());
    for (std::size_t i = 0; i < t.numel(); ++i)
        out.codes[i] = static_cast<std::int32_t>(std::clamp(round_half_even(t[i] / spec.scale), -qm, qm));
    return out;
}

inline Tensor dequantize(const QuantizedTensor &q) {
    std::vector<double> data(q.codes.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<double>(q.codes[i]) * q.spec.scale;
    return Tensor(q.shape, std::move(data));
}

/// Fake-quantize a named weight set. Tensors for which `excluded` returns
/// true pass through untouched (softmax/LayerNorm parameters); every other
/// tensor must have a spec.
inline std::map<std::string, Tensor> quantize_model(
    const std::map<std::string, Tensor> &weights, const std::map<std::string, QuantSpec> &specs,
    const std::function<bool(const std::string &)> &excluded) {
    std::map<std::string, Tensor> out;
    for (const auto &[name, tensor] : weights) {
        if (excluded && excluded(name)) {
            out.emplace(name, tensor);
            continue;
        }
        auto it = specs.find(name);
        if (it == specs.end())
            throw ConfigError("no quantization spec for weight '" + name + "'");
        out.emplace(name, fake_quant(tensor, it->second));
    }
    return out;
}

} // namespace qtlab
