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
#include <string>
#include <vector>

#include "qtlab/errors.hpp"
#include "qtlab/quantizer.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

/// Split of a tensor's quantization error into the part contributed by
/// clipped elements (saturation) and by rounding of the unclipped ones
/// (precision loss). The element partition is disjoint, so
/// total == saturation + precision holds exactly.
struct ErrorDecomposition {
    std::string site_id;
    double saturation_error = 0.0;
    double precision_error = 0.0;
    double total_error = 0.0;
    double precision_share = 0.0;
    double kl_divergence = 0.0;
    double range_before = 0.0;
    double range_after = 0.0;

    void refresh_derived() {
        total_error = saturation_error + precision_error;
        precision_share = total_error > 0.0 ? precision_error / total_error : 0.0;
    }

    /// Accumulate another decomposition of the same site (errors and KL are
    /// additive across batches; ranges take the max).
    void accumulate(const ErrorDecomposition &other) {
        saturation_error += other.saturation_error;
        precision_error += other.precision_error;
        kl_divergence += other.kl_divergence;
        range_before = std::max(range_before, other.range_before);
        range_after = std::max(range_after, other.range_after);
        refresh_derived();
    }
};

/// Elementwise split: |x| beyond the representable range contributes its
/// squared clip delta to saturation (clipped elements carry no further
/// rounding term); everything else contributes its squared rounding delta
/// to precision loss.
inline ErrorDecomposition decompose(const Tensor &x, const QuantSpec &spec) {
    spec.validate();
    ErrorDecomposition d;
    const double range = spec.range();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        const double a = std::abs(v);
        if (a > range) {
            const double delta = a - range;
            d.saturation_error += delta * delta;
        } else {
            const double delta = v - fake_quant(v, spec);
            d.precision_error += delta * delta;
        }
        d.range_before = std::max(d.range_before, a);
    }
    d.range_after = std::min(d.range_before, range);
    d.refresh_derived();
    return d;
}

/// KL(P || Q) between `bins`-bin normalized histograms of x and of
/// fake_quant(x) over the common symmetric range [-max|x|, max|x|], with
/// additive smoothing eps on both sides. An all-equal tensor is defined to
/// return 0.
inline double kl_precision_loss(const Tensor &x, const QuantSpec &spec, int bins = 512) {
    if (x.numel() == 0)
        throw DomainError("kl_precision_loss of empty tensor");
    if (bins < 16)
        throw DomainError("kl_precision_loss needs at least 16 bins");
    spec.validate();
    double lo = x[0], hi = x[0];
    for (std::size_t i = 1; i < x.numel(); ++i) {
        lo = std::min(lo, x[i]);
        hi = std::max(hi, x[i]);
    }
    if (lo == hi)
        return 0.0;
    const double m = std::max(std::abs(lo), std::abs(hi));
    const double width = 2.0 * m / static_cast<double>(bins);
    std::vector<double> p(static_cast<std::size_t>(bins), 0.0), q(static_cast<std::size_t>(bins), 0.0);
    auto bin_of = [m, width, bins](double v) {
        auto idx = static_cast<long>((v + m) / width);
        return static_cast<std::size_t>(std::clamp(idx, 0L, static_cast<long>(bins - 1)));
    };
    for (std::size_t i = 0; i < x.numel(); ++i) {
        p[bin_of(x[i])] += 1.0;
        q[bin_of(fake_quant(x[i], spec))] += 1.0;
    }
    constexpr double eps = 1e-10;
    const double n = static_cast<double>(x.numel());
    const double norm = 1.0 + static_cast<double>(bins) * eps;
    double kl = 0.0;
    for (int i = 0; i < bins; ++i) {
        const double pi = (p[static_cast<std::size_t>(i)] / n + eps) / norm;
        const double qi = (q[static_cast<std::size_t>(i)] / n + eps) / norm;
        kl += pi * std::log(pi / qi);
    }
    return kl;
}

} // namespace qtlab
