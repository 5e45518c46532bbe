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
#include <functional>
#include <vector>

#include "qtlab/rng.hpp"
#include "qtlab/tensor.hpp"

namespace qtest {

using qtlab::Rng;
using qtlab::Shape;
using qtlab::Tensor;

/// Central finite difference of f at coordinate i of x.
inline double central_diff(const std::function<double(const Tensor &)> &f, Tensor x, std::size_t i,
                           double h = 1e-5) {
    const double v = x[i];
    x[i] = v + h;
    const double up = f(x);
    x[i] = v - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

/// Random tensor whose |values| stay in [0.5, 2.5] with random signs: away
/// from zero (no |.| kink near the fd step) and continuously distributed
/// (ties have probability zero).
inline Tensor tie_free_tensor(Shape shape, Rng &rng) {
    const std::size_t n = qtlab::shape_numel(shape);
    std::vector<double> data(n);
    for (double &v : data) {
        const double mag = rng.uniform(0.5, 2.5);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor(std::move(shape), std::move(data));
}

/// Exact sort-based |value| quantile oracle (linear interpolation between
/// closest ranks), independent of the library implementation.
inline double sorted_abs_quantile(const Tensor &t, double p) {
    std::vector<double> mags(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i)
        mags[i] = std::abs(t[i]);
    std::sort(mags.begin(), mags.end());
    const double rank = p * static_cast<double>(mags.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, mags.size() - 1);
    return mags[lo] + (rank - static_cast<double>(lo)) * (mags[hi] - mags[lo]);
}

/// Two-pass population standard deviation oracle.
inline double two_pass_stddev(const Tensor &t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i)
        mean += t[i];
    mean /= static_cast<double>(t.numel());
    double ss = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i)
        ss += (t[i] - mean) * (t[i] - mean);
    return std::sqrt(ss / static_cast<double>(t.numel()));
}

} // namespace qtest
