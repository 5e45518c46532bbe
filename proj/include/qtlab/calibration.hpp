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
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "qtlab/errors.hpp"
#include "qtlab/quantizer.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

/// Streaming per-site activation summary. Holds a fixed 2048-bin histogram
/// of |values| over [0, running max]; when the running max grows the counts
/// are redistributed proportionally onto the wider grid, so memory stays
/// constant across any calibration run. Signed moments are kept separately
/// for the standard deviation.
class ActivationStats {
public:
    static constexpr std::size_t kBins = 2048;

    ActivationStats() = default;
    explicit ActivationStats(std::string site_id) : site_id_(std::move(site_id)) {}

    const std::string &site_id() const { return site_id_; }
    double max_abs() const { return max_abs_; }
    std::size_t sample_count() const { return count_; }
    const std::vector<double> &histogram() const { return hist_; }
    const std::vector<double> &batch_maxima() const { return batch_max_; }

    /// Fold one batch of values into the summary.
    void observe(const Tensor &batch) {
        if (batch.numel() == 0)
            throw DataError("observe: empty batch");
        double bmax = 0.0;
        for (std::size_t i = 0; i < batch.numel(); ++i) {
            const double v = batch[i];
            if (!std::isfinite(v))
                throw DataError("observe: non-finite activation value");
            bmax = std::max(bmax, std::abs(v));
        }
        if (hist_.empty())
            hist_.assign(kBins, 0.0);
        if (bmax > max_abs_)
            rescale(bmax);
        const double width = bin_width();
        for (std::size_t i = 0; i < batch.numel(); ++i) {
            const double v = batch[i];
            const double a = std::abs(v);
            std::size_t idx = width > 0.0 ? static_cast<std::size_t>(a / width) : 0;
            hist_[std::min(idx, kBins - 1)] += 1.0;
            // Welford update over signed values.
            ++count_;
            const double d = v - mean_;
            mean_ += d / static_cast<double>(count_);
            m2_ += d * (v - mean_);
        }
        batch_max_.push_back(bmax);
    }

    /// Median of |values| interpolated from the histogram.
    double median_abs() const { return percentile(0.5); }

    /// Population standard deviation of the signed values.
    double stddev() const {
        if (count_ == 0)
            throw DomainError("stddev of empty stats");
        return std::sqrt(m2_ / static_cast<double>(count_));
    }

    /// p-th quantile of |values| from the pooled histogram, linear
    /// interpolation inside the hit bin. p = 1 returns the running max
    /// exactly so percentile calibration at 1.0 coincides with min-max.
    double percentile(double p) const {
        if (!(p >= 0.0 && p <= 1.0))
            throw DomainError("percentile fraction must be in [0,1]");
        if (count_ == 0)
            throw DomainError("percentile of empty stats");
        if (p == 1.0)
            return max_abs_;
        const double target = p * static_cast<double>(count_);
        double cum = 0.0;
        const double width = bin_width();
        for (std::size_t i = 0; i < kBins; ++i) {
            if (hist_[i] <= 0.0)
                continue;
            if (cum + hist_[i] >= target) {
                const double frac = (target - cum) / hist_[i];
                return (static_cast<double>(i) + frac) * width;
            }
            cum += hist_[i];
        }
        return max_abs_;
    }

    /// Commutative on max_abs and histogram contents; the per-batch maxima
    /// concatenate in argument order (EMA calibration is single-stream).
    static ActivationStats merge(const ActivationStats &a, const ActivationStats &b) {
        if (a.count_ == 0)
            return b;
        if (b.count_ == 0)
            return a;
        ActivationStats out(a.site_id_);
        out.max_abs_ = std::max(a.max_abs_, b.max_abs_);
        // project into separate buffers first: one addition per bin keeps
        // the merge exactly commutative
        std::vector<double> ha(kBins, 0.0), hb(kBins, 0.0);
        a.project_onto(out.max_abs_, ha);
        b.project_onto(out.max_abs_, hb);
        out.hist_.resize(kBins);
        for (std::size_t i = 0; i < kBins; ++i)
            out.hist_[i] = ha[i] + hb[i];
        out.count_ = a.count_ + b.count_;
        const double na = static_cast<double>(a.count_), nb = static_cast<double>(b.count_);
        const double d = b.mean_ - a.mean_;
        out.mean_ = a.mean_ + d * nb / (na + nb);
        out.m2_ = a.m2_ + b.m2_ + d * d * na * nb / (na + nb);
        out.batch_max_ = a.batch_max_;
        out.batch_max_.insert(out.batch_max_.end(), b.batch_max_.begin(), b.batch_max_.end());
        return out;
    }

private:
    double bin_width() const { return max_abs_ > 0.0 ? max_abs_ / static_cast<double>(kBins) : 0.0; }

    void rescale(double new_max) {
        if (max_abs_ > 0.0 && count_ > 0) {
            std::vector<double> wider(kBins, 0.0);
            project_onto(new_max, wider);
            hist_.swap(wider);
        }
        max_abs_ = new_max;
    }

    /// Spread this histogram's counts onto a grid over [0, new_max],
    /// splitting each bin proportionally by overlap.
    void project_onto(double new_max, std::vector<double> &dst) const {
        const double w_old = bin_width();
        const double w_new = new_max / static_cast<double>(kBins);
        if (w_old == 0.0 || w_new == 0.0) {
            if (count_ > 0)
                dst[0] += static_cast<double>(count_);
            return;
        }
        for (std::size_t i = 0; i < kBins; ++i) {
            const double c = hist_[i];
            if (c <= 0.0)
                continue;
            const double lo = static_cast<double>(i) * w_old;
            const double hi = lo + w_old;
            std::size_t j = static_cast<std::size_t>(lo / w_new);
            while (j < kBins) {
                const double seg_lo = std::max(lo, static_cast<double>(j) * w_new);
                const double seg_hi = std::min(hi, static_cast<double>(j + 1) * w_new);
                if (seg_hi <= seg_lo)
                    break;
                dst[j] += c * (seg_hi - seg_lo) / w_old;
                if (seg_hi >= hi)
                    break;
                ++j;
            }
        }
    }

    std::string site_id_;
    double max_abs_ = 0.0;
    std::vector<double> hist_;
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
    std::vector<double> batch_max_;
};

/// Free-function spelling of the streaming update.
inline ActivationStats observe(ActivationStats stats, const Tensor &batch) {
    stats.observe(batch);
    return stats;
}

/// Range-selection rule for turning stats into a QuantSpec.
struct CalibrationMethod {
    enum class Kind { MinMax, Ema, Percentile, Omse };

    Kind kind = Kind::MinMax;
    double ema_decay = 0.9;   // weight of the newest batch maximum
    double percentile_p = 1.0;
    int grid_points = 128;

    static CalibrationMethod minmax() { return {}; }
    static CalibrationMethod ema(double decay) {
        if (!(decay > 0.0 && decay < 1.0))
            throw DomainError("EMA decay must be in (0,1)");
        CalibrationMethod m;
        m.kind = Kind::Ema;
        m.ema_decay = decay;
        return m;
    }
    static CalibrationMethod percentile(double p) {
        if (!(p >= 0.0 && p <= 1.0))
            throw DomainError("percentile fraction must be in [0,1]");
        CalibrationMethod m;
        m.kind = Kind::Percentile;
        m.percentile_p = p;
        return m;
    }
    static CalibrationMethod omse(int grid_points = 128) {
        if (grid_points < 2)
            throw DomainError("OMSE grid needs at least 2 points");
        CalibrationMethod m;
        m.kind = Kind::Omse;
        m.grid_points = grid_points;
        return m;
    }

    std::string name() const {
        switch (kind) {
        case Kind::MinMax: return "minmax";
        case Kind::Ema: return "ema";
        case Kind::Percentile: return "percentile";
        case Kind::Omse: return "omse";
        }
        return "?";
    }

    static CalibrationMethod parse(const std::string &name, double ema_decay = 0.9,
                                   double percentile_p = 0.99999, int grid_points = 128) {
        if (name == "minmax")
            return minmax();
        if (name == "ema")
            return ema(ema_decay);
        if (name == "percentile")
            return percentile(percentile_p);
        if (name == "omse")
            return omse(grid_points);
        throw ConfigError("unknown calibration method '" + name + "'");
    }
};

/// Quantization MSE for range candidate r, estimated from the |value|
/// histogram. Wide bins use the uniform-density rounding error scale^2/12;
/// bins comparable to one quantization step are sampled, and the clipped
/// part integrates (u - r)^2 exactly under the in-bin uniform assumption.
inline double histogram_quant_mse(const ActivationStats &stats, double r, int bits) {
    const QuantSpec spec = scale_from_range(r, bits);
    const double scale = spec.scale;
    const double range = spec.range();
    const auto &hist = stats.histogram();
    const double width = stats.max_abs() / static_cast<double>(ActivationStats::kBins);
    if (width <= 0.0)
        return 0.0;
    double err = 0.0;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        const double c = hist[i];
        if (c <= 0.0)
            continue;
        const double lo = static_cast<double>(i) * width;
        const double hi = lo + width;
        if (lo >= range) {
            // fully clipped bin: mean of (u - range)^2 over [lo, hi]
            const double a = lo - range, b = hi - range;
            err += c * (b * b * b - a * a * a) / (3.0 * (b - a));
            continue;
        }
        const double in_hi = std::min(hi, range);
        const double in_frac = (in_hi - lo) / width;
        if (in_hi - lo > 2.0 * scale) {
            err += c * in_frac * scale * scale / 12.0;
        } else {
            constexpr int kSamples = 8;
            double acc = 0.0;
            for (int s = 0; s < kSamples; ++s) {
                const double u = lo + (in_hi - lo) * (s + 0.5) / kSamples;
                const double d = u - fake_quant(u, spec);
                acc += d * d;
            }
            err += c * in_frac * acc / kSamples;
        }
        if (hi > range) {
            const double b = hi - range;
            err += c * ((hi - range) / width) * b * b / 3.0;
        }
    }
    return err / static_cast<double>(stats.sample_count());
}

/// Geometric candidate grid used by OMSE calibration, spanning
/// [median |values|, max |values|] inclusive.
inline std::vector<double> omse_candidate_grid(const ActivationStats &stats, int grid_points) {
    const double hi = stats.max_abs();
    double lo = stats.percentile(0.5);
    if (!(lo > 0.0))
        lo = hi / 1024.0;
    lo = std::min(lo, hi);
    std::vector<double> grid(grid_points);
    if (grid_points == 1 || lo == hi) {
        grid.assign(static_cast<std::size_t>(grid_points), hi);
        return grid;
    }
    const double ratio = hi / lo;
    for (int i = 0; i < grid_points; ++i)
        grid[i] = lo * std::pow(ratio, static_cast<double>(i) / (grid_points - 1));
    grid.back() = hi;
    return grid;
}

/// Pick the quantization range per the method, then scale_from_range.
inline QuantSpec calibrate(const ActivationStats &stats, const CalibrationMethod &method, int bits) {
    if (stats.sample_count() == 0)
        throw DegenerateError("calibrate: no observations for site '" + stats.site_id() + "'");
    if (!(stats.max_abs() > 0.0))
        throw DegenerateError("calibrate: zero range at site '" + stats.site_id() + "'");
    double r = 0.0;
    switch (method.kind) {
    case CalibrationMethod::Kind::MinMax:
        r = stats.max_abs();
        break;
    case CalibrationMethod::Kind::Ema: {
        const auto &maxima = stats.batch_maxima();
        r = maxima.front();
        for (std::size_t i = 1; i < maxima.size(); ++i)
            r = (1.0 - method.ema_decay) * r + method.ema_decay * maxima[i];
        break;
    }
    case CalibrationMethod::Kind::Percentile:
        r = stats.percentile(method.percentile_p);
        break;
    case CalibrationMethod::Kind::Omse: {
        const auto grid = omse_candidate_grid(stats, method.grid_points);
        double best = grid.front();
        double best_err = histogram_quant_mse(stats, grid.front(), bits);
        for (std::size_t i = 1; i < grid.size(); ++i) {
            const double err = histogram_quant_mse(stats, grid[i], bits);
            if (err < best_err) {
                best_err = err;
                best = grid[i];
            }
        }
        r = best;
        break;
    }
    }
    if (!(r > 0.0))
        throw DegenerateError("calibrate: selected range is not positive at site '" + stats.site_id() +
                              "'");
    return scale_from_range(r, bits);
}

/// One row of the calibration report emitted by the CLI.
struct CalibrationEntry {
    std::string site_id;
    std::string method;
    double range = 0.0;
    double scale = 0.0;
    int bits = 8;
};

inline void to_json(nlohmann::json &j, const CalibrationEntry &e) {
    j = nlohmann::json{{"site_id", e.site_id},
                       {"method", e.method},
                       {"range", e.range},
                       {"scale", e.scale},
                       {"bits", e.bits}};
}

} // namespace qtlab
