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
#include <cstddef>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qtlab/errors.hpp"
#include "qtlab/rng.hpp"

namespace qtlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape)
        n *= extent;
    return n;
}

inline std::string shape_to_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major f64 tensor, the universal value carrier. Plain value
/// semantics: copy is deep, moves are cheap, no views. The optional grad
/// buffer always matches the data shape.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_to_string(shape_));
        validate_extents(shape_);
        check_finite();
    }

    static Tensor zeros(Shape shape) {
        validate_extents(shape);
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_.assign(shape_numel(t.shape_), 0.0);
        return t;
    }

    static Tensor full(Shape shape, double value) {
        validate_extents(shape);
        if (!std::isfinite(value))
            throw DataError("tensor contains a non-finite value");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_.assign(shape_numel(t.shape_), value);
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor gaussian(Shape shape, Rng &rng, double stddev = 1.0, double mean = 0.0) {
        std::size_t n = shape_numel(shape);
        std::vector<double> data(n);
        for (double &v : data)
            v = rng.gaussian(mean, stddev);
        return Tensor(std::move(shape), std::move(data));
    }

    const Shape &shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1; }

    double *data() { return data_.data(); }
    const double *data() const { return data_.data(); }
    std::vector<double> &values() { return data_; }
    const std::vector<double> &values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double &operator[](std::size_t i) { return data_[i]; }

    /// 2-d accessors; rows() / cols() require ndim == 2.
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.at(1); }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double &at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    bool has_grad() const { return grad_.has_value(); }
    std::vector<double> &grad() {
        if (!grad_)
            grad_.emplace(data_.size(), 0.0);
        return *grad_;
    }
    const std::vector<double> &grad() const {
        if (!grad_)
            throw StateError("tensor has no gradient buffer");
        return *grad_;
    }
    void set_grad(std::vector<double> g) {
        if (g.size() != data_.size())
            throw DimensionError("gradient length does not match tensor");
        grad_ = std::move(g);
    }
    void zero_grad() {
        if (grad_)
            std::fill(grad_->begin(), grad_->end(), 0.0);
    }
    void drop_grad() { grad_.reset(); }

    /// Interpret the same storage under a different shape (row-major, no copy).
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size())
            throw DimensionError("reshape to " + shape_to_string(shape) + " changes element count");
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    void check_finite() const {
        for (double v : data_)
            if (!std::isfinite(v))
                throw DataError("tensor contains a non-finite value");
    }

    /// Debug-mode validation hook for op outputs.
    void debug_check_finite() const {
#ifndef NDEBUG
        check_finite();
#endif
    }

private:
    static void validate_extents(const Shape &shape) {
        for (std::size_t extent : shape)
            if (extent == 0)
                throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
    }

    Shape shape_;
    std::vector<double> data_;
    std::optional<std::vector<double>> grad_;
};

// ---------------------------------------------------------------------------
// Order statistics. These definitions are shared by the loss, calibration and
// analysis code paths, so they live here and everything else defers to them.
// ---------------------------------------------------------------------------

/// max over |data|.
inline double max_abs(const Tensor &t) {
    if (t.numel() == 0)
        throw DomainError("max_abs of empty tensor");
    double m = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i)
        m = std::max(m, std::abs(t[i]));
    return m;
}

/// Median of |data|; even length takes the mean of the two central order
/// statistics.
inline double median_abs(const Tensor &t) {
    if (t.numel() == 0)
        throw DomainError("median_abs of empty tensor");
    std::vector<double> mags(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i)
        mags[i] = std::abs(t[i]);
    const std::size_t n = mags.size();
    const std::size_t hi = n / 2;
    std::nth_element(mags.begin(), mags.begin() + hi, mags.end());
    double upper = mags[hi];
    if (n % 2 == 1)
        return upper;
    double lower = *std::max_element(mags.begin(), mags.begin() + hi);
    return 0.5 * (lower + upper);
}

/// Population standard deviation (divide by N) of the signed values.
inline double stddev(const Tensor &t) {
    if (t.numel() < 2)
        throw DomainError("stddev requires at least 2 elements");
    const std::size_t n = t.numel();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        mean += t[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = t[i] - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(n));
}

/// p-th quantile of |data| by linear interpolation between closest ranks.
/// p = 0.5 agrees with median_abs and p = 1 with max_abs.
inline double percentile(const Tensor &t, double p) {
    if (t.numel() == 0)
        throw DomainError("percentile of empty tensor");
    if (!(p >= 0.0 && p <= 1.0))
        throw DomainError("percentile fraction must be in [0,1]");
    std::vector<double> mags(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i)
        mags[i] = std::abs(t[i]);
    std::sort(mags.begin(), mags.end());
    const double rank = p * static_cast<double>(mags.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, mags.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return mags[lo] + frac * (mags[hi] - mags[lo]);
}

// ---------------------------------------------------------------------------
// Dense kernels. The tape ops and the plain inference path both call these,
// so full-precision values agree bit-for-bit between the two.
// ---------------------------------------------------------------------------

/// c[m x n] += a[m x k] * b[k x n]. Accumulates, callers zero c first.
inline void matmul_nn_acc(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
                          std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *arow = a + i * k;
        double *crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0)
                continue;
            const double *brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

/// c[m x n] += a[m x k] * b[n x k]^T.
inline void matmul_nt_acc(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
                          std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *arow = a + i * k;
        double *crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double *brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

/// c[k x n] += a[m x k]^T * b[m x n].
inline void matmul_tn_acc(const double *a, const double *b, double *c, std::size_t m, std::size_t k,
                          std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double *arow = a + i * k;
        const double *brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0)
                continue;
            double *crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j)
                crow[j] += av * brow[j];
        }
    }
}

/// Standard 2-d product with shape checking.
inline Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul requires 2-d tensors");
    if (a.cols() != b.rows())
        throw DimensionError("matmul inner dimensions disagree: " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    Tensor c = Tensor::zeros({a.rows(), b.cols()});
    matmul_nn_acc(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    c.debug_check_finite();
    return c;
}

} // namespace qtlab
