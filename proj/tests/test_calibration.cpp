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
#include <catch2/catch_amalgamated.hpp>

#include "qtlab/calibration.hpp"

#include "test_support.hpp"

using namespace qtlab;
using qtest::Rng;

namespace {

/// Heavy-tailed sample: gaussian core plus a fraction of huge outliers.
Tensor heavy_tailed(std::size_t n, Rng &rng, double outlier_frac = 0.01, double outlier_scale = 50.0) {
    std::vector<double> data(n);
    for (double &v : data)
        v = rng.gaussian();
    const auto n_out = static_cast<std::size_t>(outlier_frac * static_cast<double>(n)) + 1;
    for (std::size_t i = 0; i < n_out; ++i)
        data[rng.below(n)] = rng.gaussian(0.0, outlier_scale);
    return Tensor({n}, std::move(data));
}

/// Exhaustive oracle: true mean squared quantization error over the raw
/// samples, minimized over the same candidate grid.
double raw_mse(const Tensor &x, double r, int bits) {
    const QuantSpec spec = scale_from_range(r, bits);
    double err = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = x[i] - fake_quant(x[i], spec);
        err += d * d;
    }
    return err / static_cast<double>(x.numel());
}

} // namespace

TEST_CASE("observe examples") {
    ActivationStats stats("s");
    stats.observe(Tensor({2}, {1.0, -2.0}));
    CHECK(stats.max_abs() == 2.0);
    CHECK(stats.sample_count() == 2);

    // observing the same batch twice doubles the count, keeps max_abs
    stats.observe(Tensor({2}, {1.0, -2.0}));
    CHECK(stats.max_abs() == 2.0);
    CHECK(stats.sample_count() == 4);

    CHECK_THROWS_AS(stats.observe(Tensor()), DataError);

    // free-function spelling
    const ActivationStats fresh = observe(ActivationStats("t"), Tensor({3}, {3.0, 0.0, -1.0}));
    CHECK(fresh.max_abs() == 3.0);
    CHECK(fresh.sample_count() == 3);
}

TEST_CASE("histogram total matches the sample count through rescales") {
    Rng rng(11);
    ActivationStats stats("s");
    std::size_t expected = 0;
    for (int b = 0; b < 12; ++b) {
        // growing maxima force histogram redistribution every batch
        const Tensor batch = Tensor::gaussian({257}, rng, std::pow(2.0, b));
        stats.observe(batch);
        expected += batch.numel();
        double total = 0.0;
        for (double c : stats.histogram())
            total += c;
        CHECK(std::abs(total - static_cast<double>(expected)) < 1e-6 * static_cast<double>(expected));
        CHECK(stats.max_abs() >= stats.median_abs());
    }
    CHECK(stats.sample_count() == expected);
}

TEST_CASE("histogram median tracks the exact sort median") {
    Rng rng(12);
    ActivationStats stats("s");
    std::vector<double> pool;
    for (int b = 0; b < 10; ++b) {
        const Tensor batch = Tensor::gaussian({10000}, rng, 3.0);
        stats.observe(batch);
        for (std::size_t i = 0; i < batch.numel(); ++i)
            pool.push_back(batch[i]);
    }
    const Tensor all({pool.size()}, pool);
    CHECK(qtest::rel_err(stats.median_abs(), median_abs(all)) < 1e-2);
    CHECK(qtest::rel_err(stats.stddev(), stddev(all)) < 1e-9);
}

TEST_CASE("percentile is monotone in p and exact at the top") {
    Rng rng(13);
    ActivationStats stats("s");
    stats.observe(Tensor::gaussian({50000}, rng));
    double prev = 0.0;
    for (double p : {0.5, 0.9, 0.99, 0.999, 0.9999, 1.0}) {
        const double r = stats.percentile(p);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK(stats.percentile(1.0) == stats.max_abs());
    CHECK_THROWS_AS(stats.percentile(1.5), DomainError);
}

TEST_CASE("merge is commutative on max_abs and histogram counts") {
    Rng rng(14);
    ActivationStats a("s"), b("s");
    a.observe(Tensor::gaussian({1000}, rng, 1.0));
    b.observe(Tensor::gaussian({3000}, rng, 5.0));
    const ActivationStats ab = ActivationStats::merge(a, b);
    const ActivationStats ba = ActivationStats::merge(b, a);
    CHECK(ab.max_abs() == ba.max_abs());
    CHECK(ab.sample_count() == ba.sample_count());
    for (std::size_t i = 0; i < ActivationStats::kBins; ++i)
        CHECK(ab.histogram()[i] == ba.histogram()[i]);
    CHECK(qtest::rel_err(ab.stddev(), ba.stddev()) < 1e-12);
}

TEST_CASE("calibrate: min-max on a constant tensor") {
    ActivationStats stats("s");
    stats.observe(Tensor::full({10}, 5.0));
    const QuantSpec spec = calibrate(stats, CalibrationMethod::minmax(), 8);
    CHECK(spec.scale == 5.0 / 127.0);
}

TEST_CASE("calibrate: Percentile(1.0) is exactly MinMax") {
    Rng rng(15);
    ActivationStats stats("s");
    for (int b = 0; b < 5; ++b)
        stats.observe(Tensor::gaussian({777}, rng, 2.0));
    const QuantSpec mm = calibrate(stats, CalibrationMethod::minmax(), 8);
    const QuantSpec pct = calibrate(stats, CalibrationMethod::percentile(1.0), 8);
    CHECK(mm.scale == pct.scale);
    CHECK(mm.bits == pct.bits);
}

TEST_CASE("calibrate: EMA matches the closed-form recursion") {
    Rng rng(16);
    ActivationStats stats("s");
    for (int b = 0; b < 10; ++b)
        stats.observe(Tensor::gaussian({100}, rng, 1.0 + b));
    for (double decay : {0.999, 0.001, 0.9}) {
        const auto &maxima = stats.batch_maxima();
        double expected = maxima.front();
        for (std::size_t i = 1; i < maxima.size(); ++i)
            expected = (1.0 - decay) * expected + decay * maxima[i];
        const QuantSpec spec = calibrate(stats, CalibrationMethod::ema(decay), 8);
        CHECK(qtest::rel_err(spec.scale, expected / 127.0) < 1e-12);
    }
    // decay -> 1 approaches the last batch's max, decay -> 0 the first's
    const QuantSpec hi = calibrate(stats, CalibrationMethod::ema(0.999), 8);
    CHECK(qtest::rel_err(hi.scale * 127.0, stats.batch_maxima().back()) < 0.05);
    const QuantSpec lo = calibrate(stats, CalibrationMethod::ema(0.001), 8);
    CHECK(qtest::rel_err(lo.scale * 127.0, stats.batch_maxima().front()) < 0.05);
}

TEST_CASE("calibrate: OMSE clips outliers and beats min-max on histogram MSE") {
    Rng rng(17);
    ActivationStats stats("s");
    stats.observe(heavy_tailed(100000, rng));
    const QuantSpec omse = calibrate(stats, CalibrationMethod::omse(), 8);
    const QuantSpec mm = calibrate(stats, CalibrationMethod::minmax(), 8);
    CHECK(omse.range() < mm.range());
    CHECK(histogram_quant_mse(stats, omse.range(), 8) <= histogram_quant_mse(stats, mm.range(), 8));
}

TEST_CASE("calibrate: OMSE range lands within one grid cell of the raw oracle") {
    Rng rng(18);
    for (int rep = 0; rep < 10; ++rep) {
        const Tensor x = heavy_tailed(20000, rng, 0.01, rng.uniform(20.0, 80.0));
        ActivationStats stats("s");
        stats.observe(x);
        const CalibrationMethod method = CalibrationMethod::omse();
        const QuantSpec spec = calibrate(stats, method, 8);

        const auto grid = omse_candidate_grid(stats, method.grid_points);
        std::size_t best = 0;
        for (std::size_t i = 1; i < grid.size(); ++i)
            if (raw_mse(x, grid[i], 8) < raw_mse(x, grid[best], 8))
                best = i;
        std::size_t got = 0;
        for (std::size_t i = 0; i < grid.size(); ++i)
            if (std::abs(grid[i] - spec.range()) < 1e-12 * grid[i])
                got = i;
        INFO("oracle index " << best << " omse index " << got);
        CHECK(std::abs(static_cast<long>(best) - static_cast<long>(got)) <= 1);
    }
}

TEST_CASE("calibrate rejects degenerate stats and validates parameters") {
    ActivationStats empty("s");
    CHECK_THROWS_AS(calibrate(empty, CalibrationMethod::minmax(), 8), DegenerateError);
    ActivationStats zero("s");
    zero.observe(Tensor::zeros({10}));
    CHECK_THROWS_AS(calibrate(zero, CalibrationMethod::minmax(), 8), DegenerateError);

    CHECK_THROWS_AS(CalibrationMethod::ema(1.5), DomainError);
    CHECK_THROWS_AS(CalibrationMethod::percentile(-0.2), DomainError);
    CHECK_THROWS_AS(CalibrationMethod::omse(1), DomainError);
    CHECK_THROWS_AS(CalibrationMethod::parse("magic"), ConfigError);
    CHECK(CalibrationMethod::parse("percentile", 0.9, 0.99999).percentile_p == 0.99999);
}

TEST_CASE("calibration is deterministic for identical observation order") {
    Rng rng1(19), rng2(19);
    ActivationStats a("s"), b("s");
    for (int i = 0; i < 6; ++i) {
        a.observe(Tensor::gaussian({512}, rng1, 2.0));
        b.observe(Tensor::gaussian({512}, rng2, 2.0));
    }
    for (const auto &method :
         {CalibrationMethod::minmax(), CalibrationMethod::ema(0.9), CalibrationMethod::percentile(0.999),
          CalibrationMethod::omse()}) {
        CHECK(calibrate(a, method, 7).scale == calibrate(b, method, 7).scale);
    }
}
