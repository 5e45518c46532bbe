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
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

#include "qtlab/errors.hpp"
#include "qtlab/tensor.hpp"

namespace qtlab {

/// Reverse-mode tape. Nodes are appended strictly after their parents, so
/// insertion order is a topological order and backward() is a single reverse
/// sweep that touches every node at most once.
///
/// A Tape is confined to one execution context; it is not synchronized.
class Tape {
public:
    using NodeId = std::uint32_t;

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;
    Tape(Tape &&) = default;
    Tape &operator=(Tape &&) = default;

    std::size_t size() const { return nodes_.size(); }

    const Tensor &value(NodeId id) const { return nodes_.at(id).value; }

    /// Gradient of the last backward() loss w.r.t. node `id`. Nodes the loss
    /// never reached report zeros.
    const std::vector<double> &grad(NodeId id) {
        if (!ran_backward_)
            throw StateError("grad() before backward()");
        auto &g = grads_.at(id);
        if (g.empty())
            g.assign(nodes_[id].value.numel(), 0.0);
        return g;
    }

    NodeId leaf(Tensor value) { return push(std::move(value), {}, nullptr); }

    // -- arithmetic ---------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor &ta = value(a), &tb = value(b);
        Tensor out = qtlab::matmul(ta, tb);
        const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
        return push(std::move(out), {a, b}, [a, b, m, k, n](Tape &t, NodeId id) {
            const double *g = t.grads_[id].data();
            matmul_nt_acc(g, t.value(b).data(), t.grad_buf(a), m, n, k);
            matmul_tn_acc(t.value(a).data(), g, t.grad_buf(b), m, k, n);
        });
    }

    /// x[r x in] * w[in x out] + bias[out] broadcast over rows.
    NodeId linear(NodeId x, NodeId w, NodeId bias) {
        const Tensor &tx = value(x), &tw = value(w), &tb = value(bias);
        if (tx.ndim() != 2 || tw.ndim() != 2 || tx.cols() != tw.rows())
            throw DimensionError("linear: incompatible input/weight shapes");
        if (tb.numel() != tw.cols())
            throw DimensionError("linear: bias length does not match output width");
        const std::size_t m = tx.rows(), k = tx.cols(), n = tw.cols();
        Tensor out = Tensor::zeros({m, n});
        matmul_nn_acc(tx.data(), tw.data(), out.data(), m, k, n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] += tb[j];
        return push(std::move(out), {x, w, bias}, [x, w, bias, m, k, n](Tape &t, NodeId id) {
            const double *g = t.grads_[id].data();
            matmul_nt_acc(g, t.value(w).data(), t.grad_buf(x), m, n, k);
            matmul_tn_acc(t.value(x).data(), g, t.grad_buf(w), m, k, n);
            double *db = t.grad_buf(bias);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    db[j] += g[i * n + j];
        });
    }

    /// ca * a + cb * b with constant coefficients; covers residual adds
    /// (1, 1) and the blended training objective (1 - alpha, alpha).
    NodeId affine(NodeId a, NodeId b, double ca, double cb) {
        const Tensor &ta = value(a), &tb = value(b);
        if (ta.shape() != tb.shape())
            throw DimensionError("affine: operand shapes differ");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = ca * ta[i] + cb * tb[i];
        return push(std::move(out), {a, b}, [a, b, ca, cb](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            double *da = t.grad_buf(a), *db = t.grad_buf(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += ca * g[i];
                db[i] += cb * g[i];
            }
        });
    }

    NodeId add(NodeId a, NodeId b) { return affine(a, b, 1.0, 1.0); }

    NodeId sub(NodeId a, NodeId b) { return affine(a, b, 1.0, -1.0); }

    NodeId scale(NodeId x, double c) {
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] *= c;
        return push(std::move(out), {x}, [x, c](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < g.size(); ++i)
                dx[i] += c * g[i];
        });
    }

    /// Elementwise quotient; in practice used on scalar nodes for the
    /// (max - median) / sigma terms.
    NodeId div(NodeId a, NodeId b) {
        const Tensor &ta = value(a), &tb = value(b);
        if (ta.shape() != tb.shape())
            throw DimensionError("div: operand shapes differ");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = ta[i] / tb[i];
        return push(std::move(out), {a, b}, [a, b](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            const Tensor &va = t.value(a), &vb = t.value(b);
            double *da = t.grad_buf(a), *db = t.grad_buf(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] / vb[i];
                db[i] -= g[i] * va[i] / (vb[i] * vb[i]);
            }
        });
    }

    /// Sum of same-shaped nodes; one node with many parents keeps the Eq.2
    /// accumulation over sites and samples flat on the tape.
    NodeId add_many(const std::vector<NodeId> &terms) {
        if (terms.empty())
            throw DomainError("add_many of empty list");
        Tensor out = value(terms[0]);
        for (std::size_t t = 1; t < terms.size(); ++t) {
            const Tensor &v = value(terms[t]);
            if (v.shape() != out.shape())
                throw DimensionError("add_many: operand shapes differ");
            for (std::size_t i = 0; i < out.numel(); ++i)
                out[i] += v[i];
        }
        return push(std::move(out), terms, [terms](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            for (NodeId p : terms) {
                double *dp = t.grad_buf(p);
                for (std::size_t i = 0; i < g.size(); ++i)
                    dp[i] += g[i];
            }
        });
    }

    NodeId sum(NodeId x) {
        const Tensor &tx = value(x);
        double s = 0.0;
        for (std::size_t i = 0; i < tx.numel(); ++i)
            s += tx[i];
        return push(Tensor::scalar(s), {x}, [x](Tape &t, NodeId id) {
            const double g = t.grads_[id][0];
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < t.value(x).numel(); ++i)
                dx[i] += g;
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor &ta = value(a), &tb = value(b);
        if (ta.shape() != tb.shape())
            throw DimensionError("mul: operand shapes differ");
        Tensor out = ta;
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = ta[i] * tb[i];
        return push(std::move(out), {a, b}, [a, b](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            const Tensor &va = t.value(a), &vb = t.value(b);
            double *da = t.grad_buf(a), *db = t.grad_buf(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] * vb[i];
                db[i] += g[i] * va[i];
            }
        });
    }

    /// Elementwise map treated as a constant by backward (no gradient flows
    /// through). Inference-only plumbing: the quantized evaluation path uses
    /// it to insert fake-quant nodes into the dataflow.
    NodeId transform(NodeId x, const std::function<double(double)> &fn) {
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.numel(); ++i)
            out[i] = fn(out[i]);
        return push(std::move(out), {x}, nullptr);
    }

    // -- nonlinearities -----------------------------------------------------

    /// Exact gaussian-error-linear unit x * Phi(x).
    NodeId gelu(NodeId x) {
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        const Tensor &tx = value(x);
        Tensor out = tx;
        for (std::size_t i = 0; i < out.numel(); ++i) {
            const double v = tx[i];
            out[i] = v * 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        }
        return push(std::move(out), {x}, [x](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            const Tensor &vx = t.value(x);
            double *dx = t.grad_buf(x);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = vx[i];
                const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                dx[i] += g[i] * (phi + v * pdf);
            }
        });
    }

    /// Row-wise softmax with max-subtraction.
    NodeId softmax_rows(NodeId x) {
        const Tensor &tx = value(x);
        if (tx.ndim() != 2)
            throw DimensionError("softmax_rows requires a 2-d tensor");
        const std::size_t m = tx.rows(), n = tx.cols();
        Tensor out = tx;
        for (std::size_t i = 0; i < m; ++i) {
            double mx = tx[i * n];
            for (std::size_t j = 1; j < n; ++j)
                mx = std::max(mx, tx[i * n + j]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                out[i * n + j] = std::exp(tx[i * n + j] - mx);
                z += out[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j)
                out[i * n + j] /= z;
        }
        return push(std::move(out), {x}, [x, m, n](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            const Tensor &p = t.value(id);
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    dot += g[i * n + j] * p[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    dx[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
            }
        });
    }

    /// Row-wise layer normalization with affine parameters, eps inside the
    /// square root, population variance per row.
    NodeId layernorm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5) {
        const Tensor &tx = value(x), &tg = value(gamma), &tb = value(beta);
        if (tx.ndim() != 2)
            throw DimensionError("layernorm requires a 2-d tensor");
        const std::size_t m = tx.rows(), n = tx.cols();
        if (tg.numel() != n || tb.numel() != n)
            throw DimensionError("layernorm: affine parameter length mismatch");
        Tensor out = Tensor::zeros({m, n});
        std::vector<double> inv_std(m), xhat(m * n);
        for (std::size_t i = 0; i < m; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                mean += tx[i * n + j];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double d = tx[i * n + j] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            inv_std[i] = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < n; ++j) {
                xhat[i * n + j] = (tx[i * n + j] - mean) * inv_std[i];
                out[i * n + j] = tg[j] * xhat[i * n + j] + tb[j];
            }
        }
        return push(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, m, n, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)](Tape &t, NodeId id) {
                        const auto &g = t.grads_[id];
                        const Tensor &tg = t.value(gamma);
                        double *dx = t.grad_buf(x);
                        double *dgamma = t.grad_buf(gamma);
                        double *dbeta = t.grad_buf(beta);
                        for (std::size_t i = 0; i < m; ++i) {
                            double mean_gy = 0.0, mean_gyx = 0.0;
                            for (std::size_t j = 0; j < n; ++j) {
                                const double gy = tg[j] * g[i * n + j];
                                mean_gy += gy;
                                mean_gyx += gy * xhat[i * n + j];
                            }
                            mean_gy /= static_cast<double>(n);
                            mean_gyx /= static_cast<double>(n);
                            for (std::size_t j = 0; j < n; ++j) {
                                const double gy = tg[j] * g[i * n + j];
                                dx[i * n + j] += inv_std[i] * (gy - mean_gy - xhat[i * n + j] * mean_gyx);
                                dgamma[j] += g[i * n + j] * xhat[i * n + j];
                                dbeta[j] += g[i * n + j];
                            }
                        }
                    });
    }

    // -- shape plumbing -----------------------------------------------------

    NodeId slice_rows(NodeId x, std::size_t row0, std::size_t nrows) {
        const Tensor &tx = value(x);
        if (tx.ndim() != 2 || row0 + nrows > tx.rows())
            throw DimensionError("slice_rows out of bounds");
        const std::size_t n = tx.cols();
        Tensor out = Tensor::zeros({nrows, n});
        std::copy(tx.data() + row0 * n, tx.data() + (row0 + nrows) * n, out.data());
        return push(std::move(out), {x}, [x, row0, nrows, n](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < nrows * n; ++i)
                dx[row0 * n + i] += g[i];
        });
    }

    NodeId slice_cols(NodeId x, std::size_t col0, std::size_t ncols) {
        const Tensor &tx = value(x);
        if (tx.ndim() != 2 || col0 + ncols > tx.cols())
            throw DimensionError("slice_cols out of bounds");
        const std::size_t m = tx.rows(), n = tx.cols();
        Tensor out = Tensor::zeros({m, ncols});
        for (std::size_t i = 0; i < m; ++i)
            std::copy(tx.data() + i * n + col0, tx.data() + i * n + col0 + ncols, out.data() + i * ncols);
        return push(std::move(out), {x}, [x, col0, ncols, m, n](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < ncols; ++j)
                    dx[i * n + col0 + j] += g[i * ncols + j];
        });
    }

    NodeId concat_cols(const std::vector<NodeId> &parts) {
        if (parts.empty())
            throw DomainError("concat_cols of empty list");
        const std::size_t m = value(parts[0]).rows();
        std::size_t total = 0;
        for (NodeId p : parts) {
            const Tensor &tp = value(p);
            if (tp.ndim() != 2 || tp.rows() != m)
                throw DimensionError("concat_cols: row counts differ");
            total += tp.cols();
        }
        Tensor out = Tensor::zeros({m, total});
        std::size_t off = 0;
        for (NodeId p : parts) {
            const Tensor &tp = value(p);
            for (std::size_t i = 0; i < m; ++i)
                std::copy(tp.data() + i * tp.cols(), tp.data() + (i + 1) * tp.cols(),
                          out.data() + i * total + off);
            off += tp.cols();
        }
        return push(std::move(out), parts, [parts, m, total](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            std::size_t off = 0;
            for (NodeId p : parts) {
                const std::size_t w = t.value(p).cols();
                double *dp = t.grad_buf(p);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        dp[i * w + j] += g[i * total + off + j];
                off += w;
            }
        });
    }

    /// Mean over each block of `block` consecutive rows: [b*block x n] ->
    /// [b x n]. Used for sequence mean-pooling.
    NodeId mean_rows_blocked(NodeId x, std::size_t block) {
        const Tensor &tx = value(x);
        if (tx.ndim() != 2 || block == 0 || tx.rows() % block != 0)
            throw DimensionError("mean_rows_blocked: rows not divisible by block");
        const std::size_t b = tx.rows() / block, n = tx.cols();
        Tensor out = Tensor::zeros({b, n});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t r = 0; r < block; ++r)
                for (std::size_t j = 0; j < n; ++j)
                    out[i * n + j] += tx[(i * block + r) * n + j] / static_cast<double>(block);
        return push(std::move(out), {x}, [x, b, block, n](Tape &t, NodeId id) {
            const auto &g = t.grads_[id];
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t r = 0; r < block; ++r)
                    for (std::size_t j = 0; j < n; ++j)
                        dx[(i * block + r) * n + j] += g[i * n + j] / static_cast<double>(block);
        });
    }

    // -- batched attention kernels -------------------------------------------
    // q, k, v carry `batch` independent blocks of `seq` rows stacked on the
    // row axis; scores/probabilities are [batch*seq x seq].

    NodeId attention_scores(NodeId q, NodeId k, std::size_t batch, std::size_t seq) {
        const Tensor &tq = value(q), &tk = value(k);
        if (tq.shape() != tk.shape() || tq.rows() != batch * seq)
            throw DimensionError("attention_scores: bad q/k layout");
        const std::size_t dh = tq.cols();
        Tensor out = Tensor::zeros({batch * seq, seq});
        for (std::size_t b = 0; b < batch; ++b)
            matmul_nt_acc(tq.data() + b * seq * dh, tk.data() + b * seq * dh, out.data() + b * seq * seq,
                          seq, dh, seq);
        return push(std::move(out), {q, k}, [q, k, batch, seq, dh](Tape &t, NodeId id) {
            const double *g = t.grads_[id].data();
            const double *vq = t.value(q).data(), *vk = t.value(k).data();
            double *dq = t.grad_buf(q), *dk = t.grad_buf(k);
            for (std::size_t b = 0; b < batch; ++b) {
                matmul_nn_acc(g + b * seq * seq, vk + b * seq * dh, dq + b * seq * dh, seq, seq, dh);
                matmul_tn_acc(g + b * seq * seq, vq + b * seq * dh, dk + b * seq * dh, seq, seq, dh);
            }
        });
    }

    NodeId attention_apply(NodeId p, NodeId v, std::size_t batch, std::size_t seq) {
        const Tensor &tp = value(p), &tv = value(v);
        if (tp.rows() != batch * seq || tp.cols() != seq || tv.rows() != batch * seq)
            throw DimensionError("attention_apply: bad p/v layout");
        const std::size_t dh = tv.cols();
        Tensor out = Tensor::zeros({batch * seq, dh});
        for (std::size_t b = 0; b < batch; ++b)
            matmul_nn_acc(tp.data() + b * seq * seq, tv.data() + b * seq * dh, out.data() + b * seq * dh,
                          seq, seq, dh);
        return push(std::move(out), {p, v}, [p, v, batch, seq, dh](Tape &t, NodeId id) {
            const double *g = t.grads_[id].data();
            const double *vp = t.value(p).data(), *vv = t.value(v).data();
            double *dp = t.grad_buf(p), *dv = t.grad_buf(v);
            for (std::size_t b = 0; b < batch; ++b) {
                matmul_nt_acc(g + b * seq * dh, vv + b * seq * dh, dp + b * seq * seq, seq, dh, seq);
                matmul_tn_acc(vp + b * seq * seq, g + b * seq * dh, dv + b * seq * dh, seq, seq, dh);
            }
        });
    }

    // -- reductions with order-statistic subgradients -------------------------

    /// Scalar max |x|; subgradient at the first argmax.
    NodeId max_abs(NodeId x) {
        const Tensor &tx = value(x);
        if (tx.numel() == 0)
            throw DomainError("max_abs of empty tensor");
        std::size_t idx = 0;
        double best = std::abs(tx[0]);
        for (std::size_t i = 1; i < tx.numel(); ++i) {
            const double a = std::abs(tx[i]);
            if (a > best) {
                best = a;
                idx = i;
            }
        }
        const double sgn = tx[idx] > 0 ? 1.0 : (tx[idx] < 0 ? -1.0 : 0.0);
        return push(Tensor::scalar(best), {x}, [x, idx, sgn](Tape &t, NodeId id) {
            t.grad_buf(x)[idx] += sgn * t.grads_[id][0];
        });
    }

    /// Scalar median |x|; even lengths average the two central order
    /// statistics and split the subgradient 0.5/0.5 between them.
    NodeId median_abs(NodeId x) {
        const Tensor &tx = value(x);
        const std::size_t n = tx.numel();
        if (n == 0)
            throw DomainError("median_abs of empty tensor");
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&tx](std::size_t a, std::size_t b) {
            return std::abs(tx[a]) < std::abs(tx[b]);
        });
        auto sign_at = [&tx](std::size_t i) {
            return tx[i] > 0 ? 1.0 : (tx[i] < 0 ? -1.0 : 0.0);
        };
        if (n % 2 == 1) {
            const std::size_t idx = order[n / 2];
            const double med = std::abs(tx[idx]);
            const double sgn = sign_at(idx);
            return push(Tensor::scalar(med), {x}, [x, idx, sgn](Tape &t, NodeId id) {
                t.grad_buf(x)[idx] += sgn * t.grads_[id][0];
            });
        }
        const std::size_t i1 = order[n / 2 - 1], i2 = order[n / 2];
        const double med = 0.5 * (std::abs(tx[i1]) + std::abs(tx[i2]));
        const double s1 = sign_at(i1), s2 = sign_at(i2);
        return push(Tensor::scalar(med), {x}, [x, i1, i2, s1, s2](Tape &t, NodeId id) {
            const double g = t.grads_[id][0];
            t.grad_buf(x)[i1] += 0.5 * s1 * g;
            t.grad_buf(x)[i2] += 0.5 * s2 * g;
        });
    }

    /// Scalar population standard deviation of the signed values.
    NodeId stddev(NodeId x) {
        const Tensor &tx = value(x);
        const std::size_t n = tx.numel();
        if (n < 2)
            throw DomainError("stddev requires at least 2 elements");
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mean += tx[i];
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = tx[i] - mean;
            ss += d * d;
        }
        const double sigma = std::sqrt(ss / static_cast<double>(n));
        return push(Tensor::scalar(sigma), {x}, [x, mean, sigma, n](Tape &t, NodeId id) {
            if (sigma == 0.0)
                return; // subgradient 0 at the non-differentiable point
            const double g = t.grads_[id][0];
            const Tensor &vx = t.value(x);
            double *dx = t.grad_buf(x);
            for (std::size_t i = 0; i < n; ++i)
                dx[i] += g * (vx[i] - mean) / (static_cast<double>(n) * sigma);
        });
    }

    /// Mean cross-entropy of softmax(logits) against one-hot labels, fused
    /// through log-sum-exp. labels is a constant, not a tape node.
    NodeId cross_entropy(NodeId logits, const Tensor &labels) {
        const Tensor &tl = value(logits);
        if (tl.ndim() != 2 || labels.shape() != tl.shape())
            throw DimensionError("cross_entropy: logits/labels shape mismatch");
        const std::size_t m = tl.rows(), k = tl.cols();
        std::vector<double> probs(m * k);
        double loss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double onehot_sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double y = labels[i * k + j];
                if (y != 0.0 && y != 1.0)
                    throw DomainError("cross_entropy: labels must be one-hot");
                onehot_sum += y;
            }
            if (onehot_sum != 1.0)
                throw DomainError("cross_entropy: each label row must have exactly one 1");
            double mx = tl[i * k];
            for (std::size_t j = 1; j < k; ++j)
                mx = std::max(mx, tl[i * k + j]);
            double z = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                probs[i * k + j] = std::exp(tl[i * k + j] - mx);
                z += probs[i * k + j];
            }
            const double lse = mx + std::log(z);
            for (std::size_t j = 0; j < k; ++j) {
                probs[i * k + j] /= z;
                if (labels[i * k + j] == 1.0)
                    loss += lse - tl[i * k + j];
            }
        }
        loss /= static_cast<double>(m);
        std::vector<double> target = labels.values();
        return push(Tensor::scalar(loss), {logits},
                    [logits, m, k, probs = std::move(probs), target = std::move(target)](Tape &t, NodeId id) {
                        const double g = t.grads_[id][0] / static_cast<double>(m);
                        double *dl = t.grad_buf(logits);
                        for (std::size_t i = 0; i < m * k; ++i)
                            dl[i] += g * (probs[i] - target[i]);
                    });
    }

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse,
    /// populating gradients for every ancestor of `loss`.
    void backward(NodeId loss) {
        if (ran_backward_)
            throw StateError("backward() may run once per tape");
        if (!value(loss).is_scalar())
            throw DomainError("backward requires a scalar loss");
        grads_.assign(nodes_.size(), {});
        grads_[loss] = {1.0};
        ran_backward_ = true;
        for (std::size_t i = loss + 1; i-- > 0;) {
            if (grads_[i].empty() || !nodes_[i].backprop)
                continue;
            nodes_[i].backprop(*this, static_cast<NodeId>(i));
        }
    }

private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        std::function<void(Tape &, NodeId)> backprop;
    };

    NodeId push(Tensor value, std::vector<NodeId> parents, std::function<void(Tape &, NodeId)> backprop) {
        if (ran_backward_)
            throw StateError("tape is frozen after backward()");
        value.debug_check_finite();
        nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backprop)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    double *grad_buf(NodeId id) {
        auto &g = grads_[id];
        if (g.empty())
            g.assign(nodes_[id].value.numel(), 0.0);
        return g.data();
    }

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    bool ran_backward_ = false;
};

} // namespace qtlab
