#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "crystal/tensor.hpp"

namespace crystal {

namespace detail {

// C += A(m x k) * B(k x n). Inner loops are saxpy over contiguous rows so the
// accumulation order is fixed and the compiler can vectorize them; four rows
// of A are processed together to reuse each loaded row of B.
inline void addmm(double* C, const double* A, const double* B, int m, int k, int n) {
    int i = 0;
    for (; i + 3 < m; i += 4) {
        const double* a0 = A + static_cast<size_t>(i) * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        double* c0 = C + static_cast<size_t>(i) * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        for (int p = 0; p < k; ++p) {
            const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            const double* b = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                const double bv = b[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        const double* a = A + static_cast<size_t>(i) * k;
        double* c = C + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

inline void transpose_into(double* out, const double* in, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out[static_cast<size_t>(j) * rows + i] = in[static_cast<size_t>(i) * cols + j];
}

// Scratch reused by backward closures; avoids churning the allocator on the
// hot path. Single-threaded backward per the concurrency contract.
inline std::vector<double>& transpose_scratch() {
    static thread_local std::vector<double> scratch;
    return scratch;
}

inline bool track_grad(std::initializer_list<const Tensor*> inputs) {
    if (!Graph::recording()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

inline Tensor op_output(Shape shape, bool track) {
    return track ? make_interior(std::move(shape)) : Tensor(std::move(shape));
}

struct AxisSplit {
    int64_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
    AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul requires 2-D tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    if (a.cols() != b.rows())
        throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();

    const bool track = detail::track_grad({&a, &b});
    Tensor out = detail::op_output({m, n}, track);
    detail::addmm(out.data(), a.data(), b.data(), m, k, n);

    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Graph::active()->push(on, [an, bn, on, m, k, n] {
            const double* g = on->grad.data();
            auto& scratch = detail::transpose_scratch();
            if (an->requires_grad) {
                an->ensure_grad();
                scratch.resize(static_cast<size_t>(k) * n);
                detail::transpose_into(scratch.data(), bn->value.data(), k, n);
                detail::addmm(an->grad.data(), g, scratch.data(), m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                scratch.resize(static_cast<size_t>(m) * k);
                detail::transpose_into(scratch.data(), an->value.data(), m, k);
                detail::addmm(bn->grad.data(), scratch.data(), g, k, m, n);
            }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose requires a 2-D tensor");
    const int m = a.rows(), n = a.cols();
    const bool track = detail::track_grad({&a});
    Tensor out = detail::op_output({n, m}, track);
    detail::transpose_into(out.data(), a.data(), m, n);
    if (track) {
        auto an = a.node(), on = out.node();
        Graph::active()->push(on, [an, on, m, n] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            std::vector<double> gt(static_cast<size_t>(m) * n);
            detail::transpose_into(gt.data(), on->grad.data(), n, m);
            for (size_t i = 0; i < gt.size(); ++i) an->grad[i] += gt[i];
        });
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const bool track = detail::track_grad({&a, &b});
    Tensor out = detail::op_output(a.shape(), track);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Graph::active()->push(on, [an, bn, on] {
            for (auto& in : {an, bn}) {
                if (!in->requires_grad) continue;
                in->ensure_grad();
                for (size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("sub shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const bool track = detail::track_grad({&a, &b});
    Tensor out = detail::op_output(a.shape(), track);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Graph::active()->push(on, [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const bool track = detail::track_grad({&a, &b});
    Tensor out = detail::op_output(a.shape(), track);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (track) {
        auto an = a.node(), bn = b.node(), on = out.node();
        Graph::active()->push(on, [an, bn, on] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    const bool track = detail::track_grad({&a});
    Tensor out = detail::op_output(a.shape(), track);
    const int64_t n = a.size();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (track) {
        auto an = a.node(), on = out.node();
        Graph::active()->push(on, [an, on, c] {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
        });
    }
    return out;
}

// x [r x c] + bias [c], broadcast over rows.
inline Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.dim(0) != x.cols())
        throw DimensionError("add_bias_rows expects [r x c] and [c]");
    const int r = x.rows(), c = x.cols();
    const bool track = detail::track_grad({&x, &bias});
    Tensor out = detail::op_output({r, c}, track);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) + bias.at(j);
    if (track) {
        auto xn = x.node(), bn = bias.node(), on = out.node();
        Graph::active()->push(on, [xn, bn, on, r, c] {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) bn->grad[static_cast<size_t>(j)] += on->grad[static_cast<size_t>(i) * c + j];
            }
        });
    }
    return out;
}

inline Tensor gelu(const Tensor& x) {
    static constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
    static constexpr double kCubic = 0.044715;
    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output(x.shape(), track);
    const int64_t n = x.size();
    std::vector<double> tanh_cache;
    if (track) tanh_cache.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        const double t = std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v));
        if (track) tanh_cache[static_cast<size_t>(i)] = t;
        out.data()[i] = 0.5 * v * (1.0 + t);
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on, cache = std::move(tanh_cache)] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) {
                const double v = xn->value[i];
                const double t = cache[i];
                const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
                xn->grad[i] += on->grad[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output({1}, track);
    double s = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) s += x.data()[i];
    out.at(0) = s;
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
        });
    }
    return out;
}

inline Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    return scale(sum(x), inv);
}

// total = sum_i coeff_i * scalar_i
inline Tensor weighted_sum(const std::vector<std::pair<double, Tensor>>& terms) {
    if (terms.empty()) throw ContractViolation("weighted_sum of no terms");
    bool track = false;
    if (Graph::recording())
        for (const auto& [w, t] : terms)
            if (t.requires_grad()) track = true;
    Tensor out = detail::op_output({1}, track);
    double s = 0.0;
    for (const auto& [w, t] : terms) {
        if (t.size() != 1) throw ContractViolation("weighted_sum expects scalar terms");
        s += w * t.at(0);
    }
    out.at(0) = s;
    if (track) {
        auto on = out.node();
        std::vector<std::pair<double, std::shared_ptr<detail::TensorData>>> ins;
        ins.reserve(terms.size());
        for (const auto& [w, t] : terms) ins.emplace_back(w, t.node());
        Graph::active()->push(on, [ins, on] {
            for (const auto& [w, tn] : ins) {
                if (!tn->requires_grad) continue;
                tn->ensure_grad();
                tn->grad[0] += on->grad[0] * w;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization and probability ops
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
    const auto split = detail::split_axis(x.shape(), axis);
    for (int64_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x.data()[i])) throw NumericError("softmax input is not finite");

    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output(x.shape(), track);
    const int64_t n = split.n, inner = split.inner;
    for (int64_t o = 0; o < split.outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            double m = x.data()[base];
            for (int64_t j = 1; j < n; ++j) m = std::max(m, x.data()[base + j * inner]);
            double z = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                const double e = std::exp(x.data()[base + j * inner] - m);
                out.data()[base + j * inner] = e;
                z += e;
            }
            const double invz = 1.0 / z;
            for (int64_t j = 0; j < n; ++j) out.data()[base + j * inner] *= invz;
        }
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on, split] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const int64_t n = split.n, inner = split.inner;
            for (int64_t o = 0; o < split.outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (int64_t j = 0; j < n; ++j) dot += on->grad[base + j * inner] * on->value[base + j * inner];
                    for (int64_t j = 0; j < n; ++j) {
                        const double s = on->value[base + j * inner];
                        xn->grad[base + j * inner] += s * (on->grad[base + j * inner] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// Row-wise softmax over columns 0..i for row i; entries above the diagonal
// are exactly zero. scores must be square [T x T].
inline Tensor causal_softmax(const Tensor& scores) {
    if (scores.ndim() != 2 || scores.rows() != scores.cols())
        throw DimensionError("causal_softmax requires a square matrix");
    const int t = scores.rows();
    const bool track = detail::track_grad({&scores});
    Tensor out = detail::op_output({t, t}, track);
    for (int i = 0; i < t; ++i) {
        const double* row = scores.data() + static_cast<size_t>(i) * t;
        double* orow = out.data() + static_cast<size_t>(i) * t;
        double m = row[0];
        for (int j = 1; j <= i; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
            orow[j] = std::exp(row[j] - m);
            z += orow[j];
        }
        const double invz = 1.0 / z;
        for (int j = 0; j <= i; ++j) orow[j] *= invz;
        // columns > i stay exactly 0
    }
    if (track) {
        auto xn = scores.node(), on = out.node();
        Graph::active()->push(on, [xn, on, t] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < t; ++i) {
                const size_t base = static_cast<size_t>(i) * t;
                double dot = 0.0;
                for (int j = 0; j <= i; ++j) dot += on->grad[base + j] * on->value[base + j];
                for (int j = 0; j <= i; ++j) {
                    const double s = on->value[base + j];
                    xn->grad[base + j] += s * (on->grad[base + j] - dot);
                }
            }
        });
    }
    return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// affine transform gain * xhat + bias. eps defaults to 1e-5.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
    if (x.ndim() < 1) throw DimensionError("layernorm requires at least 1-D input");
    const int n = x.shape().back();
    if (gain.ndim() != 1 || bias.ndim() != 1 || gain.dim(0) != n || bias.dim(0) != n)
        throw DimensionError("layernorm gain/bias must match the last extent " + std::to_string(n));
    const int64_t rows = x.size() / n;
    const bool track = detail::track_grad({&x, &gain, &bias});
    Tensor out = detail::op_output(x.shape(), track);
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * n;
        double* orr = out.data() + r * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= n;
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) orr[j] = (xr[j] - mu) * inv_std * gain.at(j) + bias.at(j);
    }
    if (track) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        Graph::active()->push(on, [xn, gn, bn, on, rows, n, eps] {
            for (int64_t r = 0; r < rows; ++r) {
                const double* xr = xn->value.data() + r * n;
                const double* gr = on->grad.data() + r * n;
                double mu = 0.0;
                for (int j = 0; j < n; ++j) mu += xr[j];
                mu /= n;
                double var = 0.0;
                for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                var /= n;
                const double inv_std = 1.0 / std::sqrt(var + eps);

                if (gn->requires_grad || bn->requires_grad) {
                    if (gn->requires_grad) gn->ensure_grad();
                    if (bn->requires_grad) bn->ensure_grad();
                    for (int j = 0; j < n; ++j) {
                        if (gn->requires_grad) gn->grad[static_cast<size_t>(j)] += gr[j] * (xr[j] - mu) * inv_std;
                        if (bn->requires_grad) bn->grad[static_cast<size_t>(j)] += gr[j];
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* xg = xn->grad.data() + r * n;
                    // dxhat = g * gain; dx via the usual two correction terms
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dxhat = gr[j] * gn->value[static_cast<size_t>(j)];
                        const double xhat = (xr[j] - mu) * inv_std;
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for (int j = 0; j < n; ++j) {
                        const double dxhat = gr[j] * gn->value[static_cast<size_t>(j)];
                        const double xhat = (xr[j] - mu) * inv_std;
                        xg[j] += inv_std * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / n);
                    }
                }
            }
        });
    }
    return out;
}

// Mean over labeled positions of -log softmax(logits)[pos, id].
// labels: (position, token id) pairs; must be non-empty.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::pair<int, int>>& labels) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy expects [T x V] logits");
    if (labels.empty()) throw ContractViolation("cross_entropy requires a non-empty label set");
    const int t = logits.rows(), v = logits.cols();
    for (const auto& [pos, id] : labels) {
        if (pos < 0 || pos >= t) throw ContractViolation("cross_entropy label position out of range");
        if (id < 0 || id >= v) throw ContractViolation("cross_entropy label id out of range");
    }
    const bool track = detail::track_grad({&logits});
    Tensor out = detail::op_output({1}, track);
    double total = 0.0;
    for (const auto& [pos, id] : labels) {
        const double* row = logits.data() + static_cast<size_t>(pos) * v;
        double m = row[0];
        for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - m);
        total += m + std::log(z) - row[id];
    }
    out.at(0) = total / static_cast<double>(labels.size());
    if (track) {
        auto ln = logits.node(), on = out.node();
        Graph::active()->push(on, [ln, on, labels, v] {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const double g = on->grad[0] / static_cast<double>(labels.size());
            for (const auto& [pos, id] : labels) {
                const double* row = ln->value.data() + static_cast<size_t>(pos) * v;
                double* grow = ln->grad.data() + static_cast<size_t>(pos) * v;
                double m = row[0];
                for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
                double z = 0.0;
                for (int j = 0; j < v; ++j) z += std::exp(row[j] - m);
                const double invz = 1.0 / z;
                for (int j = 0; j < v; ++j) grow[j] += g * std::exp(row[j] - m) * invz;
                grow[id] -= g;
            }
        });
    }
    return out;
}

// KL(p || q) with rows along the last axis, returned as the mean over rows.
// p is treated as a constant: gradient flows into q only. q is floored at
// 1e-12 before the log so one-hot teacher rows stay bounded.
inline Tensor kl_divergence(const Tensor& p, const Tensor& q) {
    static constexpr double kFloor = 1e-12;
    if (p.shape() != q.shape())
        throw DimensionError("kl_divergence shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
    const int n = p.shape().back();
    const int64_t rows = p.size() / n;
    for (int64_t r = 0; r < rows; ++r) {
        double sp = 0.0, sq = 0.0;
        for (int j = 0; j < n; ++j) {
            const double pv = p.data()[r * n + j], qv = q.data()[r * n + j];
            if (pv < -1e-9 || qv < -1e-9) throw ContractViolation("kl_divergence requires nonnegative rows");
            sp += pv;
            sq += qv;
        }
        if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6)
            throw ContractViolation("kl_divergence rows must sum to 1 within 1e-6");
    }
    const bool track = detail::track_grad({&p, &q});
    Tensor out = detail::op_output({1}, track);
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        for (int j = 0; j < n; ++j) {
            const double pv = p.data()[r * n + j];
            if (pv <= 0.0) continue;  // 0 * ln 0 := 0
            const double qv = std::max(q.data()[r * n + j], kFloor);
            total += pv * (std::log(pv) - std::log(qv));
        }
    }
    out.at(0) = total / static_cast<double>(rows);
    if (track) {
        auto pn = p.node(), qn = q.node(), on = out.node();
        Graph::active()->push(on, [pn, qn, on, rows, n] {
            if (!qn->requires_grad) return;
            qn->ensure_grad();
            const double g = on->grad[0] / static_cast<double>(rows);
            for (int64_t r = 0; r < rows; ++r) {
                for (int j = 0; j < n; ++j) {
                    const double pv = pn->value[r * n + j];
                    if (pv <= 0.0) continue;
                    const double qv = qn->value[r * n + j];
                    if (qv > kFloor) qn->grad[r * n + j] -= g * pv / qv;
                }
            }
        });
    }
    return out;
}

// ln(max(x, floor)); gradient passes 1/x where x is above the floor.
inline Tensor log_floored(const Tensor& x, double floor = 1e-12) {
    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output(x.shape(), track);
    for (int64_t i = 0; i < x.size(); ++i) out.data()[i] = std::log(std::max(x.data()[i], floor));
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on, floor] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (size_t i = 0; i < xn->grad.size(); ++i)
                if (xn->value[i] > floor) xn->grad[i] += on->grad[i] / xn->value[i];
        });
    }
    return out;
}

// Floors each entry at `floor` and renormalizes rows (last axis) to sum 1.
inline Tensor renorm_rows(const Tensor& x, double floor = 1e-12) {
    const int n = x.shape().back();
    const int64_t rows = x.size() / n;
    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output(x.shape(), track);
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += std::max(x.data()[r * n + j], floor);
        const double invs = 1.0 / s;
        for (int j = 0; j < n; ++j) out.data()[r * n + j] = std::max(x.data()[r * n + j], floor) * invs;
    }
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on, rows, n, floor] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                double s = 0.0, dot = 0.0;
                for (int j = 0; j < n; ++j) s += std::max(xn->value[r * n + j], floor);
                for (int j = 0; j < n; ++j) dot += on->grad[r * n + j] * on->value[r * n + j];
                const double invs = 1.0 / s;
                for (int j = 0; j < n; ++j) {
                    if (xn->value[r * n + j] > floor)
                        xn->grad[r * n + j] += (on->grad[r * n + j] - dot) * invs;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

// Gathers rows of a [V x d] table by id; duplicate ids accumulate gradient.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw DimensionError("gather_rows expects a 2-D table");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v) throw DimensionError("gather_rows id " + std::to_string(id) + " out of range");
    const bool track = detail::track_grad({&table});
    Tensor out = detail::op_output({static_cast<int>(ids.size()), d}, track);
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data() + static_cast<size_t>(ids[i]) * d, d, out.data() + i * d);
    if (track) {
        auto tn = table.node(), on = out.node();
        Graph::active()->push(on, [tn, on, ids, d] {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                double* dst = tn->grad.data() + static_cast<size_t>(ids[i]) * d;
                const double* src = on->grad.data() + i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Contiguous row slice [r0, r1).
inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
    if (x.ndim() != 2 || r0 < 0 || r1 > x.rows() || r0 >= r1)
        throw DimensionError("slice_rows range invalid");
    const int d = x.cols();
    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output({r1 - r0, d}, track);
    std::copy_n(x.data() + static_cast<size_t>(r0) * d, static_cast<size_t>(r1 - r0) * d, out.data());
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on, r0, d] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            double* dst = xn->grad.data() + static_cast<size_t>(r0) * d;
            for (size_t i = 0; i < on->grad.size(); ++i) dst[i] += on->grad[i];
        });
    }
    return out;
}

// Copy of x with rows [r0, r0+values.rows) replaced by `values`. Gradient of
// the replaced rows flows to `values`, the rest to x.
inline Tensor replace_rows(const Tensor& x, int r0, const Tensor& values) {
    if (x.ndim() != 2 || values.ndim() != 2 || values.cols() != x.cols())
        throw DimensionError("replace_rows expects matching column extents");
    const int k = values.rows(), d = x.cols();
    if (r0 < 0 || r0 + k > x.rows()) throw DimensionError("replace_rows range out of bounds");
    const bool track = detail::track_grad({&x, &values});
    Tensor out = detail::op_output(x.shape(), track);
    std::copy_n(x.data(), x.size(), out.data());
    std::copy_n(values.data(), values.size(), out.data() + static_cast<size_t>(r0) * d);
    if (track) {
        auto xn = x.node(), vn = values.node(), on = out.node();
        Graph::active()->push(on, [xn, vn, on, r0, k, d] {
            if (vn->requires_grad) {
                vn->ensure_grad();
                const double* src = on->grad.data() + static_cast<size_t>(r0) * d;
                for (size_t i = 0; i < vn->grad.size(); ++i) vn->grad[i] += src[i];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                const size_t lo = static_cast<size_t>(r0) * d, hi = lo + static_cast<size_t>(k) * d;
                for (size_t i = 0; i < xn->grad.size(); ++i)
                    if (i < lo || i >= hi) xn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

// Contiguous column slice [c0, c1).
inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.cols() || c0 >= c1)
        throw DimensionError("slice_cols range invalid");
    const int r = x.rows(), c = x.cols(), w = c1 - c0;
    const bool track = detail::track_grad({&x});
    Tensor out = detail::op_output({r, w}, track);
    for (int i = 0; i < r; ++i)
        std::copy_n(x.data() + static_cast<size_t>(i) * c + c0, w, out.data() + static_cast<size_t>(i) * w);
    if (track) {
        auto xn = x.node(), on = out.node();
        Graph::active()->push(on, [xn, on, r, c, c0, w] {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < r; ++i) {
                double* dst = xn->grad.data() + static_cast<size_t>(i) * c + c0;
                const double* src = on->grad.data() + static_cast<size_t>(i) * w;
                for (int j = 0; j < w; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractViolation("concat_cols of no parts");
    const int r = parts[0].rows();
    int total = 0;
    bool track = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.rows() != r) throw DimensionError("concat_cols parts must share the row extent");
        total += p.cols();
        if (Graph::recording() && p.requires_grad()) track = true;
    }
    Tensor out = detail::op_output({r, total}, track);
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < r; ++i)
            std::copy_n(p.data() + static_cast<size_t>(i) * p.cols(), p.cols(),
                        out.data() + static_cast<size_t>(i) * total + off);
        off += p.cols();
    }
    if (track) {
        auto on = out.node();
        std::vector<std::shared_ptr<detail::TensorData>> ins;
        std::vector<int> widths;
        for (const auto& p : parts) {
            ins.push_back(p.node());
            widths.push_back(p.cols());
        }
        Graph::active()->push(on, [ins, widths, on, r, total] {
            int off = 0;
            for (size_t k = 0; k < ins.size(); ++k) {
                const int w = widths[k];
                if (ins[k]->requires_grad) {
                    ins[k]->ensure_grad();
                    for (int i = 0; i < r; ++i) {
                        const double* src = on->grad.data() + static_cast<size_t>(i) * total + off;
                        double* dst = ins[k]->grad.data() + static_cast<size_t>(i) * w;
                        for (int j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off += w;
            }
        });
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractViolation("concat_rows of no parts");
    const int c = parts[0].cols();
    int total = 0;
    bool track = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.cols() != c) throw DimensionError("concat_rows parts must share the column extent");
        total += p.rows();
        if (Graph::recording() && p.requires_grad()) track = true;
    }
    Tensor out = detail::op_output({total, c}, track);
    int off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.data(), p.size(), out.data() + static_cast<size_t>(off) * c);
        off += p.rows();
    }
    if (track) {
        auto on = out.node();
        std::vector<std::shared_ptr<detail::TensorData>> ins;
        std::vector<int> heights;
        for (const auto& p : parts) {
            ins.push_back(p.node());
            heights.push_back(p.rows());
        }
        Graph::active()->push(on, [ins, heights, on, c] {
            size_t off = 0;
            for (size_t k = 0; k < ins.size(); ++k) {
                const size_t count = static_cast<size_t>(heights[k]) * c;
                if (ins[k]->requires_grad) {
                    ins[k]->ensure_grad();
                    for (size_t i = 0; i < count; ++i) ins[k]->grad[i] += on->grad[off + i];
                }
                off += count;
            }
        });
    }
    return out;
}

inline int argmax_row(const Tensor& x, int row) {
    const int c = x.cols();
    const double* r = x.data() + static_cast<size_t>(row) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
        if (r[j] > r[best]) best = j;  // ties keep the lowest index
    return best;
}

}  // namespace crystal
