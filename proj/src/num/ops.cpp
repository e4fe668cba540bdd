// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#include "aukit/num/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace aukit::num {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

// Treat 1-D [D] as a single row; returns {rows, cols}.
std::pair<std::size_t, std::size_t> as_matrix(const Var& x) {
    const auto& s = x.shape();
    if (s.size() == 1) return {1, s[0]};
    if (s.size() == 2) return {s[0], s[1]};
    throw ShapeError("expected a matrix, got shape " + shape_str(s));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// In-place stable softmax of one row; returns nothing, overwrites.
void softmax_row(double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - m);
        z += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[i] /= z;
}

double logsumexp_row(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - m);
    return m + std::log(z);
}

}  // namespace

// ---- elementwise / arithmetic -------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += b.value().at(i);
    return make_op("add", std::move(out), {a, b}, [](Node& self) {
        for (int p = 0; p < 2; ++p) {
            Node& par = *self.parents[p];
            if (!par.requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad.at(i) += self.grad.at(i);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= b.value().at(i);
    return make_op("sub", std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (pa.requires_grad) pa.grad.at(i) += self.grad.at(i);
            if (pb.requires_grad) pb.grad.at(i) -= self.grad.at(i);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= b.value().at(i);
    return make_op("mul", std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double g = self.grad.at(i);
            if (pa.requires_grad) pa.grad.at(i) += g * pb.value.at(i);
            if (pb.requires_grad) pb.grad.at(i) += g * pa.value.at(i);
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) /= b.value().at(i);
    debug_check_finite(out, "div");
    return make_op("div", std::move(out), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double g = self.grad.at(i);
            double bv = pb.value.at(i);
            if (pa.requires_grad) pa.grad.at(i) += g / bv;
            if (pb.requires_grad) pb.grad.at(i) -= g * self.value.at(i) / bv;
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= c;
    return make_op("scale", std::move(out), {a}, [c](Node& self) {
        Node& pa = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad.at(i) += c * self.grad.at(i);
    });
}

Var add_bias_rows(const Var& x, const Var& bias) {
    auto [n, d] = as_matrix(x);
    if (bias.shape().size() != 1 || bias.shape()[0] != d) {
        throw ShapeError("add_bias_rows: bias " + shape_str(bias.shape()) +
                         " does not match row width of " + shape_str(x.shape()));
    }
    Tensor out = x.value();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out.at(r * d + c) += bias.value().at(c);
    return make_op("add_bias_rows", std::move(out), {x, bias}, [n, d](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                double g = self.grad.at(r * d + c);
                if (px.requires_grad) px.grad.at(r * d + c) += g;
                if (pb.requires_grad) pb.grad.at(c) += g;
            }
        }
    });
}

// ---- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    auto [m, k] = as_matrix(a);
    auto [k2, n] = as_matrix(b);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    Tensor out(Shape{m, n});
    const double* A = a.value().data();
    const double* B = b.value().data();
    double* C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double av = A[i * k + p];
            const double* brow = B + p * n;
            double* crow = C + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    debug_check_finite(out, "matmul");
    return make_op("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* G = self.grad.data();
        const double* A = pa.value.data();
        const double* B = pb.value.data();
        if (pa.requires_grad) {
            double* dA = pa.grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double g = G[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[p * n + j];
                }
        }
        if (pb.requires_grad) {
            double* dB = pb.grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double av = A[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    auto [m, k] = as_matrix(a);
    auto [n, k2] = as_matrix(b);
    if (k != k2) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    Tensor out(Shape{m, n});
    const double* A = a.value().data();
    const double* B = b.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
            out.at(i * n + j) = acc;
        }
    debug_check_finite(out, "matmul_nt");
    return make_op("matmul_nt", std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* G = self.grad.data();
        const double* A = pa.value.data();
        const double* B = pb.value.data();
        if (pa.requires_grad) {
            double* dA = pa.grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double g = G[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[j * k + p];
                }
        }
        if (pb.requires_grad) {
            double* dB = pb.grad.data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double g = G[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += g * A[i * k + p];
                }
        }
    });
}

// ---- activations / normalization ----------------------------------------

Var silu(const Var& x) {
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = out.at(i);
        out.at(i) = v * sigmoid(v);
    }
    return make_op("silu", std::move(out), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double v = px.value.at(i);
            double s = sigmoid(v);
            px.grad.at(i) += self.grad.at(i) * s * (1.0 + v * (1.0 - s));
        }
    });
}

Var softmax(const Var& x) {
    if (x.shape().size() != 1 || x.shape()[0] < 1) {
        throw ShapeError("softmax expects a non-empty vector, got " + shape_str(x.shape()));
    }
    require_finite(x.value(), "softmax input");
    Tensor out = x.value();
    softmax_row(out.data(), out.size());
    return make_op("softmax", std::move(out), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        double dot = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            dot += self.grad.at(i) * self.value.at(i);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            px.grad.at(i) += self.value.at(i) * (self.grad.at(i) - dot);
    });
}

Var row_softmax(const Var& x) {
    auto [n, d] = as_matrix(x);
    require_finite(x.value(), "row_softmax input");
    Tensor out = x.value();
    for (std::size_t r = 0; r < n; ++r) softmax_row(out.data() + r * d, d);
    return make_op("row_softmax", std::move(out), {x}, [n, d](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t r = 0; r < n; ++r) {
            const double* y = self.value.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double* dx = px.grad.data() + r * d;
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < d; ++i) dx[i] += y[i] * (g[i] - dot);
        }
    });
}

Var causal_row_softmax(const Var& x) {
    auto [t, t2] = as_matrix(x);
    if (t != t2) throw ShapeError("causal_row_softmax expects square scores, got " + shape_str(x.shape()));
    Tensor out(Shape{t, t});
    for (std::size_t r = 0; r < t; ++r) {
        const double* src = x.value().data() + r * t;
        double* dst = out.data() + r * t;
        std::copy(src, src + r + 1, dst);
        softmax_row(dst, r + 1);
        // columns r+1.. stay zero
    }
    return make_op("causal_row_softmax", std::move(out), {x}, [t](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t r = 0; r < t; ++r) {
            const double* y = self.value.data() + r * t;
            const double* g = self.grad.data() + r * t;
            double* dx = px.grad.data() + r * t;
            double dot = 0.0;
            for (std::size_t i = 0; i <= r; ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i <= r; ++i) dx[i] += y[i] * (g[i] - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    auto [n, d] = as_matrix(x);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm: affine params must be length-" + std::to_string(d) +
                         " vectors, got " + shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
    }
    Tensor out(x.shape());
    std::vector<double> inv_std(n), mean(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = x.value().data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = inv;
        double* dst = out.data() + r * d;
        for (std::size_t c = 0; c < d; ++c)
            dst[c] = gamma.value().at(c) * (row[c] - mu) * inv + beta.value().at(c);
    }
    debug_check_finite(out, "layer_norm");
    return make_op("layer_norm", std::move(out), {x, gamma, beta},
                   [n, d, mean, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        for (std::size_t r = 0; r < n; ++r) {
            const double* row = px.value.data() + r * d;
            const double* g = self.grad.data() + r * d;
            double inv = inv_std[r];
            double mu = mean[r];
            // xhat and the two row means the gradient needs
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            std::vector<double> xhat(d), dxhat(d);
            for (std::size_t c = 0; c < d; ++c) {
                xhat[c] = (row[c] - mu) * inv;
                dxhat[c] = g[c] * pg.value.at(c);
                mean_dxhat += dxhat[c];
                mean_dxhat_xhat += dxhat[c] * xhat[c];
                if (pg.requires_grad) pg.grad.at(c) += g[c] * xhat[c];
                if (pb.requires_grad) pb.grad.at(c) += g[c];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            if (px.requires_grad) {
                double* dx = px.grad.data() + r * d;
                for (std::size_t c = 0; c < d; ++c)
                    dx[c] += inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
            }
        }
    });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.value().size(); ++i) acc += x.value().at(i);
    return make_op("sum", Tensor::scalar(acc), {x}, [](Node& self) {
        Node& px = *self.parents[0];
        double g = self.grad.at(0);
        for (std::size_t i = 0; i < px.grad.size(); ++i) px.grad.at(i) += g;
    });
}

Var col_mean(const Var& x) {
    auto [n, d] = as_matrix(x);
    Tensor out(Shape{d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out.at(c) += x.value().at(r * d + c);
    for (std::size_t c = 0; c < d; ++c) out.at(c) /= static_cast<double>(n);
    return make_op("col_mean", std::move(out), {x}, [n, d](Node& self) {
        Node& px = *self.parents[0];
        double invn = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) px.grad.at(r * d + c) += self.grad.at(c) * invn;
    });
}

Var dot_const(const Var& x, const Tensor& w) {
    if (!x.value().same_shape(w)) {
        throw ShapeError("dot_const: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += x.value().at(i) * w.at(i);
    return make_op("dot_const", Tensor::scalar(acc), {x}, [w](Node& self) {
        Node& px = *self.parents[0];
        double g = self.grad.at(0);
        for (std::size_t i = 0; i < w.size(); ++i) px.grad.at(i) += g * w.at(i);
    });
}

// ---- indexing / reshaping ---------------------------------------------------

Var gather_rows(const Var& x, std::vector<std::size_t> idx) {
    auto [n, d] = as_matrix(x);
    for (std::size_t i : idx) {
        if (i >= n) throw IndexError("gather_rows: row " + std::to_string(i) + " out of " + std::to_string(n));
    }
    Tensor out(Shape{idx.size(), d});
    for (std::size_t j = 0; j < idx.size(); ++j)
        std::copy_n(x.value().data() + idx[j] * d, d, out.data() + j * d);
    return make_op("gather_rows", std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const double* g = self.grad.data() + j * d;
            double* dst = px.grad.data() + idx[j] * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += g[c];
        }
    });
}

Var scatter_add_rows(const Var& x, std::vector<std::size_t> idx, std::size_t out_rows) {
    auto [m, d] = as_matrix(x);
    if (idx.size() != m) throw ShapeError("scatter_add_rows: index count != row count");
    for (std::size_t i : idx) {
        if (i >= out_rows) throw IndexError("scatter_add_rows: row " + std::to_string(i) + " out of " + std::to_string(out_rows));
    }
    Tensor out(Shape{out_rows, d});
    for (std::size_t j = 0; j < m; ++j) {
        const double* src = x.value().data() + j * d;
        double* dst = out.data() + idx[j] * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
    return make_op("scatter_add_rows", std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const double* g = self.grad.data() + idx[j] * d;
            double* dst = px.grad.data() + j * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += g[c];
        }
    });
}

Var gather_elems(const Var& x, std::vector<std::size_t> flat_idx) {
    for (std::size_t i : flat_idx) {
        if (i >= x.value().size())
            throw IndexError("gather_elems: index " + std::to_string(i) + " out of " +
                             std::to_string(x.value().size()));
    }
    Tensor out(Shape{flat_idx.size()});
    for (std::size_t j = 0; j < flat_idx.size(); ++j) out.at(j) = x.value().at(flat_idx[j]);
    return make_op("gather_elems", std::move(out), {x}, [flat_idx = std::move(flat_idx)](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t j = 0; j < flat_idx.size(); ++j)
            px.grad.at(flat_idx[j]) += self.grad.at(j);
    });
}

Var repeat_each(const Var& x, std::size_t k) {
    if (x.shape().size() != 1) throw ShapeError("repeat_each expects a vector");
    std::size_t b = x.shape()[0];
    Tensor out(Shape{b * k});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < k; ++j) out.at(i * k + j) = x.value().at(i);
    return make_op("repeat_each", std::move(out), {x}, [b, k](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t i = 0; i < b; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += self.grad.at(i * k + j);
            px.grad.at(i) += acc;
        }
    });
}

Var sum_groups(const Var& x, std::size_t k) {
    if (x.shape().size() != 1 || x.shape()[0] % k != 0)
        throw ShapeError("sum_groups: length not a multiple of group size");
    std::size_t b = x.shape()[0] / k;
    Tensor out(Shape{b});
    for (std::size_t i = 0; i < b; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += x.value().at(i * k + j);
        out.at(i) = acc;
    }
    return make_op("sum_groups", std::move(out), {x}, [b, k](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < k; ++j) px.grad.at(i * k + j) += self.grad.at(i);
    });
}

Var scale_rows(const Var& x, const Var& w) {
    auto [n, d] = as_matrix(x);
    if (w.shape() != Shape{n}) {
        throw ShapeError("scale_rows: weight vector " + shape_str(w.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
    }
    Tensor out = x.value();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out.at(r * d + c) *= w.value().at(r);
    return make_op("scale_rows", std::move(out), {x, w}, [n, d](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        for (std::size_t r = 0; r < n; ++r) {
            const double* g = self.grad.data() + r * d;
            const double* xr = px.value.data() + r * d;
            double wv = pw.value.at(r);
            if (px.requires_grad) {
                double* dx = px.grad.data() + r * d;
                for (std::size_t c = 0; c < d; ++c) dx[c] += g[c] * wv;
            }
            if (pw.requires_grad) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) acc += g[c] * xr[c];
                pw.grad.at(r) += acc;
            }
        }
    });
}

Var concat_rows(const Var& a, const Var& b) {
    auto [na, d] = as_matrix(a);
    auto [nb, d2] = as_matrix(b);
    if (d != d2) {
        throw ShapeError("concat_rows: column widths differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Tensor out(Shape{na + nb, d});
    std::copy_n(a.value().data(), na * d, out.data());
    std::copy_n(b.value().data(), nb * d, out.data() + na * d);
    return make_op("concat_rows", std::move(out), {a, b}, [na, nb, d](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)
            for (std::size_t i = 0; i < na * d; ++i) pa.grad.at(i) += self.grad.at(i);
        if (pb.requires_grad)
            for (std::size_t i = 0; i < nb * d; ++i) pb.grad.at(i) += self.grad.at(na * d + i);
    });
}

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
    auto [n, d] = as_matrix(x);
    if (c0 >= c1 || c1 > d) throw IndexError("slice_cols: bad range");
    std::size_t w = c1 - c0;
    Tensor out(Shape{n, w});
    for (std::size_t r = 0; r < n; ++r)
        std::copy_n(x.value().data() + r * d + c0, w, out.data() + r * w);
    return make_op("slice_cols", std::move(out), {x}, [n, d, c0, w](Node& self) {
        Node& px = *self.parents[0];
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c)
                px.grad.at(r * d + c0 + c) += self.grad.at(r * w + c);
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input");
    std::size_t n = as_matrix(xs[0]).first;
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& x : xs) {
        auto [nr, w] = as_matrix(x);
        if (nr != n) throw ShapeError("concat_cols: row counts differ");
        widths.push_back(w);
        total += w;
    }
    Tensor out(Shape{n, total});
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(xs[i].value().data() + r * widths[i], widths[i],
                        out.data() + r * total + off);
        off += widths[i];
    }
    return make_op("concat_cols", std::move(out), xs, [n, widths, total](Node& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (p.requires_grad) {
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < widths[i]; ++c)
                        p.grad.at(r * widths[i] + c) += self.grad.at(r * total + off + c);
            }
            off += widths[i];
        }
    });
}

// ---- losses -------------------------------------------------------------------

Var cross_entropy(const Var& logits, std::size_t target) {
    if (logits.shape().size() != 1) throw ShapeError("cross_entropy expects a logit vector");
    std::size_t v = logits.shape()[0];
    if (target >= v) {
        throw IndexError("cross_entropy: target " + std::to_string(target) +
                         " out of vocab " + std::to_string(v));
    }
    double lse = logsumexp_row(logits.value().data(), v);
    double loss = lse - logits.value().at(target);
    return make_op("cross_entropy", Tensor::scalar(loss), {logits}, [target, v](Node& self) {
        Node& pl = *self.parents[0];
        double g = self.grad.at(0);
        std::vector<double> p(pl.value.data(), pl.value.data() + v);
        softmax_row(p.data(), v);
        for (std::size_t i = 0; i < v; ++i)
            pl.grad.at(i) += g * (p[i] - (i == target ? 1.0 : 0.0));
    });
}

Var masked_ntp(const Var& logits, std::span<const int> targets,
               std::span<const std::uint8_t> mask) {
    auto [t, v] = as_matrix(logits);
    if (targets.size() != t || mask.size() != t) {
        throw ShapeError("masked_ntp: targets/mask length must equal sequence length " +
                         std::to_string(t));
    }
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
            throw IndexError("masked_ntp: target id " + std::to_string(targets[i]) +
                             " out of vocab " + std::to_string(v) + " at position " +
                             std::to_string(i));
        }
        pos.push_back(i);
    }
    if (pos.empty()) throw ContractError("masked_ntp: empty loss mask");
    double acc = 0.0;
    for (std::size_t i : pos) {
        const double* row = logits.value().data() + i * v;
        acc += logsumexp_row(row, v) - row[targets[i]];
    }
    acc /= static_cast<double>(pos.size());
    std::vector<int> tgt(targets.begin(), targets.end());
    return make_op("masked_ntp", Tensor::scalar(acc), {logits},
                   [pos = std::move(pos), tgt = std::move(tgt), v](Node& self) {
        Node& pl = *self.parents[0];
        double g = self.grad.at(0) / static_cast<double>(pos.size());
        std::vector<double> p(v);
        for (std::size_t i : pos) {
            const double* row = pl.value.data() + i * v;
            std::copy_n(row, v, p.data());
            softmax_row(p.data(), v);
            double* dst = pl.grad.data() + i * v;
            auto target = static_cast<std::size_t>(tgt[i]);
            for (std::size_t c = 0; c < v; ++c)
                dst[c] += g * (p[c] - (c == target ? 1.0 : 0.0));
        }
    });
}

// ---- plain-tensor helpers --------------------------------------------------------

std::vector<double> softmax_values(std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    softmax_row(out.data(), out.size());
    return out;
}

Tensor layer_norm_normalized(const Tensor& x, double eps) {
    std::size_t d = x.shape().back();
    std::size_t n = x.size() / d;
    Tensor out(x.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = x.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) out.at(r * d + c) = (row[c] - mu) * inv;
    }
    return out;
}

}  // namespace aukit::num
