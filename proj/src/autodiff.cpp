#include "lindit/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace lindit {

void Node::accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (grad.numel() == 0) grad = Tensor::zeros(val.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) grad.data[i] += g.data[i];
}

Var Tape::leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

void Tape::backward(const Var& loss) {
    if (used_) throw NumericError("tape: backward called twice without reset");
    if (loss->val.numel() != 1) throw DimensionError("tape: backward requires a scalar loss");
    used_ = true;
    loss->requires_grad = true;
    loss->grad = Tensor::full(loss->val.shape, 1.0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node& n = **it;
        if (n.requires_grad && n.backprop && n.grad.numel() > 0) n.backprop(n);
    }
}

void Tape::reset() {
    order_.clear();
    used_ = false;
}

namespace detail {
thread_local std::vector<std::uint8_t>* g_relu_trace = nullptr;
thread_local std::vector<std::uint8_t> g_relu_storage;

void relu_trace_begin() {
    g_relu_storage.clear();
    g_relu_trace = &g_relu_storage;
}
std::vector<std::uint8_t> relu_trace_end() {
    g_relu_trace = nullptr;
    return std::move(g_relu_storage);
}
void relu_trace_push(bool positive) {
    if (g_relu_trace) g_relu_trace->push_back(positive ? 1 : 0);
}
bool relu_trace_active() { return g_relu_trace != nullptr; }
}  // namespace detail

namespace {

Var make_op(Tape& t, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    t.record(n);
    return n;
}

void require_2d(const Var& a, const char* op) {
    if (a->val.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                                                 shape_str(a->val.shape));
}

}  // namespace

Var matmul(Tape& t, const Var& a, const Var& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a->val.dim(0), k = a->val.dim(1);
    const std::size_t k2 = b->val.dim(0), n = b->val.dim(1);
    if (k != k2)
        throw DimensionError("matmul: inner dimensions differ, " + shape_str(a->val.shape) +
                             " vs " + shape_str(b->val.shape));
    Tensor c({m, n});
    const double* A = a->val.data.data();
    const double* B = b->val.data.data();
    double* C = c.data.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* Bp = B + p * n;
            double* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += av * Bp[j];
        }
    return make_op(t, std::move(c), {a, b}, [m, k, n](Node& node) {
        const Tensor& g = node.grad;
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) {  // dA = G * B^T
            Tensor da({m, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = g.data[i * n + j];
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p)
                        da.data[i * k + p] += gv * pb.val.data[p * n + j];
                }
            pa.accumulate(da);
        }
        if (pb.requires_grad) {  // dB = A^T * G
            Tensor db({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = pa.val.data[i * k + p];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        db.data[p * n + j] += av * g.data[i * n + j];
                }
            pb.accumulate(db);
        }
    });
}

Var transpose(Tape& t, const Var& a) {
    require_2d(a, "transpose");
    const std::size_t m = a->val.dim(0), n = a->val.dim(1);
    Tensor c({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c.data[j * m + i] = a->val.data[i * n + j];
    return make_op(t, std::move(c), {a}, [m, n](Node& node) {
        Tensor g({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g.data[i * n + j] = node.grad.data[j * m + i];
        node.parents[0]->accumulate(g);
    });
}

Var add(Tape& t, const Var& a, const Var& b) {
    check_same_shape(a->val, b->val, "add");
    Tensor c = a->val;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] += b->val.data[i];
    return make_op(t, std::move(c), {a, b}, [](Node& node) {
        node.parents[0]->accumulate(node.grad);
        node.parents[1]->accumulate(node.grad);
    });
}

Var sub(Tape& t, const Var& a, const Var& b) {
    check_same_shape(a->val, b->val, "sub");
    Tensor c = a->val;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] -= b->val.data[i];
    return make_op(t, std::move(c), {a, b}, [](Node& node) {
        node.parents[0]->accumulate(node.grad);
        Tensor g = node.grad;
        for (auto& v : g.data) v = -v;
        node.parents[1]->accumulate(g);
    });
}

Var mul(Tape& t, const Var& a, const Var& b) {
    check_same_shape(a->val, b->val, "mul");
    Tensor c = a->val;
    for (std::size_t i = 0; i < c.numel(); ++i) c.data[i] *= b->val.data[i];
    return make_op(t, std::move(c), {a, b}, [](Node& node) {
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) {
            Tensor g = node.grad;
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] *= pb.val.data[i];
            pa.accumulate(g);
        }
        if (pb.requires_grad) {
            Tensor g = node.grad;
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] *= pa.val.data[i];
            pb.accumulate(g);
        }
    });
}

Var scale(Tape& t, const Var& a, double s) {
    Tensor c = a->val;
    for (auto& v : c.data) v *= s;
    return make_op(t, std::move(c), {a}, [s](Node& node) {
        Tensor g = node.grad;
        for (auto& v : g.data) v *= s;
        node.parents[0]->accumulate(g);
    });
}

Var relu(Tape& t, const Var& a) {
    Tensor c = a->val;
    for (auto& v : c.data) {
        if (detail::relu_trace_active()) detail::relu_trace_push(v > 0.0);
        if (v < 0.0) v = 0.0;
    }
    return make_op(t, std::move(c), {a}, [](Node& node) {
        Tensor g = node.grad;
        const Tensor& x = node.parents[0]->val;
        // derivative at exactly 0 defined as 0
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (x.data[i] <= 0.0) g.data[i] = 0.0;
        node.parents[0]->accumulate(g);
    });
}

Var silu(Tape& t, const Var& a) {
    Tensor c = a->val;
    for (auto& v : c.data) v = v / (1.0 + std::exp(-v));
    return make_op(t, std::move(c), {a}, [](Node& node) {
        Tensor g = node.grad;
        const Tensor& x = node.parents[0]->val;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
            g.data[i] *= s * (1.0 + x.data[i] * (1.0 - s));
        }
        node.parents[0]->accumulate(g);
    });
}

Var div_rows(Tape& t, const Var& num, const Var& den) {
    require_2d(num, "div_rows");
    require_2d(den, "div_rows");
    const std::size_t n = num->val.dim(0), d = num->val.dim(1);
    if (den->val.dim(0) != n || den->val.dim(1) != 1)
        throw DimensionError("div_rows: denominator must be [" + std::to_string(n) + "x1], got " +
                             shape_str(den->val.shape));
    Tensor c({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        const double dv = den->val.data[r];
        for (std::size_t j = 0; j < d; ++j) c.data[r * d + j] = num->val.data[r * d + j] / dv;
    }
    check_finite(c, "div_rows");
    return make_op(t, std::move(c), {num, den}, [n, d](Node& node) {
        Node& pn = *node.parents[0];
        Node& pd = *node.parents[1];
        if (pn.requires_grad) {
            Tensor g({n, d});
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j)
                    g.data[r * d + j] = node.grad.data[r * d + j] / pd.val.data[r];
            pn.accumulate(g);
        }
        if (pd.requires_grad) {
            Tensor g({n, 1});
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                const double dv = pd.val.data[r];
                for (std::size_t j = 0; j < d; ++j)
                    acc -= node.grad.data[r * d + j] * pn.val.data[r * d + j] / (dv * dv);
                g.data[r] = acc;
            }
            pd.accumulate(g);
        }
    });
}

Var row_add(Tape& t, const Var& x, const Var& v) {
    require_2d(x, "row_add");
    const std::size_t n = x->val.dim(0), d = x->val.dim(1);
    if (v->val.numel() != d)
        throw DimensionError("row_add: vector length " + std::to_string(v->val.numel()) +
                             " vs row width " + std::to_string(d));
    Tensor c = x->val;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) c.data[r * d + j] += v->val.data[j];
    return make_op(t, std::move(c), {x, v}, [n, d](Node& node) {
        node.parents[0]->accumulate(node.grad);
        if (node.parents[1]->requires_grad) {
            Tensor g(node.parents[1]->val.shape);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j) g.data[j] += node.grad.data[r * d + j];
            node.parents[1]->accumulate(g);
        }
    });
}

Var row_mul(Tape& t, const Var& x, const Var& v) {
    require_2d(x, "row_mul");
    const std::size_t n = x->val.dim(0), d = x->val.dim(1);
    if (v->val.numel() != d)
        throw DimensionError("row_mul: vector length " + std::to_string(v->val.numel()) +
                             " vs row width " + std::to_string(d));
    Tensor c = x->val;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) c.data[r * d + j] *= v->val.data[j];
    return make_op(t, std::move(c), {x, v}, [n, d](Node& node) {
        Node& px = *node.parents[0];
        Node& pv = *node.parents[1];
        if (px.requires_grad) {
            Tensor g = node.grad;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j) g.data[r * d + j] *= pv.val.data[j];
            px.accumulate(g);
        }
        if (pv.requires_grad) {
            Tensor g(pv.val.shape);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j)
                    g.data[j] += node.grad.data[r * d + j] * px.val.data[r * d + j];
            pv.accumulate(g);
        }
    });
}

Var scalar_mul(Tape& t, const Var& x, const Var& s) {
    if (s->val.numel() != 1) throw DimensionError("scalar_mul: scale must be a scalar");
    Tensor c = x->val;
    const double sv = s->val.data[0];
    for (auto& v : c.data) v *= sv;
    return make_op(t, std::move(c), {x, s}, [sv](Node& node) {
        Node& px = *node.parents[0];
        Node& ps = *node.parents[1];
        if (px.requires_grad) {
            Tensor g = node.grad;
            for (auto& v : g.data) v *= sv;
            px.accumulate(g);
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < node.grad.numel(); ++i)
                acc += node.grad.data[i] * px.val.data[i];
            ps.accumulate(Tensor::scalar(acc));
        }
    });
}

Var rmsnorm(Tape& t, const Var& x, const Var& gamma, double eps) {
    if (eps < 0.0) throw ConfigError("rmsnorm: eps must be >= 0");
    const std::size_t d = x->val.rank() == 2 ? x->val.dim(1) : x->val.numel();
    const std::size_t n = x->val.rank() == 2 ? x->val.dim(0) : 1;
    if (gamma->val.numel() != d)
        throw DimensionError("rmsnorm: gamma length " + std::to_string(gamma->val.numel()) +
                             " vs feature dim " + std::to_string(d));
    Tensor c = x->val;
    std::vector<double> rinv(n);
    for (std::size_t r = 0; r < n; ++r) {
        double ms = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double v = x->val.data[r * d + j];
            ms += v * v;
        }
        ms = ms / double(d) + eps;
        rinv[r] = 1.0 / std::sqrt(ms);
        for (std::size_t j = 0; j < d; ++j)
            c.data[r * d + j] = x->val.data[r * d + j] * rinv[r] * gamma->val.data[j];
    }
    check_finite(c, "rmsnorm");
    return make_op(t, std::move(c), {x, gamma}, [n, d, rinv](Node& node) {
        Node& px = *node.parents[0];
        Node& pg = *node.parents[1];
        if (px.requires_grad) {
            Tensor g(px.val.shape);
            for (std::size_t r = 0; r < n; ++r) {
                // y_j = x_j * rinv * gamma_j, rinv = (mean(x^2)+eps)^{-1/2}
                double dot = 0.0;  // sum_j grad_j * gamma_j * x_j
                for (std::size_t j = 0; j < d; ++j)
                    dot += node.grad.data[r * d + j] * pg.val.data[j] * px.val.data[r * d + j];
                const double ri = rinv[r];
                const double k = dot * ri * ri * ri / double(d);
                for (std::size_t j = 0; j < d; ++j)
                    g.data[r * d + j] =
                        node.grad.data[r * d + j] * pg.val.data[j] * ri - k * px.val.data[r * d + j];
            }
            px.accumulate(g);
        }
        if (pg.requires_grad) {
            Tensor g(pg.val.shape);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < d; ++j)
                    g.data[j] += node.grad.data[r * d + j] * px.val.data[r * d + j] * rinv[r];
            pg.accumulate(g);
        }
    });
}

Var depthwise_conv3x3(Tape& t, const Var& x, const Var& w) {
    if (x->val.rank() != 3) throw DimensionError("depthwise_conv3x3: input must be [CxHxW]");
    if (w->val.rank() != 3 || w->val.dim(1) != 3 || w->val.dim(2) != 3)
        throw DimensionError("depthwise_conv3x3: kernel must be [Cx3x3]");
    const std::size_t C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    if (w->val.dim(0) != C)
        throw DimensionError("depthwise_conv3x3: channel mismatch " + std::to_string(C) + " vs " +
                             std::to_string(w->val.dim(0)));
    auto conv = [C, H, W](const Tensor& in, const Tensor& ker, bool flip) {
        Tensor out({C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double acc = 0.0;
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const long ii = long(i) + di, jj = long(j) + dj;
                            if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) continue;
                            const std::size_t ki = flip ? std::size_t(1 - di) : std::size_t(di + 1);
                            const std::size_t kj = flip ? std::size_t(1 - dj) : std::size_t(dj + 1);
                            acc += in.data[(c * H + std::size_t(ii)) * W + std::size_t(jj)] *
                                   ker.data[(c * 3 + ki) * 3 + kj];
                        }
                    out.data[(c * H + i) * W + j] = acc;
                }
        return out;
    };
    Tensor c = conv(x->val, w->val, false);
    return make_op(t, std::move(c), {x, w}, [C, H, W, conv](Node& node) {
        Node& px = *node.parents[0];
        Node& pw = *node.parents[1];
        if (px.requires_grad) px.accumulate(conv(node.grad, pw.val, true));
        if (pw.requires_grad) {
            Tensor g({C, 3, 3});
            for (std::size_t c2 = 0; c2 < C; ++c2)
                for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < H; ++i)
                            for (std::size_t j = 0; j < W; ++j) {
                                const long ii = long(i) + di, jj = long(j) + dj;
                                if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) continue;
                                acc += node.grad.data[(c2 * H + i) * W + j] *
                                       px.val.data[(c2 * H + std::size_t(ii)) * W + std::size_t(jj)];
                            }
                        g.data[(c2 * 3 + std::size_t(di + 1)) * 3 + std::size_t(dj + 1)] = acc;
                    }
            pw.accumulate(g);
        }
    });
}

Var softmax_rows(Tape& t, const Var& x) {
    require_2d(x, "softmax_rows");
    const std::size_t n = x->val.dim(0), d = x->val.dim(1);
    Tensor c({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        double mx = x->val.data[r * d];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x->val.data[r * d + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = std::exp(x->val.data[r * d + j] - mx);
            c.data[r * d + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < d; ++j) c.data[r * d + j] /= z;
    }
    return make_op(t, std::move(c), {x}, [n, d](Node& node) {
        Tensor g({n, d});
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                dot += node.grad.data[r * d + j] * node.val.data[r * d + j];
            for (std::size_t j = 0; j < d; ++j)
                g.data[r * d + j] = node.val.data[r * d + j] * (node.grad.data[r * d + j] - dot);
        }
        node.parents[0]->accumulate(g);
    });
}

Var sum(Tape& t, const Var& a) {
    double acc = 0.0;
    for (auto v : a->val.data) acc += v;
    return make_op(t, Tensor::scalar(acc), {a}, [](Node& node) {
        node.parents[0]->accumulate(Tensor::full(node.parents[0]->val.shape, node.grad.data[0]));
    });
}

Var mse(Tape& t, const Var& a, const Var& b) {
    check_same_shape(a->val, b->val, "mse");
    const std::size_t n = a->val.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a->val.data[i] - b->val.data[i];
        acc += d * d;
    }
    Tensor v = Tensor::scalar(acc / double(n));
    check_finite(v, "mse");
    return make_op(t, std::move(v), {a, b}, [n](Node& node) {
        const double g0 = node.grad.data[0] * 2.0 / double(n);
        Node& pa = *node.parents[0];
        Node& pb = *node.parents[1];
        if (pa.requires_grad) {
            Tensor g(pa.val.shape);
            for (std::size_t i = 0; i < n; ++i)
                g.data[i] = g0 * (pa.val.data[i] - pb.val.data[i]);
            pa.accumulate(g);
        }
        if (pb.requires_grad) {
            Tensor g(pb.val.shape);
            for (std::size_t i = 0; i < n; ++i)
                g.data[i] = -g0 * (pa.val.data[i] - pb.val.data[i]);
            pb.accumulate(g);
        }
    });
}

Var reshape(Tape& t, const Var& a, Shape s) {
    if (shape_numel(s) != a->val.numel())
        throw DimensionError("reshape: numel mismatch " + shape_str(a->val.shape) + " -> " +
                             shape_str(s));
    Tensor c(std::move(s), a->val.data);
    return make_op(t, std::move(c), {a}, [](Node& node) {
        Tensor g(node.parents[0]->val.shape, node.grad.data);
        node.parents[0]->accumulate(g);
    });
}

Var gather(Tape& t, const Var& a, Shape out_shape, std::vector<std::size_t> idx) {
    if (shape_numel(out_shape) != idx.size())
        throw DimensionError("gather: index count does not match output shape");
    Tensor c(std::move(out_shape));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a->val.numel()) throw DimensionError("gather: index out of range");
        c.data[i] = a->val.data[idx[i]];
    }
    return make_op(t, std::move(c), {a}, [idx](Node& node) {
        Tensor g(node.parents[0]->val.shape);
        for (std::size_t i = 0; i < idx.size(); ++i) g.data[idx[i]] += node.grad.data[i];
        node.parents[0]->accumulate(g);
    });
}

Var slice_cols(Tape& t, const Var& a, std::size_t c0, std::size_t c1) {
    require_2d(a, "slice_cols");
    const std::size_t n = a->val.dim(0), d = a->val.dim(1);
    if (c0 >= c1 || c1 > d) throw DimensionError("slice_cols: bad column range");
    const std::size_t w = c1 - c0;
    Tensor c({n, w});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < w; ++j) c.data[r * w + j] = a->val.data[r * d + c0 + j];
    return make_op(t, std::move(c), {a}, [n, d, c0, w](Node& node) {
        Tensor g({n, d});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) g.data[r * d + c0 + j] = node.grad.data[r * w + j];
        node.parents[0]->accumulate(g);
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const std::size_t n = parts[0]->val.dim(0);
    std::size_t dtot = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p->val.dim(0) != n) throw DimensionError("concat_cols: row count mismatch");
        dtot += p->val.dim(1);
    }
    Tensor c({n, dtot});
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t w = p->val.dim(1);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < w; ++j) c.data[r * dtot + off + j] = p->val.data[r * w + j];
        off += w;
    }
    return make_op(t, std::move(c), parts, [n, dtot, offsets](Node& node) {
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            Node& p = *node.parents[k];
            if (!p.requires_grad) continue;
            const std::size_t w = p.val.dim(1);
            Tensor g({n, w});
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < w; ++j)
                    g.data[r * w + j] = node.grad.data[r * dtot + offsets[k] + j];
            p.accumulate(g);
        }
    });
}

GradCheck grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x, double h) {
    if (h < 1e-6 || h > 1e-4) throw ConfigError("grad_check: h must lie in [1e-6, 1e-4]");

    auto eval = [&](const Tensor& xv, std::vector<std::uint8_t>* trace) {
        Tape tape;
        detail::relu_trace_begin();
        Var out = f(tape, tape.leaf(xv, false));
        auto tr = detail::relu_trace_end();
        if (trace) *trace = std::move(tr);
        if (out->val.numel() != 1) throw DimensionError("grad_check: f must return a scalar");
        const double v = out->val.data[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite f(x)");
        return v;
    };

    // analytic gradient
    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var out = f(tape, leaf);
    if (out->val.numel() != 1) throw DimensionError("grad_check: f must return a scalar");
    if (!std::isfinite(out->val.data[0])) throw NumericError("grad_check: non-finite f(x)");
    tape.backward(out);
    Tensor analytic = leaf->grad.numel() ? leaf->grad : Tensor::zeros(x.shape);

    GradCheck res;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        std::vector<std::uint8_t> trp, trm;
        xp.data[i] = x.data[i] + h;
        const double fp = eval(xp, &trp);
        xp.data[i] = x.data[i] - h;
        const double fm = eval(xp, &trm);
        std::vector<std::uint8_t> trp10, trm10;
        xp.data[i] = x.data[i] + 10.0 * h;
        eval(xp, &trp10);
        xp.data[i] = x.data[i] - 10.0 * h;
        eval(xp, &trm10);
        xp.data[i] = x.data[i];
        if (trp != trm || trp10 != trm10) {  // a ReLU kink sits within 10h of this coordinate
            ++res.skipped;
            continue;
        }
        const double fd = (fp - fm) / (2.0 * h);
        const double an = analytic.data[i];
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
        res.max_rel_err = std::max(res.max_rel_err, rel);
        ++res.checked;
    }
    return res;
}

}  // namespace lindit
