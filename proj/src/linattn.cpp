#include "lindit/linattn.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lindit {

namespace {

template <class T>
void check_qkv(const Ten<T>& q, const Ten<T>& k, const Ten<T>& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw DimensionError("attention: Q, K, V must be rank-2");
    if (!q.same_shape(k) || !q.same_shape(v))
        throw DimensionError("attention: Q, K, V shapes differ: " + shape_str(q.shape) + ", " +
                             shape_str(k.shape) + ", " + shape_str(v.shape));
    if (q.dim(0) < 1 || q.dim(1) < 1) throw DimensionError("attention: N and d must be >= 1");
}

void check_heads(std::size_t model_dim, std::size_t heads) {
    if (heads == 0 || model_dim % heads != 0)
        throw ConfigError("model_dim " + std::to_string(model_dim) + " not divisible by heads " +
                          std::to_string(heads));
}

}  // namespace

Tensor linear_attention_naive(const Tensor& q, const Tensor& k, const Tensor& v, double eps) {
    check_qkv(q, k, v);
    if (eps <= 0.0) throw ConfigError("linear_attention: eps must be > 0");
    const std::size_t n = q.dim(0), d = q.dim(1);
    Tensor out({n, d});
    std::vector<double> qi(d), kj(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) qi[c] = std::max(0.0, q.at(i, c));
        std::vector<double> num(d, 0.0);
        double den = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double sim = 0.0;
            for (std::size_t c = 0; c < d; ++c) sim += qi[c] * std::max(0.0, k.at(j, c));
            den += sim;
            for (std::size_t c = 0; c < d; ++c) num[c] += sim * v.at(j, c);
        }
        for (std::size_t c = 0; c < d; ++c) out.at(i, c) = num[c] / (den + eps);
    }
    return out;
}

Tensor linear_attention_streaming(const Tensor& q, const Tensor& k, const Tensor& v, double eps) {
    check_qkv(q, k, v);
    if (eps <= 0.0) throw ConfigError("linear_attention: eps must be > 0");
    const std::size_t n = q.dim(0), d = q.dim(1);
    // shared terms, O(d^2) memory independent of N
    std::vector<double> S(d * d, 0.0), z(d, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t a = 0; a < d; ++a) {
            const double ka = std::max(0.0, k.at(j, a));
            if (ka == 0.0) continue;
            z[a] += ka;
            for (std::size_t b = 0; b < d; ++b) S[a * d + b] += ka * v.at(j, b);
        }
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double den = 0.0;
        std::vector<double> num(d, 0.0);
        for (std::size_t a = 0; a < d; ++a) {
            const double qa = std::max(0.0, q.at(i, a));
            if (qa == 0.0) continue;
            den += qa * z[a];
            for (std::size_t b = 0; b < d; ++b) num[b] += qa * S[a * d + b];
        }
        for (std::size_t b = 0; b < d; ++b) out.at(i, b) = num[b] / (den + eps);
    }
    return out;
}

Var linear_attention_streaming(Tape& t, const Var& q, const Var& k, const Var& v, double eps) {
    check_qkv(q->val, k->val, v->val);
    if (eps <= 0.0) throw ConfigError("linear_attention: eps must be > 0");
    const std::size_t n = q->val.dim(0);
    Var rq = relu(t, q);
    Var rk = relu(t, k);
    Var s = matmul(t, transpose(t, rk), v);                               // d x d
    Var zcol = matmul(t, transpose(t, rk), t.leaf(Tensor::full({n, 1}, 1.0)));  // d x 1
    Var num = matmul(t, rq, s);                                           // N x d
    Var den = add(t, matmul(t, rq, zcol), t.leaf(Tensor::full({n, 1}, eps)));
    return div_rows(t, num, den);
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    check_qkv(q, k, v);
    const std::size_t n = q.dim(0), d = q.dim(1);
    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    Tensor out({n, d});
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
            scores[j] = s * inv_sqrt_d;
            mx = std::max(mx, scores[j]);
        }
        double zsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            zsum += scores[j];
        }
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += scores[j] * v.at(j, c);
            out.at(i, c) = acc / zsum;
        }
    }
    return out;
}

Var softmax_attention(Tape& t, const Var& q, const Var& k, const Var& v) {
    check_qkv(q->val, k->val, v->val);
    const double inv_sqrt_d = 1.0 / std::sqrt(double(q->val.dim(1)));
    Var scores = scale(t, matmul(t, q, transpose(t, k)), inv_sqrt_d);
    return matmul(t, softmax_rows(t, scores), v);
}

Tensor multihead_linear_attention(const Tensor& x, const MultiHeadParams& p, double eps) {
    Tape t;
    Var o = multihead_linear_attention(t, t.leaf(x), t.leaf(p.w_qkv), t.leaf(p.w_out), p.heads, eps);
    return o->val;
}

Var multihead_linear_attention(Tape& t, const Var& x, const Var& w_qkv, const Var& w_out,
                               std::size_t heads, double eps) {
    const std::size_t dm = x->val.dim(1);
    check_heads(dm, heads);
    if (w_qkv->val.dim(0) != dm || w_qkv->val.dim(1) != 3 * dm)
        throw DimensionError("multihead: w_qkv must be [" + std::to_string(dm) + "x" +
                             std::to_string(3 * dm) + "], got " + shape_str(w_qkv->val.shape));
    const std::size_t dh = dm / heads;
    Var qkv = matmul(t, x, w_qkv);
    std::vector<Var> head_outs;
    head_outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(t, qkv, h * dh, (h + 1) * dh);
        Var kh = slice_cols(t, qkv, dm + h * dh, dm + (h + 1) * dh);
        Var vh = slice_cols(t, qkv, 2 * dm + h * dh, 2 * dm + (h + 1) * dh);
        head_outs.push_back(linear_attention_streaming(t, qh, kh, vh, eps));
    }
    return matmul(t, concat_cols(t, head_outs), w_out);
}

Tensor fused_multihead_linear_attention(const Tensor& x, const MultiHeadParams& p, double eps) {
    const std::size_t n = x.dim(0), dm = x.dim(1);
    check_heads(dm, p.heads);
    if (p.w_qkv.dim(0) != dm || p.w_qkv.dim(1) != 3 * dm)
        throw DimensionError("fused multihead: bad w_qkv shape " + shape_str(p.w_qkv.shape));
    const std::size_t heads = p.heads, dh = dm / heads;

    // Per-head shared-term accumulators; ReLU folded into the projection
    // traversal so separate ReLU(Q)/ReLU(K) arrays never exist.
    std::vector<double> S(heads * dh * dh, 0.0), z(heads * dh, 0.0);
    std::vector<double> rq(n * dm);       // ReLU'd query projections, needed for the second pass
    std::vector<double> vproj(n * dm);

    std::vector<double> row(3 * dm);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3 * dm; ++c) {
            double acc = 0.0;
            for (std::size_t a = 0; a < dm; ++a) acc += x.at(i, a) * p.w_qkv.at(a, c);
            row[c] = c < 2 * dm ? std::max(0.0, acc) : acc;  // ReLU fused for Q and K blocks
        }
        for (std::size_t c = 0; c < dm; ++c) {
            rq[i * dm + c] = row[c];
            vproj[i * dm + c] = row[2 * dm + c];
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const double* kh = row.data() + dm + h * dh;
            const double* vh = row.data() + 2 * dm + h * dh;
            for (std::size_t a = 0; a < dh; ++a) {
                if (kh[a] == 0.0) continue;
                z[h * dh + a] += kh[a];
                for (std::size_t b = 0; b < dh; ++b)
                    S[(h * dh + a) * dh + b] += kh[a] * vh[b];
            }
        }
    }

    Tensor out({n, dm});
    std::vector<double> head_out(dm);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            const double* qh = rq.data() + i * dm + h * dh;
            double den = 0.0;
            for (std::size_t a = 0; a < dh; ++a) den += qh[a] * z[h * dh + a];
            den += eps;
            for (std::size_t b = 0; b < dh; ++b) {
                double acc = 0.0;
                for (std::size_t a = 0; a < dh; ++a) acc += qh[a] * S[(h * dh + a) * dh + b];
                head_out[h * dh + b] = acc / den;
            }
        }
        for (std::size_t c = 0; c < dm; ++c) {
            double acc = 0.0;
            for (std::size_t a = 0; a < dm; ++a) acc += head_out[a] * p.w_out.at(a, c);
            out.at(i, c) = acc;
        }
    }
    return out;
}

// ---------------- f32 kernels ----------------

TensorF linattn_naive_f32(const TensorF& q, const TensorF& k, const TensorF& v, float eps,
                          KernelStats* stats) {
    check_qkv(q, k, v);
    const std::size_t n = q.dim(0), d = q.dim(1);
    TensorF out({n, d});
    std::vector<float> qi(d), num(d);
    if (stats) stats->aux_bytes = 2 * d * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) qi[c] = std::max(0.0f, q.at(i, c));
        std::fill(num.begin(), num.end(), 0.0f);
        float den = 0.0f;
        for (std::size_t j = 0; j < n; ++j) {
            float sim = 0.0f;
            for (std::size_t c = 0; c < d; ++c) sim += qi[c] * std::max(0.0f, k.at(j, c));
            den += sim;
            for (std::size_t c = 0; c < d; ++c) num[c] += sim * v.at(j, c);
        }
        for (std::size_t c = 0; c < d; ++c) out.at(i, c) = num[c] / (den + eps);
    }
    return out;
}

TensorF linattn_streaming_f32(const TensorF& q, const TensorF& k, const TensorF& v, float eps,
                              int threads, KernelStats* stats) {
    check_qkv(q, k, v);
    const std::size_t n = q.dim(0), d = q.dim(1);
    std::vector<float> S(d * d, 0.0f), z(d, 0.0f);
    if (stats) stats->aux_bytes = (d * d + d) * sizeof(float);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t a = 0; a < d; ++a) {
            const float ka = std::max(0.0f, k.at(j, a));
            if (ka == 0.0f) continue;
            z[a] += ka;
            float* Sa = S.data() + a * d;
            const float* vj = v.data.data() + j * d;
            for (std::size_t b = 0; b < d; ++b) Sa[b] += ka * vj[b];
        }
    TensorF out({n, d});
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
#endif
    for (long long ii = 0; ii < (long long)n; ++ii) {
        const std::size_t i = std::size_t(ii);
        float den = 0.0f;
        float* oi = out.data.data() + i * d;
        for (std::size_t a = 0; a < d; ++a) {
            const float qa = std::max(0.0f, q.data.data()[i * d + a]);
            if (qa == 0.0f) continue;
            den += qa * z[a];
            const float* Sa = S.data() + a * d;
            for (std::size_t b = 0; b < d; ++b) oi[b] += qa * Sa[b];
        }
        const float inv = 1.0f / (den + eps);
        for (std::size_t b = 0; b < d; ++b) oi[b] *= inv;
    }
    (void)threads;
    return out;
}

TensorF softmax_attention_f32(const TensorF& q, const TensorF& k, const TensorF& v, int threads,
                              KernelStats* stats) {
    check_qkv(q, k, v);
    const std::size_t n = q.dim(0), d = q.dim(1);
    const float inv_sqrt_d = 1.0f / std::sqrt(float(d));
    TensorF out({n, d});
    if (stats) stats->aux_bytes = std::size_t(std::max(threads, 1)) * n * sizeof(float);
#ifdef _OPENMP
#pragma omp parallel num_threads(threads) if (threads > 1)
#endif
    {
        std::vector<float> scores(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (long long ii = 0; ii < (long long)n; ++ii) {
            const std::size_t i = std::size_t(ii);
            float mx = -3.0e38f;
            for (std::size_t j = 0; j < n; ++j) {
                float s = 0.0f;
                const float* qi = q.data.data() + i * d;
                const float* kj = k.data.data() + j * d;
                for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
                scores[j] = s * inv_sqrt_d;
                mx = std::max(mx, scores[j]);
            }
            float zsum = 0.0f;
            for (std::size_t j = 0; j < n; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                zsum += scores[j];
            }
            float* oi = out.data.data() + i * d;
            for (std::size_t j = 0; j < n; ++j) {
                const float w = scores[j];
                const float* vj = v.data.data() + j * d;
                for (std::size_t c = 0; c < d; ++c) oi[c] += w * vj[c];
            }
            const float inv = 1.0f / zsum;
            for (std::size_t c = 0; c < d; ++c) oi[c] *= inv;
        }
    }
    (void)threads;
    return out;
}

TensorF fused_multihead_f32(const TensorF& x, const MultiHeadParamsF& p, float eps, int threads,
                            KernelStats* stats) {
    const std::size_t n = x.dim(0), dm = x.dim(1);
    check_heads(dm, p.heads);
    const std::size_t heads = p.heads, dh = dm / heads;
    std::vector<float> S(heads * dh * dh, 0.0f), z(heads * dh, 0.0f);
    std::vector<float> rq(n * dm), vproj(n * dm);
    if (stats)
        stats->aux_bytes = (S.size() + z.size() + rq.size() + vproj.size() + 3 * dm) * sizeof(float);

    std::vector<float> row(3 * dm);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3 * dm; ++c) {
            float acc = 0.0f;
            const float* xi = x.data.data() + i * dm;
            for (std::size_t a = 0; a < dm; ++a) acc += xi[a] * p.w_qkv.data[a * 3 * dm + c];
            row[c] = c < 2 * dm ? std::max(0.0f, acc) : acc;
        }
        for (std::size_t c = 0; c < dm; ++c) {
            rq[i * dm + c] = row[c];
            vproj[i * dm + c] = row[2 * dm + c];
        }
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t a = 0; a < dh; ++a) {
                const float ka = row[dm + h * dh + a];
                if (ka == 0.0f) continue;
                z[h * dh + a] += ka;
                for (std::size_t b = 0; b < dh; ++b)
                    S[(h * dh + a) * dh + b] += ka * row[2 * dm + h * dh + b];
            }
    }

    TensorF out({n, dm});
#ifdef _OPENMP
#pragma omp parallel num_threads(threads) if (threads > 1)
#endif
    {
        std::vector<float> head_out(dm);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (long long ii = 0; ii < (long long)n; ++ii) {
            const std::size_t i = std::size_t(ii);
            for (std::size_t h = 0; h < heads; ++h) {
                const float* qh = rq.data() + i * dm + h * dh;
                float den = 0.0f;
                for (std::size_t a = 0; a < dh; ++a) den += qh[a] * z[h * dh + a];
                den += eps;
                for (std::size_t b = 0; b < dh; ++b) {
                    float acc = 0.0f;
                    for (std::size_t a = 0; a < dh; ++a) acc += qh[a] * S[(h * dh + a) * dh + b];
                    head_out[h * dh + b] = acc / den;
                }
            }
            float* oi = out.data.data() + i * dm;
            for (std::size_t c = 0; c < dm; ++c) {
                float acc = 0.0f;
                for (std::size_t a = 0; a < dm; ++a) acc += head_out[a] * p.w_out.data[a * dm + c];
                oi[c] = acc;
            }
        }
    }
    (void)threads;
    return out;
}

}  // namespace lindit
