#include "lindit/quant.hpp"

#include <cmath>
#include <limits>

namespace lindit {

namespace {

constexpr double kSentinelScale = std::numeric_limits<double>::epsilon();

std::int8_t quantize_value(double x, double scale) {
    double q = std::nearbyint(x / scale);  // round half to even (default FP mode)
    if (q > 127.0) q = 127.0;
    if (q < -127.0) q = -127.0;
    return std::int8_t(q);
}

void check_finite_input(const Tensor& x) {
    for (auto v : x.data)
        if (!std::isfinite(v)) throw NumericError("quantize: non-finite input");
}

}  // namespace

QuantTensor quantize_per_token(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("quantize_per_token: expected rank-2 tensor");
    check_finite_input(x);
    const std::size_t n = x.dim(0), d = x.dim(1);
    QuantTensor q;
    q.shape = x.shape;
    q.axis = QuantAxis::per_token;
    q.values.resize(n * d);
    q.scales.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = 0.0;
        for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, std::abs(x.at(r, j)));
        if (mx == 0.0) {
            q.scales[r] = kSentinelScale;
            continue;  // values already zero
        }
        const double scale = mx / 127.0;
        q.scales[r] = scale;
        for (std::size_t j = 0; j < d; ++j) q.values[r * d + j] = quantize_value(x.at(r, j), scale);
    }
    return q;
}

QuantTensor quantize_per_channel(const Tensor& w) {
    if (w.rank() != 2) throw DimensionError("quantize_per_channel: expected rank-2 tensor");
    check_finite_input(w);
    const std::size_t k = w.dim(0), m = w.dim(1);
    QuantTensor q;
    q.shape = w.shape;
    q.axis = QuantAxis::per_channel;
    q.values.resize(k * m);
    q.scales.resize(m);
    for (std::size_t c = 0; c < m; ++c) {
        double mx = 0.0;
        for (std::size_t r = 0; r < k; ++r) mx = std::max(mx, std::abs(w.at(r, c)));
        if (mx == 0.0) {
            q.scales[c] = kSentinelScale;
            continue;
        }
        const double scale = mx / 127.0;
        q.scales[c] = scale;
        for (std::size_t r = 0; r < k; ++r) q.values[r * m + c] = quantize_value(w.at(r, c), scale);
    }
    return q;
}

Tensor dequantize(const QuantTensor& q) {
    Tensor t(q.shape);
    const std::size_t n = q.shape[0], d = q.shape[1];
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            const double s = q.axis == QuantAxis::per_token ? q.scales[r] : q.scales[c];
            t.at(r, c) = double(q.values[r * d + c]) * s;
        }
    return t;
}

Tensor qgemm(const QuantTensor& qa, const QuantTensor& qw) {
    if (qa.axis != QuantAxis::per_token || qw.axis != QuantAxis::per_channel)
        throw ConfigError("qgemm: expects per-token activations and per-channel weights");
    const std::size_t n = qa.shape[0], k = qa.shape[1];
    if (qw.shape[0] != k)
        throw DimensionError("qgemm: inner dimensions differ, " + shape_str(qa.shape) + " vs " +
                             shape_str(qw.shape));
    if (k > (std::size_t(1) << 15))
        throw NumericError("qgemm: inner dimension too large for int32 accumulation");
    const std::size_t m = qw.shape[1];
    Tensor out({n, m});
    for (std::size_t r = 0; r < n; ++r) {
        const std::int8_t* ar = qa.values.data() + r * k;
        for (std::size_t c = 0; c < m; ++c) {
            std::int32_t acc = 0;
            for (std::size_t p = 0; p < k; ++p)
                acc += std::int32_t(ar[p]) * std::int32_t(qw.values[p * m + c]);
            out.at(r, c) = double(acc) * qa.scales[r] * qw.scales[c];
        }
    }
    return out;
}

QuantModel quantize_model(const LinearDiTModel& m, const QuantPolicy& policy) {
    static const std::set<std::string> known_roles = {"linear", "linattn", "cross_kv",
                                                      "norm",   "conv",    "bias",
                                                      "scale"};
    for (const auto& role : policy.exempt_roles)
        if (!known_roles.count(role))
            throw ConfigError("quantize_model: unknown layer role in policy: " + role);
    QuantModel qm;
    qm.fp = m;
    qm.policy = policy;
    for (const auto& p : m.params) {
        if (p.value.rank() != 2) continue;
        const bool gemm_weight =
            p.role == "linear" || p.role == "linattn" || p.role == "cross_kv";
        if (!gemm_weight || policy.exempt_roles.count(p.role)) continue;
        qm.qweights.emplace(p.name, quantize_per_channel(p.value));
    }
    return qm;
}

namespace {

GemmHook make_hook(const QuantModel* qm,
                   std::map<std::string, std::vector<double>>* record) {
    return [qm, record](const std::string& layer, const Tensor& x, const Tensor& w) {
        Tensor y;
        if (qm) {
            auto it = qm->qweights.find(layer);
            if (it != qm->qweights.end()) {
                y = qgemm(quantize_per_token(x), it->second);
            }
        }
        if (y.numel() == 0) {
            // full-precision path
            const std::size_t n = x.dim(0), k = x.dim(1), m2 = w.dim(1);
            y = Tensor({n, m2});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = x.at(i, p);
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < m2; ++j) y.at(i, j) += av * w.at(p, j);
                }
        }
        if (record)
            (*record)[layer].insert((*record)[layer].end(), y.data.begin(), y.data.end());
        return y;
    };
}

}  // namespace

Tensor qforward(const QuantModel& qm, const Tensor& x_latent, double t, const Tensor& ctx,
                std::map<std::string, std::vector<double>>* layer_outputs) {
    GemmHook hook = make_hook(&qm, layer_outputs);
    ForwardOpts opts;
    opts.gemm = &hook;
    return forward(qm.fp, x_latent, t, ctx, opts);
}

Tensor fp_forward_recorded(const LinearDiTModel& m, const Tensor& x_latent, double t,
                           const Tensor& ctx,
                           std::map<std::string, std::vector<double>>* layer_outputs) {
    GemmHook hook = make_hook(nullptr, layer_outputs);
    ForwardOpts opts;
    opts.gemm = &hook;
    return forward(m, x_latent, t, ctx, opts);
}

namespace {

FidelityRow compare(const std::string& name, const std::vector<double>& a,
                    const std::vector<double>& b, bool quantized) {
    double dot = 0.0, na = 0.0, nb = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
        mx = std::max(mx, std::abs(a[i] - b[i]));
    }
    FidelityRow row;
    row.layer = name;
    row.cos_sim = (na == 0.0 && nb == 0.0) ? 1.0 : dot / std::max(std::sqrt(na * nb), 1e-300);
    row.max_abs_err = mx;
    row.quantized = quantized;
    return row;
}

}  // namespace

std::vector<FidelityRow> fidelity_report(const LinearDiTModel& m, const QuantModel& qm,
                                         const std::vector<Tensor>& probe_latents, double t,
                                         const Tensor& ctx) {
    std::map<std::string, std::vector<double>> fp_rec, q_rec;
    std::vector<double> fp_out, q_out;
    for (const auto& x : probe_latents) {
        Tensor yf = fp_forward_recorded(m, x, t, ctx, &fp_rec);
        Tensor yq = qforward(qm, x, t, ctx, &q_rec);
        fp_out.insert(fp_out.end(), yf.data.begin(), yf.data.end());
        q_out.insert(q_out.end(), yq.data.begin(), yq.data.end());
    }
    std::vector<FidelityRow> rows;
    for (const auto& [name, qt] : qm.qweights)
        rows.push_back(compare(name, fp_rec.at(name), q_rec.at(name), true));
    rows.push_back(compare("end_to_end", fp_out, q_out, false));
    return rows;
}

}  // namespace lindit
