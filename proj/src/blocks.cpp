#include "lindit/blocks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lindit/linattn.hpp"
#include "lindit/rng.hpp"

#include "json.hpp"

namespace lindit {

using nlohmann::json;

std::size_t token_count(const LatentGeometry& g) {
    const std::size_t pf = g.P * g.F;
    if (pf == 0 || g.H % pf != 0 || g.W % pf != 0)
        throw GeometryError("token_count: H=" + std::to_string(g.H) + " W=" + std::to_string(g.W) +
                            " not divisible by P*F=" + std::to_string(pf));
    return (g.H / pf) * (g.W / pf);
}

namespace {

std::vector<std::size_t> patchify_index(std::size_t C, std::size_t h, std::size_t w,
                                        std::size_t P) {
    if (P == 0 || h % P != 0 || w % P != 0)
        throw GeometryError("patchify: latent " + std::to_string(h) + "x" + std::to_string(w) +
                            " not divisible by patch size " + std::to_string(P));
    const std::size_t gh = h / P, gw = w / P;
    std::vector<std::size_t> idx;
    idx.reserve(C * h * w);
    for (std::size_t gi = 0; gi < gh; ++gi)
        for (std::size_t gj = 0; gj < gw; ++gj)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t pi = 0; pi < P; ++pi)
                    for (std::size_t pj = 0; pj < P; ++pj)
                        idx.push_back((c * h + gi * P + pi) * w + gj * P + pj);
    return idx;
}

std::vector<std::size_t> invert_index(const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> inv(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) inv[idx[i]] = i;
    return inv;
}

}  // namespace

Tensor patchify(const Tensor& latent, std::size_t P) {
    if (latent.rank() != 3) throw GeometryError("patchify: latent must be [CxHxW]");
    const std::size_t C = latent.dim(0), h = latent.dim(1), w = latent.dim(2);
    auto idx = patchify_index(C, h, w, P);
    Tensor out({(h / P) * (w / P), C * P * P});
    for (std::size_t i = 0; i < idx.size(); ++i) out.data[i] = latent.data[idx[i]];
    return out;
}

Tensor unpatchify(const Tensor& tokens, std::size_t C, std::size_t h, std::size_t w,
                  std::size_t P) {
    auto idx = patchify_index(C, h, w, P);
    if (tokens.numel() != idx.size())
        throw GeometryError("unpatchify: token tensor " + shape_str(tokens.shape) +
                            " does not match geometry");
    Tensor out({C, h, w});
    for (std::size_t i = 0; i < idx.size(); ++i) out.data[idx[i]] = tokens.data[i];
    return out;
}

Var patchify(Tape& t, const Var& latent, std::size_t P) {
    if (latent->val.rank() != 3) throw GeometryError("patchify: latent must be [CxHxW]");
    const std::size_t C = latent->val.dim(0), h = latent->val.dim(1), w = latent->val.dim(2);
    auto idx = patchify_index(C, h, w, P);
    return gather(t, latent, {(h / P) * (w / P), C * P * P}, std::move(idx));
}

Var unpatchify(Tape& t, const Var& tokens, std::size_t C, std::size_t h, std::size_t w,
               std::size_t P) {
    auto idx = invert_index(patchify_index(C, h, w, P));
    if (tokens->val.numel() != idx.size())
        throw GeometryError("unpatchify: token tensor " + shape_str(tokens->val.shape) +
                            " does not match geometry");
    return gather(t, tokens, {C, h, w}, std::move(idx));
}

Tensor& LinearDiTModel::p(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("model: no parameter named " + name);
    return params[it->second].value;
}
const Tensor& LinearDiTModel::p(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConfigError("model: no parameter named " + name);
    return params[it->second].value;
}

namespace {

void add_param(LinearDiTModel& m, const std::string& name, const std::string& role, Tensor v) {
    m.index[name] = m.params.size();
    m.params.push_back({name, role, std::move(v)});
}

void validate_config(const LinearDiTConfig& cfg, const LatentGeometry& g) {
    if (cfg.width == 0 || cfg.depth == 0 || cfg.ffn_dim == 0 || cfg.cond_dim == 0)
        throw ConfigError("model config: width, depth, ffn_dim, cond_dim must be positive");
    if (cfg.heads == 0 || cfg.width % cfg.heads != 0)
        throw ConfigError("model config: width " + std::to_string(cfg.width) +
                          " not divisible by heads " + std::to_string(cfg.heads));
    if (cfg.width % 2 != 0) throw ConfigError("model config: width must be even");
    token_count(g);  // throws on bad geometry
}

}  // namespace

LinearDiTModel build_model(const LinearDiTConfig& cfg, const LatentGeometry& g,
                           std::uint64_t seed) {
    validate_config(cfg, g);
    LinearDiTModel m;
    m.cfg = cfg;
    m.geom = g;
    Rng rng(seed);
    const std::size_t wdt = cfg.width, ffn = cfg.ffn_dim, pd = g.C * g.P * g.P;
    const double std0 = 0.02;
    auto tn = [&](Shape s) { return rng.trunc_normal_tensor(std::move(s), std0); };

    add_param(m, "patch_embed.w", "linear", tn({pd, wdt}));
    add_param(m, "patch_embed.b", "bias", Tensor::zeros({wdt}));
    add_param(m, "time_mlp.w1", "linear", tn({wdt, wdt}));
    add_param(m, "time_mlp.b1", "bias", Tensor::zeros({wdt}));
    add_param(m, "time_mlp.w2", "linear", tn({wdt, wdt}));
    add_param(m, "time_mlp.b2", "bias", Tensor::zeros({wdt}));
    add_param(m, "text.gamma", "norm", Tensor::full({cfg.cond_dim}, 1.0));
    add_param(m, "text.scale", "scale", Tensor::scalar(0.01));
    add_param(m, "ctx_proj.w", "linear", tn({cfg.cond_dim, wdt}));
    add_param(m, "ctx_proj.b", "bias", Tensor::zeros({wdt}));

    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        add_param(m, pre + "attn.norm_gamma", "norm", Tensor::full({wdt}, 1.0));
        add_param(m, pre + "attn.w_qkv", "linattn", tn({wdt, 3 * wdt}));
        add_param(m, pre + "attn.w_out", "linattn", tn({wdt, wdt}));
        add_param(m, pre + "cross.norm_gamma", "norm", Tensor::full({wdt}, 1.0));
        add_param(m, pre + "cross.w_q", "linear", tn({wdt, wdt}));
        add_param(m, pre + "cross.w_k", "cross_kv", tn({wdt, wdt}));
        add_param(m, pre + "cross.w_v", "cross_kv", tn({wdt, wdt}));
        add_param(m, pre + "cross.w_out", "linear", tn({wdt, wdt}));
        add_param(m, pre + "ffn.norm_gamma", "norm", Tensor::full({wdt}, 1.0));
        add_param(m, pre + "ffn.w_expand", "linear", tn({wdt, 2 * ffn}));
        add_param(m, pre + "ffn.b_expand", "bias", Tensor::zeros({2 * ffn}));
        add_param(m, pre + "ffn.conv_w", "conv", tn({2 * ffn, 3, 3}));
        add_param(m, pre + "ffn.w_project", "linear", tn({ffn, wdt}));
        add_param(m, pre + "ffn.b_project", "bias", Tensor::zeros({wdt}));
        // adaLN modulation head, zero-initialized
        add_param(m, pre + "mod.w", "linear", Tensor::zeros({wdt, 9 * wdt}));
        add_param(m, pre + "mod.b", "bias", Tensor::zeros({9 * wdt}));
    }
    add_param(m, "final.norm_gamma", "norm", Tensor::full({wdt}, 1.0));
    add_param(m, "head.w", "linear", tn({wdt, pd}));
    add_param(m, "head.b", "bias", Tensor::zeros({pd}));
    return m;
}

std::size_t param_count(const LinearDiTModel& m) {
    std::size_t n = 0;
    for (const auto& p : m.params) n += p.value.numel();
    return n;
}

Tensor timestep_frequencies(double t, std::size_t width) {
    if (t < 0.0 || t > 1.0) throw std::domain_error("timestep: t outside [0,1]");
    if (width % 2 != 0) throw ConfigError("timestep_frequencies: width must be even");
    const std::size_t half = width / 2;
    Tensor e({width});
    const double ts = t * 1000.0;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e.data[2 * i] = std::sin(ts * freq);
        e.data[2 * i + 1] = std::cos(ts * freq);
    }
    return e;
}

Tensor timestep_embed(const LinearDiTModel& m, double t) {
    Tape tape;
    Tensor f = timestep_frequencies(t, m.cfg.width);
    Var x = tape.leaf(Tensor({1, m.cfg.width}, f.data));
    Var h = silu(tape, row_add(tape, matmul(tape, x, tape.leaf(m.p("time_mlp.w1"))),
                               tape.leaf(m.p("time_mlp.b1"))));
    Var o = row_add(tape, matmul(tape, h, tape.leaf(m.p("time_mlp.w2"))),
                    tape.leaf(m.p("time_mlp.b2")));
    return Tensor({m.cfg.width}, o->val.data);
}

Var condition_text(Tape& t, const Var& emb, const Var& gamma, const Var& sc, double eps) {
    return scalar_mul(t, rmsnorm(t, emb, gamma, eps), sc);
}

namespace {

using LinOp = std::function<Var(const std::string&, const Var&)>;

std::vector<std::size_t> tokens_to_grid_index(std::size_t ht, std::size_t wt, std::size_t ch) {
    // grid[(c*ht + i)*wt + j] = tokens[(i*wt + j)*ch + c]
    std::vector<std::size_t> idx(ht * wt * ch);
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < ht; ++i)
            for (std::size_t j = 0; j < wt; ++j)
                idx[(c * ht + i) * wt + j] = (i * wt + j) * ch + c;
    return idx;
}

Var mix_ffn_impl(Tape& t, const Var& x, std::size_t ht, std::size_t wt, const LinOp& lin,
                 const std::string& name_expand, const Var& b_expand, const Var& conv_w,
                 const std::string& name_project, const Var& b_project) {
    const std::size_t n = x->val.dim(0);
    if (n != ht * wt)
        throw GeometryError("mix_ffn: token count " + std::to_string(n) + " != grid " +
                            std::to_string(ht) + "x" + std::to_string(wt));
    Var h = row_add(t, lin(name_expand, x), b_expand);
    const std::size_t ch = h->val.dim(1);  // 2*ffn_dim
    Var grid = gather(t, h, {ch, ht, wt}, tokens_to_grid_index(ht, wt, ch));
    Var conv = depthwise_conv3x3(t, grid, conv_w);
    Var back = gather(t, conv, {n, ch}, invert_index(tokens_to_grid_index(ht, wt, ch)));
    const std::size_t ffn = ch / 2;
    Var a = slice_cols(t, back, 0, ffn);
    Var g = slice_cols(t, back, ffn, ch);
    Var y = mul(t, a, silu(t, g));
    return row_add(t, lin(name_project, y), b_project);
}

Var cross_attention_impl(Tape& t, const Var& x, const Var& ctx, std::size_t heads,
                         const LinOp& lin, const std::string& nq, const std::string& nk,
                         const std::string& nv, const std::string& nout) {
    if (ctx->val.dim(0) == 0) throw DataError("cross_attention: empty context (L=0)");
    const std::size_t wdt = x->val.dim(1);
    if (ctx->val.dim(1) != wdt)
        throw DimensionError("cross_attention: ctx width " + std::to_string(ctx->val.dim(1)) +
                             " != " + std::to_string(wdt));
    if (heads == 0 || wdt % heads != 0) throw ConfigError("cross_attention: bad head count");
    const std::size_t dh = wdt / heads;
    Var q = lin(nq, x), k = lin(nk, ctx), v = lin(nv, ctx);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice_cols(t, q, h * dh, (h + 1) * dh);
        Var kh = slice_cols(t, k, h * dh, (h + 1) * dh);
        Var vh = slice_cols(t, v, h * dh, (h + 1) * dh);
        Var sc = scale(t, matmul(t, qh, transpose(t, kh)), 1.0 / std::sqrt(double(dh)));
        outs.push_back(matmul(t, softmax_rows(t, sc), vh));
    }
    return lin(nout, concat_cols(t, outs));
}

}  // namespace

Var mix_ffn(Tape& t, const Var& x, std::size_t ht, std::size_t wt, const Var& w_expand,
            const Var& b_expand, const Var& conv_w, const Var& w_project, const Var& b_project) {
    LinOp lin = [&](const std::string& name, const Var& in) {
        return matmul(t, in, name == "expand" ? w_expand : w_project);
    };
    return mix_ffn_impl(t, x, ht, wt, lin, "expand", b_expand, conv_w, "project", b_project);
}

Var cross_attention(Tape& t, const Var& x, const Var& ctx, std::size_t heads, const Var& w_q,
                    const Var& w_k, const Var& w_v, const Var& w_out) {
    LinOp lin = [&](const std::string& name, const Var& in) {
        const Var& w = name == "q" ? w_q : name == "k" ? w_k : name == "v" ? w_v : w_out;
        return matmul(t, in, w);
    };
    return cross_attention_impl(t, x, ctx, heads, lin, "q", "k", "v", "out");
}

Var forward(Tape& tape, const LinearDiTModel& m, const Var& x_latent, double t, const Var& ctx,
            const ForwardOpts& opts) {
    if (t < 0.0 || t > 1.0) throw std::domain_error("forward: t outside [0,1]");
    const auto& g = m.geom;
    if (x_latent->val.rank() != 3 || x_latent->val.dim(0) != g.C ||
        x_latent->val.dim(1) != g.latent_h() || x_latent->val.dim(2) != g.latent_w())
        throw GeometryError("forward: latent shape " + shape_str(x_latent->val.shape) +
                            " does not match geometry");
    if (ctx->val.dim(0) == 0) throw DataError("forward: empty conditioning context");
    if (ctx->val.dim(1) != m.cfg.cond_dim)
        throw DimensionError("forward: ctx dim " + std::to_string(ctx->val.dim(1)) +
                             " != cond_dim " + std::to_string(m.cfg.cond_dim));

    const std::size_t wdt = m.cfg.width;
    const std::size_t ht = g.tokens_h(), wt = g.tokens_w();

    auto pvar = [&](const std::string& name) -> Var {
        if (opts.params) {
            auto it = opts.params->find(name);
            if (it != opts.params->end()) return it->second;
        }
        return tape.leaf(m.p(name));
    };
    LinOp lin = [&](const std::string& name, const Var& in) -> Var {
        if (opts.gemm) return tape.leaf((*opts.gemm)(name, in->val, m.p(name)));
        return matmul(tape, in, pvar(name));
    };

    // tokens and input embedding
    Var x = row_add(tape, lin("patch_embed.w", patchify(tape, x_latent, g.P)),
                    pvar("patch_embed.b"));

    // timestep embedding MLP
    Tensor freqs = timestep_frequencies(t, wdt);
    Var tf = tape.leaf(Tensor({1, wdt}, freqs.data));
    Var th = silu(tape, row_add(tape, lin("time_mlp.w1", tf), pvar("time_mlp.b1")));
    Var temb = row_add(tape, lin("time_mlp.w2", th), pvar("time_mlp.b2"));
    Var tact = silu(tape, temb);

    // conditioned, width-projected context
    Var ctx_cond = condition_text(tape, ctx, pvar("text.gamma"), pvar("text.scale"), opts.eps);
    Var ctxp = row_add(tape, lin("ctx_proj.w", ctx_cond), pvar("ctx_proj.b"));

    Var ones_row = tape.leaf(Tensor::full({1, wdt}, 1.0));

    for (std::size_t b = 0; b < m.cfg.depth; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        Var mod = row_add(tape, lin(pre + "mod.w", tact), pvar(pre + "mod.b"));
        auto mslice = [&](std::size_t k) { return slice_cols(tape, mod, k * wdt, (k + 1) * wdt); };

        auto sub = [&](std::size_t base, const std::string& gamma_name,
                       const std::function<Var(const Var&)>& fn) {
            Var shift = mslice(base), sc = mslice(base + 1), gate = mslice(base + 2);
            Var xn = rmsnorm(tape, x, pvar(gamma_name), opts.eps);
            Var xm = row_add(tape, row_mul(tape, xn, add(tape, sc, ones_row)), shift);
            x = add(tape, x, row_mul(tape, fn(xm), gate));
        };

        sub(0, pre + "attn.norm_gamma", [&](const Var& xm) {
            const std::size_t dm = wdt, dh = dm / m.cfg.heads;
            Var qkv = lin(pre + "attn.w_qkv", xm);
            std::vector<Var> heads_out;
            for (std::size_t h = 0; h < m.cfg.heads; ++h) {
                Var qh = slice_cols(tape, qkv, h * dh, (h + 1) * dh);
                Var kh = slice_cols(tape, qkv, dm + h * dh, dm + (h + 1) * dh);
                Var vh = slice_cols(tape, qkv, 2 * dm + h * dh, 2 * dm + (h + 1) * dh);
                heads_out.push_back(linear_attention_streaming(tape, qh, kh, vh, opts.eps));
            }
            return lin(pre + "attn.w_out", concat_cols(tape, heads_out));
        });

        sub(3, pre + "cross.norm_gamma", [&](const Var& xm) {
            return cross_attention_impl(tape, xm, ctxp, m.cfg.heads, lin, pre + "cross.w_q",
                                        pre + "cross.w_k", pre + "cross.w_v", pre + "cross.w_out");
        });

        sub(6, pre + "ffn.norm_gamma", [&](const Var& xm) {
            return mix_ffn_impl(tape, xm, ht, wt, lin, pre + "ffn.w_expand",
                                pvar(pre + "ffn.b_expand"), pvar(pre + "ffn.conv_w"),
                                pre + "ffn.w_project", pvar(pre + "ffn.b_project"));
        });
    }

    Var xf = rmsnorm(tape, x, pvar("final.norm_gamma"), opts.eps);
    Var out = row_add(tape, lin("head.w", xf), pvar("head.b"));
    return unpatchify(tape, out, g.C, g.latent_h(), g.latent_w(), g.P);
}

Tensor forward(const LinearDiTModel& m, const Tensor& x_latent, double t, const Tensor& ctx,
               const ForwardOpts& opts) {
    Tape tape;
    Var o = forward(tape, m, tape.leaf(x_latent), t, tape.leaf(ctx), opts);
    return o->val;
}

std::vector<std::string> gemm_layer_names(const LinearDiTModel& m) {
    std::vector<std::string> names;
    for (const auto& p : m.params) {
        if (p.value.rank() != 2) continue;
        if (p.role == "linear" || p.role == "linattn" || p.role == "cross_kv")
            names.push_back(p.name);
    }
    return names;
}

std::string fnv1a_hash(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return std::string(buf);
}

void save_checkpoint(const LinearDiTModel& m, const std::string& path,
                     const std::string& config_json) {
    json manifest;
    manifest["version"] = 1;
    manifest["config"] = {{"width", m.cfg.width},     {"depth", m.cfg.depth},
                          {"ffn_dim", m.cfg.ffn_dim}, {"heads", m.cfg.heads},
                          {"cond_dim", m.cfg.cond_dim}};
    manifest["geometry"] = {
        {"H", m.geom.H}, {"W", m.geom.W}, {"F", m.geom.F}, {"C", m.geom.C}, {"P", m.geom.P}};
    manifest["run_config"] = config_json;
    manifest["config_hash"] = fnv1a_hash(config_json);
    json plist = json::array();
    std::size_t offset = 0;
    for (const auto& p : m.params) {
        plist.push_back(
            {{"name", p.name}, {"role", p.role}, {"shape", p.value.shape}, {"offset", offset}});
        offset += p.value.numel();
    }
    manifest["params"] = plist;
    manifest["dtype"] = "f64le";

    std::ofstream jf(path + ".json");
    if (!jf) throw DataError("save_checkpoint: cannot open " + path + ".json");
    jf << manifest.dump(2) << "\n";

    std::ofstream bf(path + ".bin", std::ios::binary);
    if (!bf) throw DataError("save_checkpoint: cannot open " + path + ".bin");
    for (const auto& p : m.params)
        bf.write(reinterpret_cast<const char*>(p.value.data.data()),
                 std::streamsize(p.value.numel() * sizeof(double)));
}

LinearDiTModel load_checkpoint(const std::string& path) {
    std::ifstream jf(path + ".json");
    if (!jf) throw DataError("load_checkpoint: cannot open " + path + ".json");
    json manifest = json::parse(jf, nullptr, false);
    if (manifest.is_discarded()) throw DataError("load_checkpoint: malformed manifest");
    LinearDiTConfig cfg{manifest["config"]["width"], manifest["config"]["depth"],
                        manifest["config"]["ffn_dim"], manifest["config"]["heads"],
                        manifest["config"]["cond_dim"]};
    LatentGeometry g{manifest["geometry"]["H"], manifest["geometry"]["W"],
                     manifest["geometry"]["F"], manifest["geometry"]["C"],
                     manifest["geometry"]["P"]};
    LinearDiTModel m;
    m.cfg = cfg;
    m.geom = g;
    std::ifstream bf(path + ".bin", std::ios::binary);
    if (!bf) throw DataError("load_checkpoint: cannot open " + path + ".bin");
    for (const auto& pj : manifest["params"]) {
        Shape s = pj["shape"].get<Shape>();
        Tensor v(s);
        bf.read(reinterpret_cast<char*>(v.data.data()),
                std::streamsize(v.numel() * sizeof(double)));
        if (!bf) throw DataError("load_checkpoint: truncated binary blob");
        add_param(m, pj["name"], pj["role"], std::move(v));
    }
    return m;
}

std::string checkpoint_config_hash(const std::string& path) {
    std::ifstream jf(path + ".json");
    if (!jf) throw DataError("checkpoint_config_hash: cannot open " + path + ".json");
    json manifest = json::parse(jf);
    return manifest["config_hash"];
}

}  // namespace lindit
