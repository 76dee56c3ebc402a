#include "lindit/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lindit/captions.hpp"
#include "lindit/linattn.hpp"
#include "lindit/quant.hpp"
#include "lindit/solver.hpp"

#include "json.hpp"

namespace lindit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt_g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f << text;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["task"] = task;
    j["model"] = {{"width", model.width},
                  {"depth", model.depth},
                  {"ffn_dim", model.ffn_dim},
                  {"heads", model.heads},
                  {"cond_dim", model.cond_dim}};
    j["geometry"] = {{"H", geom.H}, {"W", geom.W}, {"F", geom.F}, {"C", geom.C}, {"P", geom.P}};
    j["schedule"] = {{"s", shift}, {"t_min", t_min}, {"steps", steps}, {"objective", objective}};
    j["optimizer"] = {{"kind", opt_kind}, {"lr", lr}, {"iters", iters}, {"batch", batch}};
    j["dataset"] = dataset;
    j["out_dir"] = out_dir;
    j["bench"] = {{"n_list", bench_n}, {"d", bench_d}, {"variants", variants}, {"reps", reps}};
    j["sample"] = {{"sampler", sampler}, {"step_list", step_list}, {"draws", draws},
                   {"oracle", oracle},   {"mu0", mu0},             {"sigma0", sigma0},
                   {"checkpoint", checkpoint}};
    j["captions"] = {{"path", captions_path}, {"tau", tau}, {"draws", caption_draws}};
    j["quantize"] = {{"exempt_all", exempt_all}};
    return j.dump(2);
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw DataError("run config: malformed JSON");
    RunConfig c;
    auto get = [&](const json& o, const char* k, auto def) {
        using T = decltype(def);
        return o.contains(k) ? o[k].get<T>() : def;
    };
    c.seed = get(j, "seed", c.seed);
    c.task = get(j, "task", c.task);
    if (j.contains("model")) {
        const auto& m = j["model"];
        c.model = {get(m, "width", c.model.width), get(m, "depth", c.model.depth),
                   get(m, "ffn_dim", c.model.ffn_dim), get(m, "heads", c.model.heads),
                   get(m, "cond_dim", c.model.cond_dim)};
    }
    if (j.contains("geometry")) {
        const auto& g = j["geometry"];
        c.geom = {get(g, "H", c.geom.H), get(g, "W", c.geom.W), get(g, "F", c.geom.F),
                  get(g, "C", c.geom.C), get(g, "P", c.geom.P)};
    }
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        c.shift = get(s, "s", c.shift);
        c.t_min = get(s, "t_min", c.t_min);
        c.steps = get(s, "steps", c.steps);
        c.objective = get(s, "objective", c.objective);
    }
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        c.opt_kind = get(o, "kind", c.opt_kind);
        c.lr = get(o, "lr", c.lr);
        c.iters = get(o, "iters", c.iters);
        c.batch = get(o, "batch", c.batch);
    }
    c.dataset = get(j, "dataset", c.dataset);
    c.out_dir = get(j, "out_dir", c.out_dir);
    if (j.contains("bench")) {
        const auto& b = j["bench"];
        c.bench_n = get(b, "n_list", c.bench_n);
        c.bench_d = get(b, "d", c.bench_d);
        c.variants = get(b, "variants", c.variants);
        c.reps = get(b, "reps", c.reps);
    }
    if (j.contains("sample")) {
        const auto& s = j["sample"];
        c.sampler = get(s, "sampler", c.sampler);
        c.step_list = get(s, "step_list", c.step_list);
        c.draws = get(s, "draws", c.draws);
        c.oracle = get(s, "oracle", c.oracle);
        c.mu0 = get(s, "mu0", c.mu0);
        c.sigma0 = get(s, "sigma0", c.sigma0);
        c.checkpoint = get(s, "checkpoint", c.checkpoint);
    }
    if (j.contains("captions")) {
        const auto& s = j["captions"];
        c.captions_path = get(s, "path", c.captions_path);
        c.tau = get(s, "tau", c.tau);
        c.caption_draws = get(s, "draws", c.caption_draws);
    }
    if (j.contains("quantize")) c.exempt_all = get(j["quantize"], "exempt_all", c.exempt_all);
    return c;
}

Tensor draw_dataset_sample(const std::string& name, const LatentGeometry& g, Rng& rng) {
    if (name == "eight_gaussians2d") {
        const std::size_t k = rng.below(8);
        const double a = double(k) * 0.7853981633974483;  // pi/4
        Tensor x({g.C, g.latent_h(), g.latent_w()});
        if (x.numel() != 2) throw GeometryError("eight_gaussians2d needs a 2-value latent");
        x.data[0] = 2.0 * std::cos(a) + 0.2 * rng.normal();
        x.data[1] = 2.0 * std::sin(a) + 0.2 * rng.normal();
        return x;
    }
    if (name == "checkerboard2d") {
        // 4x4 cells over [-2,2]^2, points only on cells with even parity
        Tensor x({g.C, g.latent_h(), g.latent_w()});
        if (x.numel() != 2) throw GeometryError("checkerboard2d needs a 2-value latent");
        std::size_t ci = rng.below(4), cj;
        do {
            cj = rng.below(4);
        } while ((ci + cj) % 2 != 0);
        x.data[0] = -2.0 + double(ci) + rng.uniform();
        x.data[1] = -2.0 + double(cj) + rng.uniform();
        return x;
    }
    if (name == "bright_square_16") {
        if (g.C != 1 || g.latent_h() != 16 || g.latent_w() != 16)
            throw GeometryError("bright_square_16 needs a 1x16x16 latent");
        Tensor x = Tensor::full({1, 16, 16}, 0.05);
        const std::size_t size = 3 + rng.below(6);
        const std::size_t i0 = rng.below(16 - size + 1), j0 = rng.below(16 - size + 1);
        for (std::size_t i = i0; i < i0 + size; ++i)
            for (std::size_t j = j0; j < j0 + size; ++j) x.data[i * 16 + j] = 0.9;
        return x;
    }
    throw ConfigError("unknown dataset: " + name);
}

double energy_distance(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) throw DataError("energy_distance: empty sample set");
    auto dist = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
        return std::sqrt(s);
    };
    double dab = 0.0, daa = 0.0, dbb = 0.0;
    for (const auto& x : a)
        for (const auto& y : b) dab += dist(x, y);
    dab /= double(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) daa += dist(a[i], a[j]);
    daa *= 2.0 / double(a.size() * a.size());
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = i + 1; j < b.size(); ++j) dbb += dist(b[i], b[j]);
    dbb *= 2.0 / double(b.size() * b.size());
    return 2.0 * dab - daa - dbb;
}

void write_pgm(const Tensor& img, const std::string& path) {
    if (img.rank() != 3 || img.dim(0) != 1) throw DataError("write_pgm: expected [1xHxW]");
    const std::size_t h = img.dim(1), w = img.dim(2);
    std::ofstream f(path);
    if (!f) throw DataError("write_pgm: cannot open " + path);
    f << "P2\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const double v = std::clamp(img.data[i * w + j], 0.0, 1.0);
            f << int(std::lround(v * 255.0)) << (j + 1 < w ? " " : "\n");
        }
    }
}

// ---------------- training ----------------

namespace {

struct Adam {
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Tensor> m, v;
    std::size_t step_count = 0;

    explicit Adam(const LinearDiTModel& model, double lr_) : lr(lr_) {
        for (const auto& p : model.params) {
            m.push_back(Tensor::zeros(p.value.shape));
            v.push_back(Tensor::zeros(p.value.shape));
        }
    }
    void step(LinearDiTModel& model, const std::vector<Tensor>& grads) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(b1, double(step_count));
        const double bc2 = 1.0 - std::pow(b2, double(step_count));
        for (std::size_t k = 0; k < model.params.size(); ++k) {
            Tensor& p = model.params[k].value;
            for (std::size_t i = 0; i < p.numel(); ++i) {
                const double g = grads[k].data[i];
                m[k].data[i] = b1 * m[k].data[i] + (1.0 - b1) * g;
                v[k].data[i] = b2 * v[k].data[i] + (1.0 - b2) * g * g;
                p.data[i] -= lr * (m[k].data[i] / bc1) / (std::sqrt(v[k].data[i] / bc2) + eps);
            }
        }
    }
};

Tensor default_ctx(const LinearDiTConfig& cfg) { return Tensor::full({1, cfg.cond_dim}, 1.0); }

}  // namespace

TrainResult run_training(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    if (cfg.objective != "fm" && cfg.objective != "ddpm")
        throw ConfigError("train: objective must be fm or ddpm, got " + cfg.objective);
    if (cfg.opt_kind != "adam") throw ConfigError("train: only the adam optimizer is available");

    LinearDiTModel model = build_model(cfg.model, cfg.geom, cfg.seed);
    Adam adam(model, cfg.lr);
    Rng rng(cfg.seed ^ 0x7261696e);  // independent stream for data/noise/t
    const Tensor ctx = default_ctx(cfg.model);
    FlowSchedule fsched(cfg.shift);
    DdpmSchedule dsched;

    std::ofstream log(out_dir + "/train_log.csv");
    if (!log) throw DataError("train: cannot open log");
    log << "iter,loss,grad_norm,wall_ms\n";

    TrainResult result;
    const std::string ckpt = out_dir + "/checkpoint";
    for (std::size_t it = 0; it < cfg.iters; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        TrainBatch batch;
        batch.ctx = ctx;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            batch.x0.push_back(draw_dataset_sample(cfg.dataset, cfg.geom, rng));
            Tensor e(batch.x0.back().shape);
            for (auto& v : e.data) v = rng.normal();
            batch.eps.push_back(std::move(e));
            batch.t.push_back(rng.uniform());
        }

        Tape tape;
        std::unordered_map<std::string, Var> bound;
        for (const auto& p : model.params) bound[p.name] = tape.leaf(p.value, true);
        ForwardOpts opts;
        opts.params = &bound;

        Var loss;
        try {
            loss = cfg.objective == "fm" ? fm_loss(tape, model, batch, fsched, opts)
                                         : ddpm_loss(tape, model, batch, dsched, opts);
        } catch (const NumericError& e) {
            save_checkpoint(model, ckpt, cfg.to_json());  // last good state
            throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(it));
        }
        tape.backward(loss);

        std::vector<Tensor> grads;
        double gn2 = 0.0;
        for (const auto& p : model.params) {
            Tensor g = bound[p.name]->grad.numel() ? bound[p.name]->grad
                                                   : Tensor::zeros(p.value.shape);
            for (auto v : g.data) gn2 += v * v;
            grads.push_back(std::move(g));
        }
        adam.step(model, grads);

        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        log << it << "," << fmt_g17(loss->val.data[0]) << "," << fmt_g17(std::sqrt(gn2)) << ","
            << fmt_g17(ms) << "\n";
        result.losses.push_back(loss->val.data[0]);
    }
    save_checkpoint(model, ckpt, cfg.to_json());
    result.checkpoint_path = ckpt;
    return result;
}

// ---------------- commands ----------------

void cmd_bench_attn(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_text(cfg.out_dir + "/config.json", cfg.to_json());
    for (const auto& v : cfg.variants)
        if (v != "naive" && v != "streaming" && v != "fused" && v != "softmax")
            throw ConfigError("bench-attn: unknown variant " + v);

    std::ofstream out(cfg.out_dir + "/attn_bench.csv");
    out << "variant,N,d,median_ms,allocs_bytes\n";
    Rng rng(cfg.seed);
    const std::size_t d = cfg.bench_d;
    for (std::size_t n : cfg.bench_n) {
        TensorF q({n, d}), k({n, d}), v({n, d});
        for (auto& x : q.data) x = float(rng.normal());
        for (auto& x : k.data) x = float(rng.normal());
        for (auto& x : v.data) x = float(rng.normal());
        MultiHeadParamsF mh;
        mh.heads = 1;
        mh.w_qkv = TensorF({d, 3 * d});
        mh.w_out = TensorF({d, d});
        for (auto& x : mh.w_qkv.data) x = float(rng.normal() * 0.05);
        for (auto& x : mh.w_out.data) x = float(rng.normal() * 0.05);

        // correctness piggyback: streaming must match the naive oracle
        {
            KernelStats s1, s2;
            TensorF a = linattn_naive_f32(q, k, v, 1e-6f, &s1);
            TensorF b = linattn_streaming_f32(q, k, v, 1e-6f, 1, &s2);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < a.numel(); ++i) {
                num += double(a.data[i] - b.data[i]) * double(a.data[i] - b.data[i]);
                den += double(a.data[i]) * double(a.data[i]);
            }
            if (std::sqrt(num / std::max(den, 1e-30)) > 1e-4)
                throw NumericError("bench-attn: streaming diverged from the naive oracle");
        }

        for (const auto& variant : cfg.variants) {
            std::vector<double> times;
            KernelStats stats;
            volatile float sink = 0.0f;
            for (std::size_t r = 0; r < std::max<std::size_t>(cfg.reps, 5); ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                TensorF o;
                if (variant == "naive")
                    o = linattn_naive_f32(q, k, v, 1e-6f, &stats);
                else if (variant == "streaming")
                    o = linattn_streaming_f32(q, k, v, 1e-6f, 1, &stats);
                else if (variant == "softmax")
                    o = softmax_attention_f32(q, k, v, 1, &stats);
                else
                    o = fused_multihead_f32(q, mh, 1e-6f, 1, &stats);
                const auto t1 = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
                sink = sink + o.data[0];
            }
            (void)sink;
            out << variant << "," << n << "," << d << "," << fmt_g17(median(times)) << ","
                << stats.aux_bytes << "\n";
        }
    }
}

void cmd_train(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_text(cfg.out_dir + "/config.json", cfg.to_json());
    run_training(cfg, cfg.out_dir);
}

void cmd_sample(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_text(cfg.out_dir + "/config.json", cfg.to_json());
    if (cfg.sampler != "euler" && cfg.sampler != "dpm")
        throw ConfigError("sample: sampler must be euler or dpm");
    if (cfg.step_list.empty()) throw ConfigError("sample: empty step list");
    FlowSchedule sched(cfg.shift);

    if (cfg.oracle) {
        const double mu0 = cfg.mu0, s0 = cfg.sigma0;
        VelocityField field = [&, mu0, s0](const Tensor& x, double t) {
            Tensor v(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                v.data[i] = gaussian_oracle_velocity(x.data[i], t, mu0, s0, sched);
            return v;
        };
        // report table against the RK4 reference
        auto rows = sampler_report(field, sched, cfg.step_list, std::min<std::size_t>(cfg.draws, 256),
                                   cfg.seed, cfg.t_min);
        std::ofstream rep(cfg.out_dir + "/sample_report.csv");
        rep << "sampler,steps,shift,metric_name,metric_value,wall_ms\n";
        for (const auto& r : rows)
            rep << r.sampler << "," << r.steps << "," << fmt_g17(r.shift) << "," << r.metric_name
                << "," << fmt_g17(r.metric_value) << "," << fmt_g17(r.wall_ms) << "\n";

        // sampled points with the configured sampler at the first step count
        Rng rng(cfg.seed);
        const auto grid = timestep_grid(cfg.step_list.front(), cfg.t_min);
        std::ofstream pts(cfg.out_dir + "/samples.csv");
        pts << "x0\n";
        for (std::size_t i = 0; i < cfg.draws; ++i) {
            Tensor xT = rng.normal_tensor({1});
            Tensor x = cfg.sampler == "euler" ? flow_euler_sample(field, xT, grid, sched)
                                              : flow_dpm_solver_sample(field, xT, grid, sched);
            pts << fmt_g17(x.data[0]) << "\n";
        }
        return;
    }

    if (cfg.checkpoint.empty()) throw ConfigError("sample: missing checkpoint path");
    LinearDiTModel model = load_checkpoint(cfg.checkpoint);
    const Tensor ctx = default_ctx(model.cfg);
    VelocityField field = [&](const Tensor& x, double t) {
        return forward(model, x, std::clamp(t, 0.0, 1.0), ctx);
    };

    Rng rng(cfg.seed);
    const bool is_2d = model.geom.C == 2 && model.geom.latent_h() == 1 && model.geom.latent_w() == 1;
    std::ofstream rep(cfg.out_dir + "/sample_report.csv");
    rep << "sampler,steps,shift,metric_name,metric_value,wall_ms\n";

    std::vector<std::vector<double>> held_out;
    if (is_2d) {
        Rng drng(cfg.seed ^ 0x64617461);
        for (std::size_t i = 0; i < 2048; ++i) {
            Tensor p = draw_dataset_sample(cfg.dataset, model.geom, drng);
            held_out.push_back({p.data[0], p.data[1]});
        }
    }

    bool wrote_points = false;
    for (std::size_t M : cfg.step_list) {
        const auto grid = timestep_grid(M, cfg.t_min);
        const auto t0 = std::chrono::steady_clock::now();
        Rng nrng(cfg.seed ^ 0x6e6f697365);
        std::vector<std::vector<double>> pts;
        std::vector<Tensor> imgs;
        for (std::size_t i = 0; i < cfg.draws; ++i) {
            Tensor xT(Shape{model.geom.C, model.geom.latent_h(), model.geom.latent_w()});
            for (auto& v : xT.data) v = nrng.normal();
            Tensor x = cfg.sampler == "euler" ? flow_euler_sample(field, xT, grid, sched)
                                              : flow_dpm_solver_sample(field, xT, grid, sched);
            if (is_2d)
                pts.push_back({x.data[0], x.data[1]});
            else
                imgs.push_back(std::move(x));
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (is_2d) {
            rep << cfg.sampler << "," << M << "," << fmt_g17(cfg.shift) << ",energy_distance,"
                << fmt_g17(energy_distance(pts, held_out)) << "," << fmt_g17(ms) << "\n";
            if (!wrote_points) {
                std::ofstream pf(cfg.out_dir + "/samples.csv");
                pf << "x,y\n";
                for (const auto& p : pts) pf << fmt_g17(p[0]) << "," << fmt_g17(p[1]) << "\n";
                wrote_points = true;
            }
        } else {
            rep << cfg.sampler << "," << M << "," << fmt_g17(cfg.shift)
                << ",mean_pixel,";
            double mp = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < imgs.size(); ++i) {
                for (auto v : imgs[i].data) {
                    mp += v;
                    ++cnt;
                }
                if (!wrote_points)
                    write_pgm(imgs[i],
                              cfg.out_dir + "/sample_" + std::to_string(M) + "_" +
                                  std::to_string(i) + ".pgm");
            }
            wrote_points = true;
            rep << fmt_g17(mp / double(std::max<std::size_t>(cnt, 1))) << "," << fmt_g17(ms)
                << "\n";
        }
    }
}

void cmd_quantize(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_text(cfg.out_dir + "/config.json", cfg.to_json());
    if (cfg.checkpoint.empty()) throw ConfigError("quantize: missing checkpoint path");
    LinearDiTModel model = load_checkpoint(cfg.checkpoint);
    const std::string src_hash = checkpoint_config_hash(cfg.checkpoint);

    QuantPolicy policy = cfg.exempt_all ? QuantPolicy::exempt_all() : QuantPolicy::defaults();
    QuantModel qm = quantize_model(model, policy);

    Rng rng(cfg.seed ^ 0x70726f6265);
    std::vector<Tensor> probes;
    for (std::size_t i = 0; i < 64; ++i)
        probes.push_back(rng.normal_tensor(
            {model.geom.C, model.geom.latent_h(), model.geom.latent_w()}));
    auto rows = fidelity_report(model, qm, probes, 0.5, default_ctx(model.cfg));

    std::ofstream out(cfg.out_dir + "/fidelity.csv");
    out << "# source_config_hash=" << src_hash << "\n";
    out << "layer,cos_sim,max_abs_err,quantized\n";
    for (const auto& r : rows)
        out << r.layer << "," << fmt_g17(r.cos_sim) << "," << fmt_g17(r.max_abs_err) << ","
            << (r.quantized ? "true" : "false") << "\n";

    // quantized checkpoint: manifest + int8 blobs (exempt params stay in the
    // source checkpoint, referenced by hash)
    json manifest;
    manifest["version"] = 1;
    manifest["source_config_hash"] = src_hash;
    json layers = json::array();
    std::ofstream bf(cfg.out_dir + "/qcheckpoint.bin", std::ios::binary);
    std::size_t offset = 0;
    for (const auto& [name, qt] : qm.qweights) {
        layers.push_back(
            {{"name", name}, {"shape", qt.shape}, {"scales", qt.scales}, {"offset", offset}});
        bf.write(reinterpret_cast<const char*>(qt.values.data()),
                 std::streamsize(qt.values.size()));
        offset += qt.values.size();
    }
    manifest["layers"] = layers;
    write_text(cfg.out_dir + "/qcheckpoint.json", manifest.dump(2) + "\n");
}

void cmd_caption_demo(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_text(cfg.out_dir + "/config.json", cfg.to_json());
    if (cfg.captions_path.empty()) throw ConfigError("caption-demo: missing captions path");
    auto records = load_captions(cfg.captions_path);

    std::ofstream out(cfg.out_dir + "/freq_report.csv");
    out << "image_id,caption_index,prob,freq,max_abs_diff\n";
    Rng rng(cfg.seed);
    SamplerConfig scfg;
    scfg.temperature = cfg.tau;
    for (const auto& rec : records) {
        const auto probs = caption_probs(rec, cfg.tau);
        std::vector<std::size_t> counts(probs.size(), 0);
        for (std::size_t i = 0; i < cfg.caption_draws; ++i)
            ++counts[sample_caption_index(rec, scfg, rng)];
        double mad = 0.0;
        std::vector<std::string> freqs(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (cfg.caption_draws == 0) {
                freqs[i] = "";
            } else {
                const double f = double(counts[i]) / double(cfg.caption_draws);
                freqs[i] = fmt_g17(f);
                mad = std::max(mad, std::abs(f - probs[i]));
            }
        }
        for (std::size_t i = 0; i < probs.size(); ++i)
            out << rec.image_id << "," << i << "," << fmt_g17(probs[i]) << "," << freqs[i] << ","
                << (cfg.caption_draws == 0 ? std::string("") : fmt_g17(mad)) << "\n";
    }
}

}  // namespace lindit
