#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "lindit/harness.hpp"

namespace {

// 0 success, 2 usage error, 3 data error, 4 numeric divergence
int run(int argc, char** argv) {
    CLI::App app{"linear-DiT flow-matching workbench"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "run-config JSON file")->each([](const std::string&) {});
    app.add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out_dir, "override output directory");

    auto* bench = app.add_subcommand("bench-attn", "attention kernel benchmark sweep");
    auto* train = app.add_subcommand("train", "toy flow-matching / DDPM training");
    auto* sample = app.add_subcommand("sample", "draw samples with euler or dpm");
    auto* quantize = app.add_subcommand("quantize", "W8A8 quantization + fidelity report");
    auto* caption = app.add_subcommand("caption-demo", "clip-score caption sampler frequencies");

    std::string checkpoint, captions_path, sampler;
    double tau = -1.0;
    sample->add_option("--checkpoint", checkpoint, "checkpoint path prefix");
    sample->add_option("--sampler", sampler, "euler | dpm");
    quantize->add_option("--checkpoint", checkpoint, "checkpoint path prefix");
    caption->add_option("--captions", captions_path, "NDJSON caption file");
    caption->add_option("--temperature", tau, "sampling temperature");

    CLI11_PARSE(app, argc, argv);

    lindit::RunConfig cfg;
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) {
            std::cerr << "cannot open config " << config_path << "\n";
            return 2;
        }
        std::ostringstream ss;
        ss << f.rdbuf();
        cfg = lindit::RunConfig::from_json_text(ss.str());
    }
    if (seed_set) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (!captions_path.empty()) cfg.captions_path = captions_path;
    if (!sampler.empty()) cfg.sampler = sampler;
    if (tau > 0.0) cfg.tau = tau;

    if (bench->parsed()) {
        cfg.task = "bench-attn";
        lindit::cmd_bench_attn(cfg);
    } else if (train->parsed()) {
        cfg.task = "train";
        lindit::cmd_train(cfg);
    } else if (sample->parsed()) {
        cfg.task = "sample";
        lindit::cmd_sample(cfg);
    } else if (quantize->parsed()) {
        cfg.task = "quantize";
        lindit::cmd_quantize(cfg);
    } else if (caption->parsed()) {
        cfg.task = "caption-demo";
        lindit::cmd_caption_demo(cfg);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const lindit::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const lindit::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const lindit::NumericError& e) {
        std::cerr << "numeric divergence: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
