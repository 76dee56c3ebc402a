#pragma once

#include <string>
#include <vector>

#include "lindit/blocks.hpp"
#include "lindit/flow.hpp"
#include "lindit/rng.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

// Everything needed to re-derive an artifact; serialized beside every output.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string task;

    LinearDiTConfig model{32, 2, 80, 4, 16};
    LatentGeometry geom{1, 1, 1, 2, 1};

    double shift = 1.0;
    double t_min = 1e-3;
    std::size_t steps = 20;
    std::string objective = "fm";  // fm | ddpm

    std::string opt_kind = "adam";
    double lr = 1e-3;
    std::size_t iters = 500;
    std::size_t batch = 16;

    std::string dataset = "eight_gaussians2d";
    std::string out_dir = "out";

    // bench-attn
    std::vector<std::size_t> bench_n = {1024, 4096};
    std::size_t bench_d = 64;
    std::vector<std::string> variants = {"naive", "streaming", "fused", "softmax"};
    std::size_t reps = 5;

    // sample
    std::string sampler = "dpm";  // euler | dpm
    std::vector<std::size_t> step_list = {20};
    std::size_t draws = 1000;
    bool oracle = false;
    double mu0 = 2.0, sigma0 = 0.5;
    std::string checkpoint;  // path prefix (no extension)

    // caption-demo
    std::string captions_path;
    double tau = 0.1;
    std::size_t caption_draws = 100000;

    // quantize
    bool exempt_all = false;

    std::string to_json() const;
    static RunConfig from_json_text(const std::string& text);
};

// toy data; every draw is a latent tensor matching the configured geometry
Tensor draw_dataset_sample(const std::string& name, const LatentGeometry& g, Rng& rng);

// energy distance between two point sets (rows are points)
double energy_distance(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b);

void write_pgm(const Tensor& img, const std::string& path);  // [1 x H x W], values in [0,1]

struct TrainResult {
    std::vector<double> losses;
    std::string checkpoint_path;
};

// the loop: sample batch -> forward_marginal -> loss -> Adam step
TrainResult run_training(const RunConfig& cfg, const std::string& out_dir);

void cmd_bench_attn(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_sample(const RunConfig& cfg);
void cmd_quantize(const RunConfig& cfg);
void cmd_caption_demo(const RunConfig& cfg);

}  // namespace lindit
