#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lindit/autodiff.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

// H, W are pixel extents; F the autoencoder downsample factor; C the latent
// channels; P the diffusion patch size. Token count is (H/(PF)) * (W/(PF)).
struct LatentGeometry {
    std::size_t H = 0, W = 0, F = 1, C = 1, P = 1;
    std::size_t latent_h() const { return H / F; }
    std::size_t latent_w() const { return W / F; }
    std::size_t tokens_h() const { return H / (P * F); }
    std::size_t tokens_w() const { return W / (P * F); }
};

std::size_t token_count(const LatentGeometry& g);

// [C x h x w] -> [N x C*P*P], row-major over patch grid then (c, pi, pj)
Tensor patchify(const Tensor& latent, std::size_t P);
Tensor unpatchify(const Tensor& tokens, std::size_t C, std::size_t h, std::size_t w, std::size_t P);
Var patchify(Tape& t, const Var& latent, std::size_t P);
Var unpatchify(Tape& t, const Var& tokens, std::size_t C, std::size_t h, std::size_t w,
               std::size_t P);

struct LinearDiTConfig {
    std::size_t width = 0;
    std::size_t depth = 0;
    std::size_t ffn_dim = 0;
    std::size_t heads = 1;
    std::size_t cond_dim = 0;
};

// Parameter roles drive the quantization policy:
//   linear   - dense GEMM weight, quantization candidate
//   linattn  - weight inside the linear-attention path
//   cross_kv - K/V projections of cross-attention
//   norm     - RMSNorm gains
//   conv     - depthwise kernels
//   bias     - additive vectors
//   scale    - learnable scalars (text conditioning factor)
struct Param {
    std::string name;
    std::string role;
    Tensor value;
};

struct LinearDiTModel {
    LinearDiTConfig cfg;
    LatentGeometry geom;
    std::vector<Param> params;
    std::unordered_map<std::string, std::size_t> index;

    Tensor& p(const std::string& name);
    const Tensor& p(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) != 0; }
};

LinearDiTModel build_model(const LinearDiTConfig& cfg, const LatentGeometry& g,
                           std::uint64_t seed);
std::size_t param_count(const LinearDiTModel& m);

// sinusoidal features of t in [0,1]; the 2-layer MLP lives in the model params
Tensor timestep_frequencies(double t, std::size_t width);
// full embedding: sinusoid -> MLP (silu between layers)
Tensor timestep_embed(const LinearDiTModel& m, double t);

// y = scale * rmsnorm(emb, gamma); row RMS of the output is |scale| * gamma pattern
Var condition_text(Tape& t, const Var& emb, const Var& gamma, const Var& scale, double eps);

// standalone Mix-FFN: expand width -> 2*ffn_dim, depthwise 3x3 over the token
// grid, GLU split a (.) silu(g), project ffn_dim -> width
Var mix_ffn(Tape& t, const Var& x, std::size_t ht, std::size_t wt, const Var& w_expand,
            const Var& b_expand, const Var& conv_w, const Var& w_project, const Var& b_project);

// multi-head softmax cross-attention; x [N x width] queries, ctx [L x width] keys/values
Var cross_attention(Tape& t, const Var& x, const Var& ctx, std::size_t heads, const Var& w_q,
                    const Var& w_k, const Var& w_v, const Var& w_out);

// Replaces every dense x*W product named below during forward; used for W8A8 execution.
using GemmHook =
    std::function<Tensor(const std::string& layer, const Tensor& x, const Tensor& w)>;

struct ForwardOpts {
    const GemmHook* gemm = nullptr;  // null -> full-precision tape matmul
    // trainable parameter bindings by name; unbound params enter as constants
    const std::unordered_map<std::string, Var>* params = nullptr;
    double eps = 1e-6;
};

// patchify -> embed -> depth x [modulated linear self-attn, cross-attn, mix-ffn] ->
// head -> unpatchify. x_latent: [C x h x w], ctx: [L x cond_dim], t in [0,1].
Var forward(Tape& tape, const LinearDiTModel& m, const Var& x_latent, double t, const Var& ctx,
            const ForwardOpts& opts = {});
// forward on plain tensors (throwaway tape)
Tensor forward(const LinearDiTModel& m, const Tensor& x_latent, double t, const Tensor& ctx,
               const ForwardOpts& opts = {});

// names of layers routed through the GemmHook, in forward order
std::vector<std::string> gemm_layer_names(const LinearDiTModel& m);

// checkpoint: <path>.json manifest + <path>.bin raw little-endian f64 data
void save_checkpoint(const LinearDiTModel& m, const std::string& path,
                     const std::string& config_json = "");
LinearDiTModel load_checkpoint(const std::string& path);
std::string checkpoint_config_hash(const std::string& path);

std::string fnv1a_hash(const std::string& s);

}  // namespace lindit
