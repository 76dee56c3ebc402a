#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lindit/blocks.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

enum class QuantAxis { per_token, per_channel };

// symmetric INT8, values in [-127, 127]; zero-range rows/columns carry a
// machine-eps sentinel scale and all-zero values
struct QuantTensor {
    Shape shape;
    std::vector<std::int8_t> values;
    std::vector<double> scales;
    QuantAxis axis = QuantAxis::per_token;

    std::size_t rows() const { return shape[0]; }
    std::size_t cols() const { return shape[1]; }
};

QuantTensor quantize_per_token(const Tensor& x);    // scales over rows
QuantTensor quantize_per_channel(const Tensor& w);  // scales over output columns
Tensor dequantize(const QuantTensor& q);

// int32 accumulation of qa * qw, dequantized by scale_a[r] * scale_w[c]
Tensor qgemm(const QuantTensor& qa, const QuantTensor& qw);

struct QuantPolicy {
    std::set<std::string> exempt_roles;
    static QuantPolicy defaults() { return {{"norm", "linattn", "cross_kv"}}; }
    static QuantPolicy exempt_all() { return {{"norm", "linattn", "cross_kv", "linear"}}; }
};

struct QuantModel {
    LinearDiTModel fp;  // exempt layers execute from here, bit-identical
    QuantPolicy policy;
    std::map<std::string, QuantTensor> qweights;  // per-channel INT8 weights
};

// quantizes every non-exempt dense GEMM weight; unknown roles in the policy
// are a config error
QuantModel quantize_model(const LinearDiTModel& m, const QuantPolicy& policy);

// forward with W8A8 execution of quantized layers (per-token dynamic
// activation scales); layer_outputs, when given, records each hooked layer
Tensor qforward(const QuantModel& qm, const Tensor& x_latent, double t, const Tensor& ctx,
                std::map<std::string, std::vector<double>>* layer_outputs = nullptr);
// matching full-precision forward with the same recording hook
Tensor fp_forward_recorded(const LinearDiTModel& m, const Tensor& x_latent, double t,
                           const Tensor& ctx,
                           std::map<std::string, std::vector<double>>* layer_outputs);

struct FidelityRow {
    std::string layer;  // "end_to_end" for the final row
    double cos_sim = 0.0;
    double max_abs_err = 0.0;
    bool quantized = false;
};

// per-layer and end-to-end fidelity between FP and quantized forward over the
// probe inputs; rows = quantized layers + one end-to-end row
std::vector<FidelityRow> fidelity_report(const LinearDiTModel& m, const QuantModel& qm,
                                         const std::vector<Tensor>& probe_latents, double t,
                                         const Tensor& ctx);

}  // namespace lindit
