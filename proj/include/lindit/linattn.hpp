#pragma once

#include <cstddef>

#include "lindit/autodiff.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

// O_i = ReLU(Q_i) (sum_j ReLU(K_j)^T V_j) / (ReLU(Q_i) (sum_j ReLU(K_j)^T) + eps)
//
// Three evaluation strategies plus a softmax baseline. The naive form is the
// serial O(N^2) reference the kernels are tested against.

struct MultiHeadParams {
    Tensor w_qkv;  // [model_dim x 3*model_dim], column blocks Q | K | V
    Tensor w_out;  // [model_dim x model_dim]
    std::size_t heads = 1;
};

// per-query double summation, O(N^2); correctness oracle
Tensor linear_attention_naive(const Tensor& q, const Tensor& k, const Tensor& v, double eps);

// shared-term form: S = ReLU(K)^T V (d x d), z = sum_j ReLU(K_j) (d), O(N)
Tensor linear_attention_streaming(const Tensor& q, const Tensor& k, const Tensor& v, double eps);
// differentiable variant used inside model blocks
Var linear_attention_streaming(Tape& t, const Var& q, const Var& k, const Var& v, double eps);

// O = softmax(Q K^T / sqrt(d)) V with row-max subtraction
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v);
Var softmax_attention(Tape& t, const Var& q, const Var& k, const Var& v);

// unfused composition: QKV projection -> per-head streaming -> output projection
Tensor multihead_linear_attention(const Tensor& x, const MultiHeadParams& p, double eps);
Var multihead_linear_attention(Tape& t, const Var& x, const Var& w_qkv, const Var& w_out,
                               std::size_t heads, double eps);

// single pass: ReLU applied while traversing the projection output, S and z
// accumulated per head without materializing ReLU(Q)/ReLU(K) arrays
Tensor fused_multihead_linear_attention(const Tensor& x, const MultiHeadParams& p, double eps);

// ---- f32 benchmark kernels ----
// aux_bytes reports the workspace the kernel allocated beyond its output.
struct KernelStats {
    std::size_t aux_bytes = 0;
};

TensorF linattn_naive_f32(const TensorF& q, const TensorF& k, const TensorF& v, float eps,
                          KernelStats* stats = nullptr);
TensorF linattn_streaming_f32(const TensorF& q, const TensorF& k, const TensorF& v, float eps,
                              int threads = 1, KernelStats* stats = nullptr);
TensorF softmax_attention_f32(const TensorF& q, const TensorF& k, const TensorF& v,
                              int threads = 1, KernelStats* stats = nullptr);
struct MultiHeadParamsF {
    TensorF w_qkv;
    TensorF w_out;
    std::size_t heads = 1;
};
TensorF fused_multihead_f32(const TensorF& x, const MultiHeadParamsF& p, float eps,
                            int threads = 1, KernelStats* stats = nullptr);

}  // namespace lindit
