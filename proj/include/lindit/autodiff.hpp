#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lindit/tensor.hpp"

namespace lindit {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;          // allocated lazily on first backward contribution
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // scatters this->grad into parents

    void accumulate(const Tensor& g);
};

// Records executed operations in order; backward() replays them in exact
// reverse order. One backward pass per tape, then reset().
class Tape {
public:
    Var leaf(Tensor v, bool requires_grad = false);
    void record(const Var& v) { order_.push_back(v); }

    // loss must be a scalar (numel 1)
    void backward(const Var& loss);
    void reset();

    std::size_t size() const { return order_.size(); }

private:
    std::vector<Var> order_;
    bool used_ = false;
};

// ---- differentiable ops ----
Var matmul(Tape& t, const Var& a, const Var& b);
Var transpose(Tape& t, const Var& a);
Var add(Tape& t, const Var& a, const Var& b);
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);
Var scale(Tape& t, const Var& a, double s);
Var relu(Tape& t, const Var& a);
Var silu(Tape& t, const Var& a);
// y[r][c] = num[r][c] / (den[r][0]) with den shaped [N x 1]
Var div_rows(Tape& t, const Var& num, const Var& den);
// broadcast a row vector v[d] over the rows of x[N x d]
Var row_add(Tape& t, const Var& x, const Var& v);
Var row_mul(Tape& t, const Var& x, const Var& v);
// broadcast a scalar variable s (shape [1]) over x
Var scalar_mul(Tape& t, const Var& x, const Var& s);
Var rmsnorm(Tape& t, const Var& x, const Var& gamma, double eps);
// x: [C x H x W], w: [C x 3 x 3], zero padding 1; per-channel cross-correlation
Var depthwise_conv3x3(Tape& t, const Var& x, const Var& w);
Var softmax_rows(Tape& t, const Var& x);
Var sum(Tape& t, const Var& a);                       // -> scalar [1]
Var mse(Tape& t, const Var& a, const Var& b);         // mean squared error -> [1]
Var reshape(Tape& t, const Var& a, Shape s);
// out.data[i] = a.data[idx[i]]; idx must be a permutation-like map into a
Var gather(Tape& t, const Var& a, Shape out_shape, std::vector<std::size_t> idx);
Var slice_cols(Tape& t, const Var& a, std::size_t c0, std::size_t c1);
Var concat_cols(Tape& t, const std::vector<Var>& parts);

// ---- finite-difference gradient checking ----
//
// f builds a scalar expression from a leaf for x. Returns the max relative
// error between the analytic gradient and central differences. Coordinates
// whose perturbation flips any ReLU activation sign (a kink within h of the
// evaluation point) are excluded from the comparison.
struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};
GradCheck grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                     double h = 1e-5);

namespace detail {
// thread-local ReLU sign-trace used by grad_check kink exclusion
void relu_trace_begin();
std::vector<std::uint8_t> relu_trace_end();
void relu_trace_push(bool positive);
bool relu_trace_active();
}  // namespace detail

}  // namespace lindit
