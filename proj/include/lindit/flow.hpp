#pragma once

#include <cstddef>
#include <vector>

#include "lindit/autodiff.hpp"
#include "lindit/blocks.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

// sigma-shift: sigma_tilde = s*sigma / (1 + (s-1)*sigma); identity at s=1,
// fixes 0 and 1 for every s >= 1
double shift_sigma(double sigma, double s);

// flow schedule over t in [0,1]: base sigma(t) = t, alpha = 1 - sigma_tilde,
// lambda = ln(alpha/sigma_tilde)
struct FlowSchedule {
    double s = 1.0;
    explicit FlowSchedule(double shift = 1.0) : s(shift) {
        if (shift < 1.0) throw ConfigError("FlowSchedule: shift factor must be >= 1");
    }
    double sigma(double t) const { return shift_sigma(t, s); }
    double alpha(double t) const { return 1.0 - sigma(t); }
    double lambda(double t) const;
};

// x_t = alpha(t)*x0 + sigma_tilde(t)*eps
Tensor forward_marginal(const Tensor& x0, const Tensor& eps, double t, const FlowSchedule& sched);

// v = eps - x0
Tensor velocity_target(const Tensor& x0, const Tensor& eps);

// t_0 = 1 down to t_M = t_min, uniform in t, strictly decreasing
std::vector<double> timestep_grid(std::size_t M, double t_min = 1e-3);

// DDPM baseline: cosine alpha-bar schedule on the same [0,1] time convention,
// variance preserving (alpha^2 + sigma^2 = 1)
struct DdpmSchedule {
    double alpha_bar(double t) const;
    double alpha(double t) const { return std::sqrt(alpha_bar(t)); }
    double sigma(double t) const { return std::sqrt(1.0 - alpha_bar(t)); }
};

struct TrainBatch {
    std::vector<Tensor> x0;   // data latents
    std::vector<Tensor> eps;  // standard-normal noise, same shapes
    std::vector<double> t;    // per-sample times in [0,1]
    Tensor ctx;               // conditioning [L x cond_dim], shared across batch
};

// mean over the batch of MSE(model(x_t, t, ctx), target); differentiable
// through opts.params bindings
Var fm_loss(Tape& tape, const LinearDiTModel& m, const TrainBatch& batch,
            const FlowSchedule& sched, const ForwardOpts& opts = {});
Var ddpm_loss(Tape& tape, const LinearDiTModel& m, const TrainBatch& batch,
              const DdpmSchedule& sched, const ForwardOpts& opts = {});

// ---- analytic 1-D Gaussian oracles (x0 ~ N(mu0, sigma0^2)) ----
// E[eps - x0 | x_t = x]; exact velocity field for sampler tests
double gaussian_oracle_velocity(double x, double t, double mu0, double sigma0,
                                const FlowSchedule& sched);
// E[x0 | x_t = x]
double gaussian_oracle_data_prediction(double x, double t, double mu0, double sigma0,
                                       const FlowSchedule& sched);

}  // namespace lindit
