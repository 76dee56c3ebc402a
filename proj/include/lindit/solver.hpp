#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lindit/flow.hpp"
#include "lindit/tensor.hpp"

namespace lindit {

using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

// x0_hat = x_t - sigma_tilde(t) * v
Tensor model_output_to_data(const Tensor& x_t, double t, const Tensor& v,
                            const FlowSchedule& sched);

struct SampleTrace {
    std::size_t model_evals = 0;
    bool buffer_updated_after_last_step = false;
};

struct SamplerOpts {
    // apply one data-prediction readout at the final grid time to land on t=0
    bool data_readout = true;
    SampleTrace* trace = nullptr;
};

// first-order integration of dx/dsigma_tilde = v along the grid
Tensor flow_euler_sample(const VelocityField& v_field, const Tensor& x_T,
                         const std::vector<double>& grid, const FlowSchedule& sched,
                         const SamplerOpts& opts = {});

// second-order multistep exponential-integrator sampler; first step first order,
// buffer of the two most recent data predictions, D_i extrapolation with
// r_i = h_{i-1}/h_i, no buffer update after the final step
Tensor flow_dpm_solver_sample(const VelocityField& v_field, const Tensor& x_T,
                              const std::vector<double>& grid, const FlowSchedule& sched,
                              const SamplerOpts& opts = {});

// classic RK4 on dx/dsigma_tilde = v from t=1 to t_end; reference solution for
// all oracle comparisons (acceptance oracle at 1000 steps)
Tensor rk4_reference(const VelocityField& v_field, const Tensor& x_T, double t_end,
                     std::size_t steps, const FlowSchedule& sched);

struct SamplerRow {
    std::string sampler;
    std::size_t steps = 0;
    double shift = 1.0;
    std::string metric_name;
    double metric_value = 0.0;
    double wall_ms = 0.0;
};

// runs both samplers over a fixed noise set for each step count; metric is the
// RMS endpoint error against the RK4 reference at the final grid time
std::vector<SamplerRow> sampler_report(const VelocityField& v_field, const FlowSchedule& sched,
                                       const std::vector<std::size_t>& step_list,
                                       std::size_t n_draws, std::uint64_t seed,
                                       double t_min = 1e-3);

}  // namespace lindit
