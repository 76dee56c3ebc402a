#include "lindit/flow.hpp"

#include <cmath>

namespace lindit {

double shift_sigma(double sigma, double s) {
    if (s < 1.0) throw ConfigError("shift_sigma: shift factor must be >= 1, got " +
                                   std::to_string(s));
    if (sigma < 0.0 || sigma > 1.0)
        throw ConfigError("shift_sigma: sigma must lie in [0,1], got " + std::to_string(sigma));
    return s * sigma / (1.0 + (s - 1.0) * sigma);
}

double FlowSchedule::lambda(double t) const {
    const double sg = sigma(t);
    return std::log((1.0 - sg) / sg);
}

Tensor forward_marginal(const Tensor& x0, const Tensor& eps, double t, const FlowSchedule& sched) {
    check_same_shape(x0, eps, "forward_marginal");
    if (t < 0.0 || t > 1.0) throw std::domain_error("forward_marginal: t outside [0,1]");
    const double a = sched.alpha(t), sg = sched.sigma(t);
    Tensor xt = x0;
    for (std::size_t i = 0; i < xt.numel(); ++i) xt.data[i] = a * x0.data[i] + sg * eps.data[i];
    return xt;
}

Tensor velocity_target(const Tensor& x0, const Tensor& eps) {
    check_same_shape(x0, eps, "velocity_target");
    Tensor v = eps;
    for (std::size_t i = 0; i < v.numel(); ++i) v.data[i] -= x0.data[i];
    return v;
}

std::vector<double> timestep_grid(std::size_t M, double t_min) {
    if (M == 0) throw ConfigError("timestep_grid: step count must be >= 1");
    if (t_min < 0.0 || t_min >= 1.0) throw ConfigError("timestep_grid: t_min must lie in [0,1)");
    std::vector<double> grid(M + 1);
    for (std::size_t i = 0; i <= M; ++i)
        grid[i] = 1.0 - (1.0 - t_min) * double(i) / double(M);
    grid[M] = t_min;
    return grid;
}

double DdpmSchedule::alpha_bar(double t) const {
    if (t < 0.0 || t > 1.0) throw std::domain_error("DdpmSchedule: t outside [0,1]");
    const double s = 0.008;
    auto f = [s](double u) {
        const double c = std::cos((u + s) / (1.0 + s) * 1.5707963267948966);
        return c * c;
    };
    return f(t) / f(0.0);
}

namespace {

Var batch_loss(Tape& tape, const LinearDiTModel& m, const TrainBatch& batch,
               const ForwardOpts& opts,
               const std::function<Tensor(std::size_t)>& make_xt,
               const std::function<Tensor(std::size_t)>& make_target) {
    const std::size_t B = batch.x0.size();
    if (B == 0 || batch.eps.size() != B || batch.t.size() != B)
        throw DataError("loss: inconsistent batch");
    Var ctx = tape.leaf(batch.ctx);
    Var total;
    for (std::size_t b = 0; b < B; ++b) {
        Var pred = forward(tape, m, tape.leaf(make_xt(b)), batch.t[b], ctx, opts);
        Var l = mse(tape, pred, tape.leaf(make_target(b)));
        total = b == 0 ? l : add(tape, total, l);
    }
    Var loss = scale(tape, total, 1.0 / double(B));
    if (!std::isfinite(loss->val.data[0]))
        throw NumericError("loss: non-finite value during training step");
    return loss;
}

}  // namespace

Var fm_loss(Tape& tape, const LinearDiTModel& m, const TrainBatch& batch,
            const FlowSchedule& sched, const ForwardOpts& opts) {
    return batch_loss(
        tape, m, batch, opts,
        [&](std::size_t b) { return forward_marginal(batch.x0[b], batch.eps[b], batch.t[b], sched); },
        [&](std::size_t b) { return velocity_target(batch.x0[b], batch.eps[b]); });
}

Var ddpm_loss(Tape& tape, const LinearDiTModel& m, const TrainBatch& batch,
              const DdpmSchedule& sched, const ForwardOpts& opts) {
    return batch_loss(
        tape, m, batch, opts,
        [&](std::size_t b) {
            const double a = sched.alpha(batch.t[b]), sg = sched.sigma(batch.t[b]);
            Tensor xt = batch.x0[b];
            for (std::size_t i = 0; i < xt.numel(); ++i)
                xt.data[i] = a * xt.data[i] + sg * batch.eps[b].data[i];
            return xt;
        },
        [&](std::size_t b) { return batch.eps[b]; });
}

namespace {

// joint-Gaussian conditioning pieces for x_t = alpha*x0 + sigma*eps
struct GaussCond {
    double a, sg, var;  // var = alpha^2 sigma0^2 + sigma^2
    GaussCond(double t, double sigma0, const FlowSchedule& sched)
        : a(sched.alpha(t)), sg(sched.sigma(t)), var(a * a * sigma0 * sigma0 + sg * sg) {}
};

}  // namespace

double gaussian_oracle_velocity(double x, double t, double mu0, double sigma0,
                                const FlowSchedule& sched) {
    if (t <= 0.0 || t > 1.0)
        throw std::domain_error("gaussian_oracle_velocity: t must lie in (0,1]");
    GaussCond c(t, sigma0, sched);
    // E[eps|x] = sigma/var * (x - a mu0); E[x0|x] = mu0 + a sigma0^2/var * (x - a mu0)
    const double centered = x - c.a * mu0;
    return -mu0 + (c.sg - c.a * sigma0 * sigma0) / c.var * centered;
}

double gaussian_oracle_data_prediction(double x, double t, double mu0, double sigma0,
                                       const FlowSchedule& sched) {
    if (t < 0.0 || t > 1.0)
        throw std::domain_error("gaussian_oracle_data_prediction: t outside [0,1]");
    if (t == 0.0) return x;  // clean endpoint
    GaussCond c(t, sigma0, sched);
    return mu0 + c.a * sigma0 * sigma0 / c.var * (x - c.a * mu0);
}

}  // namespace lindit
