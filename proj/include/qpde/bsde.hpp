#pragma once

#include <chrono>
#include <concepts>
#include <functional>
#include <span>
#include <vector>

#include "qpde/autodiff.hpp"
#include "qpde/common.hpp"
#include "qpde/rng.hpp"
#include "qpde/sde.hpp"

namespace qpde::bsde {

using autodiff::FeedForwardNet;

// Semilinear parabolic problem
//   du/dt + 1/2 Tr(sigma sigma^T Hess u) + grad u . mu + f(t,x,u,sigma^T grad u) = 0,
//   u(T, x) = g(x),
// solved at the spatial point x0. The nonlinearity is supplied with its
// partial derivatives in u and z = sigma^T grad u so both AD modes can chain
// through the rollout.
struct PdeProblem {
    std::size_t d = 1;
    std::function<Vec(double, const Vec&)> mu;
    std::function<Mat(double, const Vec&)> sigma;
    std::function<double(double, const Vec&, double, const Vec&)> f;
    std::function<double(double, const Vec&, double, const Vec&)> f_u;
    std::function<Vec(double, const Vec&, double, const Vec&)> f_z;
    std::function<double(const Vec&)> g;
    Vec x0;
    double t0 = 0.0;
    double T = 1.0;

    sde::SdeSpec to_sde() const {
        sde::SdeSpec s;
        s.d = d;
        s.mu = mu;
        s.sigma = sigma;
        s.x0 = x0;
        s.t0 = t0;
        s.T = T;
        return s;
    }
};

// Hamilton-Jacobi-Bellman instance: sigma = 2 I, mu = 0,
// f = ||grad u||_2^2 and g(x) = log((1 + ||x||_2^2)/2). With sigma = 2 I the
// fourth argument is z = 2 grad u, so f(z) = ||z||^2 / 4.
inline PdeProblem make_hjb(std::size_t d, double T) {
    require(d >= 1, "make_hjb: dimension must be positive");
    PdeProblem p;
    p.d = d;
    p.T = T;
    p.x0.assign(d, 0.0);
    p.mu = [d](double, const Vec&) { return Vec(d, 0.0); };
    p.sigma = [d](double, const Vec&) {
        Mat s = Mat::identity(d);
        for (double& v : s.data) v *= 2.0;
        return s;
    };
    p.f = [](double, const Vec&, double, const Vec& z) { return 0.25 * norm2_sq(z); };
    p.f_u = [](double, const Vec&, double, const Vec&) { return 0.0; };
    p.f_z = [](double, const Vec&, double, const Vec& z) {
        Vec g(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) g[i] = 0.5 * z[i];
        return g;
    };
    p.g = [](const Vec& x) { return std::log(0.5 * (1.0 + norm2_sq(x))); };
    return p;
}

// Allen-Cahn instance (sigma = sqrt(2) I, f = u - u^3); no acceptance
// criteria attach to it, it ships as a problem constructor only.
inline PdeProblem make_allen_cahn(std::size_t d, double T) {
    PdeProblem p;
    p.d = d;
    p.T = T;
    p.x0.assign(d, 0.0);
    p.mu = [d](double, const Vec&) { return Vec(d, 0.0); };
    p.sigma = [d](double, const Vec&) {
        Mat s = Mat::identity(d);
        for (double& v : s.data) v *= std::sqrt(2.0);
        return s;
    };
    p.f = [](double, const Vec&, double u, const Vec&) { return u - u * u * u; };
    p.f_u = [](double, const Vec&, double u, const Vec&) { return 1.0 - 3.0 * u * u; };
    p.f_z = [](double, const Vec&, double, const Vec& z) { return Vec(z.size(), 0.0); };
    p.g = [](const Vec& x) { return 1.0 / (2.0 + 0.4 * norm2_sq(x)); };
    return p;
}

// Nonlinear Black-Scholes with default risk; same shipping status as
// Allen-Cahn. The intensity ramp makes f_u piecewise constant.
inline PdeProblem make_nonlinear_black_scholes(std::size_t d, double T) {
    const double rate = 0.02, mu_bar = 0.02, sigma_bar = 0.2, delta = 2.0 / 3.0;
    const double gamma_h = 0.2, gamma_l = 0.02, v_h = 50.0, v_l = 70.0;
    auto intensity = [=](double u) {
        if (u < v_h) return gamma_h;
        if (u >= v_l) return gamma_l;
        return gamma_h + (gamma_l - gamma_h) * (u - v_h) / (v_l - v_h);
    };
    auto intensity_slope = [=](double u) {
        if (u < v_h || u >= v_l) return 0.0;
        return (gamma_l - gamma_h) / (v_l - v_h);
    };
    PdeProblem p;
    p.d = d;
    p.T = T;
    p.x0.assign(d, 100.0);
    p.mu = [=](double, const Vec& x) {
        Vec m(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) m[i] = mu_bar * x[i];
        return m;
    };
    p.sigma = [=](double, const Vec& x) {
        Mat s(x.size(), x.size());
        for (std::size_t i = 0; i < x.size(); ++i) s(i, i) = sigma_bar * x[i];
        return s;
    };
    p.f = [=](double, const Vec&, double u, const Vec&) {
        return -(1.0 - delta) * intensity(u) * u - rate * u;
    };
    p.f_u = [=](double, const Vec&, double u, const Vec&) {
        return -(1.0 - delta) * (intensity(u) + intensity_slope(u) * u) - rate;
    };
    p.f_z = [](double, const Vec&, double, const Vec& z) { return Vec(z.size(), 0.0); };
    p.g = [](const Vec& x) {
        double m = x[0];
        for (double v : x) m = std::min(m, v);
        return m;
    };
    return p;
}

// ----- step-network interface -----
//
// A step network maps the state Xhat_{t_n} to sigma^T grad u at that step.
// The step_net_* customization points are found by argument-dependent lookup:
// FeedForwardNet's live next to it in autodiff, hybrid networks bring theirs.

template <class Net>
concept StepNetwork = requires(const Net& n, Net& mn, const Vec& x, const Vec& cot,
                               std::span<const double> v) {
    { step_net_forward(n, x) } -> std::same_as<Vec>;
    { step_net_param_size(n) } -> std::convertible_to<std::size_t>;
    { step_net_get_params(n) } -> std::same_as<Vec>;
    { step_net_set_params(mn, v) };
    { step_net_vjp(n, x, cot) } -> std::same_as<Vec>;
    { step_net_jvp(n, x, v) } -> std::same_as<Vec>;
};

// ----- the stacked N-step model -----

// Trainables: u0, z0 (= sigma^T grad u at t0) and one network per interior
// time step. Flat layout: [u0, z0, net_1 params, ..., net_{N-1} params].
template <StepNetwork Net>
struct BsdeModel {
    double u0 = 0.0;
    Vec z0;
    std::vector<Net> nets;    // nets[i] serves step n = i+1
    sde::TimeGrid grid;
    std::size_t d = 0;

    std::size_t steps() const { return grid.steps(); }
    std::size_t param_size() const {
        std::size_t n = 1 + d;
        for (const Net& net : nets) n += step_net_param_size(net);
        return n;
    }

    Vec get_params() const {
        Vec theta;
        theta.reserve(param_size());
        theta.push_back(u0);
        theta.insert(theta.end(), z0.begin(), z0.end());
        for (const Net& net : nets) {
            Vec p = step_net_get_params(net);
            theta.insert(theta.end(), p.begin(), p.end());
        }
        return theta;
    }

    void set_params(std::span<const double> theta) {
        require(theta.size() == param_size(), "BsdeModel::set_params: length mismatch");
        u0 = theta[0];
        std::size_t p = 1;
        for (std::size_t i = 0; i < d; ++i) z0[i] = theta[p++];
        for (Net& net : nets) {
            std::size_t n = step_net_param_size(net);
            step_net_set_params(net, theta.subspan(p, n));
            p += n;
        }
    }
};

// Default hidden width reproducing the reference per-network parameter
// totals (225 / 565 / 1260 at d = 5 / 10 / 20) with shape [d, w, w, d].
inline std::size_t default_hidden_width(std::size_t d) {
    switch (d) {
        case 5: return 10;
        case 10: return 15;
        case 20: return 20;
        default: return d + 5;
    }
}

inline BsdeModel<FeedForwardNet> make_model(const PdeProblem& problem, std::size_t steps,
                                            std::uint64_t seed, std::size_t hidden_width = 0) {
    std::size_t d = problem.d;
    std::size_t w = hidden_width ? hidden_width : default_hidden_width(d);
    BsdeModel<FeedForwardNet> model;
    model.d = d;
    model.grid = sde::TimeGrid::uniform(problem.t0, problem.T, steps);
    RngStream init(seed, StreamPurpose::init, 0, 0);
    model.u0 = 0.5 * (2.0 * init.uniform(0) - 1.0);
    model.z0.resize(d);
    for (std::size_t i = 0; i < d; ++i) model.z0[i] = 0.1 * (2.0 * init.uniform(i + 1) - 1.0);
    using autodiff::Activation;
    std::vector<Activation> acts{Activation::relu, Activation::relu, Activation::identity};
    for (std::size_t n = 1; n < steps; ++n)
        model.nets.push_back(FeedForwardNet::random({d, w, w, d}, acts,
                                                    RngStream(seed, StreamPurpose::init, 1, n)));
    return model;
}

// ----- rollout and loss -----

// Per-path record of the forward rollout, kept for the reverse sweep.
struct RolloutRecord {
    Vec u;                  // uhat_0 .. uhat_N
    std::vector<Vec> z;     // zhat_0 .. zhat_{N-1}
    Vec f_vals, f_u_vals;
    std::vector<Vec> f_z_vals;
};

template <StepNetwork Net>
RolloutRecord rollout_path(const BsdeModel<Net>& model, const PdeProblem& problem,
                           const sde::PathBatch& paths, std::size_t b) {
    std::size_t N = model.steps(), d = model.d;
    RolloutRecord rec;
    rec.u.resize(N + 1);
    rec.z.resize(N);
    rec.f_vals.resize(N);
    rec.f_u_vals.resize(N);
    rec.f_z_vals.resize(N);
    rec.u[0] = model.u0;
    for (std::size_t n = 0; n < N; ++n) {
        Vec x = paths.state_vec(b, n);
        rec.z[n] = (n == 0) ? model.z0 : step_net_forward(model.nets[n - 1], x);
        double tn = model.grid.t[n];
        double dt = model.grid.dt(n);
        rec.f_vals[n] = problem.f(tn, x, rec.u[n], rec.z[n]);
        rec.f_u_vals[n] = problem.f_u(tn, x, rec.u[n], rec.z[n]);
        rec.f_z_vals[n] = problem.f_z(tn, x, rec.u[n], rec.z[n]);
        const double* dw = paths.dw(b, n);
        double zdw = 0.0;
        for (std::size_t k = 0; k < d; ++k) zdw += rec.z[n][k] * dw[k];
        rec.u[n + 1] = rec.u[n] - rec.f_vals[n] * dt + zdw;
        if (!std::isfinite(rec.u[n + 1]))
            throw NumericError("rollout: non-finite uhat at step " + std::to_string(n + 1));
    }
    return rec;
}

// Terminal (uhat_N, Xhat_N is already in `paths`) for every path.
template <StepNetwork Net>
Vec rollout(const BsdeModel<Net>& model, const PdeProblem& problem, const sde::PathBatch& paths,
            unsigned threads = 1) {
    require(paths.steps == model.steps() && paths.d == model.d, "rollout: grid/batch mismatch");
    Vec terminal(paths.batch);
    parallel_for(paths.batch, threads, [&](std::size_t b) {
        terminal[b] = rollout_path(model, problem, paths, b).u.back();
    });
    return terminal;
}

template <StepNetwork Net>
double loss_batch(const BsdeModel<Net>& model, const PdeProblem& problem,
                  const sde::PathBatch& paths, unsigned threads = 1) {
    require(paths.batch >= 1, "loss_batch: empty batch");
    Vec terminal = rollout(model, problem, paths, threads);
    double acc = 0.0;
    for (std::size_t b = 0; b < paths.batch; ++b) {
        double diff = problem.g(paths.state_vec(b, paths.steps)) - terminal[b];
        acc += diff * diff;
    }
    return acc / double(paths.batch);
}

// ----- gradient estimators -----

enum class GradientEstimator { backprop, forward_gradient, numerical };

inline const char* to_string(GradientEstimator e) {
    switch (e) {
        case GradientEstimator::backprop: return "backprop";
        case GradientEstimator::forward_gradient: return "forward_gradient";
        case GradientEstimator::numerical: return "numerical";
    }
    return "?";
}

inline GradientEstimator estimator_from_string(const std::string& s) {
    if (s == "backprop") return GradientEstimator::backprop;
    if (s == "forward_gradient") return GradientEstimator::forward_gradient;
    if (s == "numerical") return GradientEstimator::numerical;
    throw InvalidArgument("unknown estimator: " + s);
}

struct TrainConfig {
    double eta = 0.01;
    std::size_t batch = 20;
    std::size_t iterations = 2000;
    GradientEstimator estimator = GradientEstimator::backprop;
    double h = 0.001;               // numerical differentiation step
    std::size_t v_samples = 100;    // forward-gradient draws per iteration
    bool truncate_v = false;        // clamp v entries at +-3
    double clip = 0.0;              // 0 disables per-entry gradient clipping
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

// Exact gradient of loss_batch via the adjoint recursion
//   lambda_n = lambda_{n+1} (1 - f_u dt), w_n = lambda_{n+1} (dW - f_z dt),
// with w_n backpropagated through net_n.
template <StepNetwork Net>
Vec gradient_backprop(const BsdeModel<Net>& model, const PdeProblem& problem,
                      const sde::PathBatch& paths, unsigned threads = 1) {
    std::size_t N = model.steps(), d = model.d;
    std::size_t np = model.param_size();
    std::vector<Vec> per_path(paths.batch);
    parallel_for(paths.batch, threads, [&](std::size_t b) {
        RolloutRecord rec = rollout_path(model, problem, paths, b);
        Vec grad(np, 0.0);
        double lambda = 2.0 * (rec.u[N] - problem.g(paths.state_vec(b, N)));
        // net parameter offsets
        std::size_t off = 1 + d;
        std::vector<std::size_t> net_off(model.nets.size());
        for (std::size_t i = 0; i < model.nets.size(); ++i) {
            net_off[i] = off;
            off += step_net_param_size(model.nets[i]);
        }
        for (std::size_t n = N; n-- > 0;) {
            double dt = model.grid.dt(n);
            const double* dw = paths.dw(b, n);
            Vec w(d);
            for (std::size_t k = 0; k < d; ++k)
                w[k] = lambda * (dw[k] - rec.f_z_vals[n][k] * dt);
            if (n == 0) {
                for (std::size_t k = 0; k < d; ++k) grad[1 + k] += w[k];
            } else {
                Vec ng = step_net_vjp(model.nets[n - 1], paths.state_vec(b, n), w);
                for (std::size_t k = 0; k < ng.size(); ++k) grad[net_off[n - 1] + k] += ng[k];
            }
            lambda *= (1.0 - rec.f_u_vals[n] * dt);
        }
        grad[0] += lambda;
        per_path[b] = std::move(grad);
    });
    Vec grad(np, 0.0);
    for (std::size_t b = 0; b < paths.batch; ++b)
        for (std::size_t k = 0; k < np; ++k) grad[k] += per_path[b][k];
    for (double& gv : grad) gv /= double(paths.batch);
    return grad;
}

// Directional derivative of loss_batch along a flat parameter tangent v,
// one dual-number sweep per path.
template <StepNetwork Net>
double loss_jvp(const BsdeModel<Net>& model, const PdeProblem& problem,
                const sde::PathBatch& paths, std::span<const double> v, unsigned threads = 1) {
    std::size_t N = model.steps(), d = model.d;
    Vec per_path(paths.batch, 0.0);
    std::size_t base = 1 + d;
    std::vector<std::size_t> net_off(model.nets.size());
    {
        std::size_t off = base;
        for (std::size_t i = 0; i < model.nets.size(); ++i) {
            net_off[i] = off;
            off += step_net_param_size(model.nets[i]);
        }
    }
    parallel_for(paths.batch, threads, [&](std::size_t b) {
        RolloutRecord rec = rollout_path(model, problem, paths, b);
        double ut = v[0];
        for (std::size_t n = 0; n < N; ++n) {
            double dt = model.grid.dt(n);
            const double* dw = paths.dw(b, n);
            Vec zt;
            if (n == 0) {
                zt.assign(v.begin() + 1, v.begin() + 1 + std::ptrdiff_t(d));
            } else {
                std::size_t sz = step_net_param_size(model.nets[n - 1]);
                zt = step_net_jvp(model.nets[n - 1], paths.state_vec(b, n),
                                  v.subspan(net_off[n - 1], sz));
            }
            double df = rec.f_u_vals[n] * ut + dot(rec.f_z_vals[n], zt);
            double zdw = 0.0;
            for (std::size_t k = 0; k < d; ++k) zdw += zt[k] * dw[k];
            ut = ut - df * dt + zdw;
        }
        per_path[b] = 2.0 * (rec.u[N] - problem.g(paths.state_vec(b, N))) * ut;
    });
    double acc = 0.0;
    for (double pv : per_path) acc += pv;
    return acc / double(paths.batch);
}

// Average of (grad l . v) v over v_samples standard-normal draws.
template <StepNetwork Net>
Vec gradient_forward(const BsdeModel<Net>& model, const PdeProblem& problem,
                     const sde::PathBatch& paths, const TrainConfig& cfg, std::uint64_t iteration) {
    std::size_t np = model.param_size();
    Vec grad(np, 0.0);
    Vec v(np);
    for (std::size_t s = 0; s < cfg.v_samples; ++s) {
        RngStream stream(cfg.seed, StreamPurpose::forward_gradient, iteration, s);
        for (std::size_t k = 0; k < np; ++k) {
            double x = stream.normal(k);
            v[k] = cfg.truncate_v ? std::clamp(x, -3.0, 3.0) : x;
        }
        double jvp = loss_jvp(model, problem, paths, v, cfg.threads);
        axpy(grad, jvp, v);
    }
    for (double& gv : grad) gv /= double(cfg.v_samples);
    return grad;
}

// Central differences over every trainable. Xhat never depends on the
// trainables, so paths and the unperturbed step outputs are computed once;
// perturbing a parameter of net_n only reruns that network and the uhat
// recursion from step n+1 on.
template <StepNetwork Net>
Vec gradient_numerical(const BsdeModel<Net>& model, const PdeProblem& problem,
                       const sde::PathBatch& paths, double h) {
    require(h > 0.0, "gradient_numerical: step must be positive");
    std::size_t N = model.steps(), d = model.d, B = paths.batch;
    std::size_t np = model.param_size();

    std::vector<RolloutRecord> recs(B);
    Vec g_term(B);
    for (std::size_t b = 0; b < B; ++b) {
        recs[b] = rollout_path(model, problem, paths, b);
        g_term[b] = problem.g(paths.state_vec(b, N));
    }

    // Mean payoff with step `from` onward recomputed, z at `from` overridden.
    auto loss_with_z = [&](std::size_t from, const std::vector<Vec>& z_from) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            double u = recs[b].u[from];
            for (std::size_t n = from; n < N; ++n) {
                Vec x = paths.state_vec(b, n);
                const Vec& z = (n == from) ? z_from[b] : recs[b].z[n];
                double dt = model.grid.dt(n);
                double fv = problem.f(model.grid.t[n], x, u, z);
                const double* dw = paths.dw(b, n);
                double zdw = 0.0;
                for (std::size_t k = 0; k < d; ++k) zdw += z[k] * dw[k];
                u = u - fv * dt + zdw;
            }
            double diff = g_term[b] - u;
            acc += diff * diff;
        }
        return acc / double(B);
    };
    // Mean payoff recomputed from step 0 with u0 overridden.
    auto loss_with_u0 = [&](double u0) {
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            double u = u0;
            for (std::size_t n = 0; n < N; ++n) {
                Vec x = paths.state_vec(b, n);
                const Vec& z = recs[b].z[n];
                double fv = problem.f(model.grid.t[n], x, u, z);
                const double* dw = paths.dw(b, n);
                double zdw = 0.0;
                for (std::size_t k = 0; k < d; ++k) zdw += z[k] * dw[k];
                u = u - fv * model.grid.dt(n) + zdw;
            }
            double diff = g_term[b] - u;
            acc += diff * diff;
        }
        return acc / double(B);
    };

    Vec grad(np, 0.0);
    if (h < 1e-300) throw NumericError("gradient_numerical: zero-denominator step");
    grad[0] = (loss_with_u0(model.u0 + h) - loss_with_u0(model.u0 - h)) / (2.0 * h);

    std::vector<Vec> z_scratch(B, Vec(d));
    for (std::size_t k = 0; k < d; ++k) {
        for (int sign : {+1, -1}) {
            for (std::size_t b = 0; b < B; ++b) {
                z_scratch[b] = recs[b].z[0];
                z_scratch[b][k] += sign * h;
            }
            double l = loss_with_z(0, z_scratch);
            grad[1 + k] += double(sign) * l / (2.0 * h);
        }
    }

    std::size_t off = 1 + d;
    for (std::size_t i = 0; i < model.nets.size(); ++i) {
        Net scratch = model.nets[i];
        Vec theta = step_net_get_params(scratch);
        std::size_t step = i + 1;
        for (std::size_t pidx = 0; pidx < theta.size(); ++pidx) {
            double saved = theta[pidx];
            double acc = 0.0;
            for (int sign : {+1, -1}) {
                theta[pidx] = saved + sign * h;
                step_net_set_params(scratch, theta);
                for (std::size_t b = 0; b < B; ++b)
                    z_scratch[b] = step_net_forward(scratch, paths.state_vec(b, step));
                acc += double(sign) * loss_with_z(step, z_scratch);
            }
            theta[pidx] = saved;
            grad[off + pidx] = acc / (2.0 * h);
        }
        step_net_set_params(scratch, theta);
        off += theta.size();
    }
    return grad;
}

template <StepNetwork Net>
Vec estimate_gradient(const BsdeModel<Net>& model, const PdeProblem& problem,
                      const sde::PathBatch& paths, const TrainConfig& cfg,
                      std::uint64_t iteration = 0) {
    switch (cfg.estimator) {
        case GradientEstimator::backprop:
            return gradient_backprop(model, problem, paths, cfg.threads);
        case GradientEstimator::forward_gradient:
            return gradient_forward(model, problem, paths, cfg, iteration);
        case GradientEstimator::numerical:
            return gradient_numerical(model, problem, paths, cfg.h);
    }
    throw InvalidArgument("estimate_gradient: unknown estimator");
}

// Per-entry clip; never changes the sign of an entry.
inline void clip_gradient(Vec& grad, double clip) {
    if (clip <= 0.0) return;
    for (double& gv : grad) gv = std::clamp(gv, -clip, clip);
}

// ----- training loop -----

struct LossHistory {
    struct Entry {
        std::size_t iteration;
        double loss;
        double u0;
        double wall_ms;
    };
    std::vector<Entry> entries;
};

template <StepNetwork Net>
LossHistory train(BsdeModel<Net>& model, const PdeProblem& problem, const TrainConfig& cfg) {
    require(cfg.eta >= 0.0 && cfg.batch >= 1, "train: bad config");
    if (cfg.estimator == GradientEstimator::numerical) require(cfg.h > 0.0, "train: h must be positive");
    LossHistory history;
    sde::SdeSpec spec = problem.to_sde();
    auto start = std::chrono::steady_clock::now();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        auto inc = sde::sample_increments(model.grid, model.d, cfg.batch, cfg.seed, it);
        sde::PathBatch paths = sde::euler_maruyama(spec, model.grid, std::move(inc), cfg.threads);
        double loss = loss_batch(model, problem, paths, cfg.threads);
        if (!std::isfinite(loss) || loss > 1e12)
            throw NumericError("train: diverged at iteration " + std::to_string(it) +
                               " (loss " + std::to_string(loss) + ")");
        Vec grad = estimate_gradient(model, problem, paths, cfg, it);
        clip_gradient(grad, cfg.clip);
        Vec theta = model.get_params();
        axpy(theta, -cfg.eta, grad);
        model.set_params(theta);
        double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start).count();
        history.entries.push_back({it, loss, model.u0, ms});
    }
    return history;
}

// ----- 1-D reference solver for the HJB instance -----

namespace detail {

// Crank-Nicolson for u_tau = c u_xx [+ (u_x)^2] marching tau from 0 to T on
// [-10, 10] with Dirichlet boundaries frozen at g; the nonlinear term is
// handled by a two-stage predictor-corrector.
inline double cn_solve_1d(const std::function<double(double)>& g, double T, double x0,
                          double diffusion, bool grad_squared, std::size_t space_cells,
                          std::size_t time_steps) {
    std::size_t M = space_cells;
    double lo = -10.0, hi = 10.0;
    double dx = (hi - lo) / double(M);
    double dtau = T / double(time_steps);
    std::size_t P = M + 1;
    Vec u(P);
    for (std::size_t i = 0; i < P; ++i) u[i] = g(lo + double(i) * dx);

    double r = diffusion * dtau / (dx * dx);
    // tridiagonal solve for (I - r/2 D2) u_new = rhs
    Vec a(P, -0.5 * r), bdiag(P, 1.0 + r), c(P, -0.5 * r), rhs(P), nl(P, 0.0), u_new(P);
    bdiag[0] = bdiag[P - 1] = 1.0;
    a[0] = c[0] = a[P - 1] = c[P - 1] = 0.0;

    auto nonlinear = [&](const Vec& w, Vec& out) {
        out[0] = out[P - 1] = 0.0;
        for (std::size_t i = 1; i + 1 < P; ++i) {
            double ux = (w[i + 1] - w[i - 1]) / (2.0 * dx);
            out[i] = ux * ux;
        }
    };

    Vec cp(P), dp(P);
    auto cn_step = [&](const Vec& w, const Vec& nlterm, Vec& out) {
        rhs[0] = w[0];
        rhs[P - 1] = w[P - 1];
        for (std::size_t i = 1; i + 1 < P; ++i)
            rhs[i] = w[i] + 0.5 * r * (w[i + 1] - 2.0 * w[i] + w[i - 1]) + dtau * nlterm[i];
        cp[0] = c[0] / bdiag[0];
        dp[0] = rhs[0] / bdiag[0];
        for (std::size_t i = 1; i < P; ++i) {
            double m = bdiag[i] - a[i] * cp[i - 1];
            cp[i] = c[i] / m;
            dp[i] = (rhs[i] - a[i] * dp[i - 1]) / m;
        }
        out[P - 1] = dp[P - 1];
        for (std::size_t i = P - 1; i-- > 0;) out[i] = dp[i] - cp[i] * out[i + 1];
    };

    Vec predictor(P), nl2(P, 0.0);
    for (std::size_t k = 0; k < time_steps; ++k) {
        if (grad_squared) {
            nonlinear(u, nl);
            cn_step(u, nl, predictor);
            nonlinear(predictor, nl2);
            for (std::size_t i = 0; i < P; ++i) nl[i] = 0.5 * (nl[i] + nl2[i]);
            cn_step(u, nl, u_new);
        } else {
            cn_step(u, nl, u_new);
        }
        u.swap(u_new);
    }

    double pos = (x0 - lo) / dx;
    std::size_t i0 = std::min<std::size_t>(P - 2, std::size_t(std::max(0.0, std::floor(pos))));
    double w1 = pos - double(i0);
    return (1.0 - w1) * u[i0] + w1 * u[i0 + 1];
}

} // namespace detail

// u(t0, x0) for a 1-D problem u_tau = c u_xx [+ (u_x)^2], refined until two
// successive grid doublings agree to 1e-4.
inline double reference_1d(const std::function<double(double)>& g, double T, double x0,
                           double diffusion, bool grad_squared) {
    if (T <= 0.0) return g(x0);
    double prev = 0.0;
    bool have_prev = false;
    std::size_t cells = 200;
    std::size_t steps = std::max<std::size_t>(64, std::size_t(std::ceil(T * 64.0)));
    for (int refine = 0; refine < 8; ++refine) {
        double val = detail::cn_solve_1d(g, T, x0, diffusion, grad_squared, cells, steps);
        if (have_prev && std::abs(val - prev) < 1e-4) return val;
        prev = val;
        have_prev = true;
        cells *= 2;
        steps *= 4;    // keep dtau ~ dx^2 refinement ratio
    }
    throw NumericError("reference_1d: grid refinement did not converge");
}

// Reference value of the d=1 HJB solution at (t0, x0).
inline double hjb_reference(double T, double x0) {
    PdeProblem hjb = make_hjb(1, T);
    auto g = [&](double x) { return hjb.g(Vec{x}); };
    return reference_1d(g, T, x0, 2.0, true);
}

// ----- model checkpoints (classical nets; byte-stable like the net format) -----

inline void save_model(const BsdeModel<FeedForwardNet>& model, const std::string& path) {
    std::ofstream os(path);
    require(bool(os), "save_model: cannot open " + path);
    char buf[64];
    os << "qpde-bsde v1\n";
    os << "d " << model.d << " steps " << model.steps()
       << " t0 ";
    std::snprintf(buf, sizeof buf, "%a", model.grid.t.front());
    os << buf << " T ";
    std::snprintf(buf, sizeof buf, "%a", model.grid.t.back());
    os << buf << "\nu0 ";
    std::snprintf(buf, sizeof buf, "%a", model.u0);
    os << buf << "\nz0";
    for (double z : model.z0) {
        std::snprintf(buf, sizeof buf, "%a", z);
        os << ' ' << buf;
    }
    os << "\nnets " << model.nets.size() << '\n';
    for (const FeedForwardNet& net : model.nets) autodiff::save_checkpoint(net, os);
}

inline BsdeModel<FeedForwardNet> load_model(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "load_model: cannot open " + path);
    std::string tag, ver, key;
    is >> tag >> ver;
    require(tag == "qpde-bsde" && ver == "v1", "load_model: bad header");
    BsdeModel<FeedForwardNet> model;
    std::size_t steps = 0, nets = 0;
    double t0 = 0, T = 1;
    std::string tok;
    is >> key >> model.d >> key >> steps >> key >> tok;
    t0 = std::strtod(tok.c_str(), nullptr);
    is >> key >> tok;
    T = std::strtod(tok.c_str(), nullptr);
    is >> key >> tok;
    model.u0 = std::strtod(tok.c_str(), nullptr);
    is >> key;
    model.z0.resize(model.d);
    for (double& z : model.z0) {
        is >> tok;
        z = std::strtod(tok.c_str(), nullptr);
    }
    is >> key >> nets;
    model.grid = sde::TimeGrid::uniform(t0, T, steps);
    for (std::size_t i = 0; i < nets; ++i) model.nets.push_back(autodiff::load_checkpoint(is));
    return model;
}

} // namespace qpde::bsde
