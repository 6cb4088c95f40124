#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "qpde/common.hpp"
#include "qpde/rng.hpp"
#include "qpde/sde.hpp"

namespace qpde::mc {

struct EstimatorResult {
    double value = 0.0;
    double half_width = 0.0;
    std::uint64_t samples_or_queries = 0;
};

// ceil(sigma^2 / (delta eps^2)), floored at one sample.
inline std::uint64_t chebyshev_samples(double sigma_sq, double eps, double delta) {
    require(eps > 0.0 && delta > 0.0, "chebyshev_samples: eps and delta must be positive");
    require(sigma_sq >= 0.0, "chebyshev_samples: negative variance");
    double k = sigma_sq / (delta * eps * eps);
    return std::max<std::uint64_t>(1, std::uint64_t(std::ceil(k)));
}

// Plain Monte Carlo mean; sampler(i) must be a pure function of the index.
// Half-width is the Chebyshev radius sqrt(var / (delta k)).
inline EstimatorResult mc_mean(const std::function<double(std::size_t)>& sampler, std::size_t k,
                               double delta = 0.01) {
    require(k >= 1, "mc_mean: need at least one sample");
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double v = sampler(i);
        sum += v;
        sum_sq += v * v;
    }
    double mean = sum / double(k);
    double var = std::max(0.0, sum_sq / double(k) - mean * mean);
    EstimatorResult r;
    r.value = mean;
    r.half_width = std::sqrt(var / (delta * double(k)));
    r.samples_or_queries = k;
    return r;
}

// Hoeffding sample count for estimating a d-dimensional bounded mean to
// l_inf error eps with probability 1-delta (constant fixed at 2).
inline std::uint64_t mvmc_samples(double B, double eps, double delta, std::size_t d) {
    require(eps > 0.0 && delta > 0.0 && d >= 1, "mvmc_samples: bad arguments");
    return std::max<std::uint64_t>(1, std::uint64_t(std::ceil(
        2.0 * B * B / (eps * eps) * std::log(2.0 * double(d) / delta))));
}

inline std::vector<EstimatorResult> mv_mc_mean(const std::function<Vec(std::size_t)>& sampler,
                                               double B, double eps, double delta, std::size_t d) {
    std::uint64_t k = mvmc_samples(B, eps, delta, d);
    Vec sum(d, 0.0);
    for (std::uint64_t i = 0; i < k; ++i) {
        Vec v = sampler(std::size_t(i));
        require(v.size() == d, "mv_mc_mean: sampler dimension mismatch");
        for (std::size_t j = 0; j < d; ++j) {
            if (std::abs(v[j]) > B)
                throw ContractViolation("mv_mc_mean: sample exceeds bound B");
            sum[j] += v[j];
        }
    }
    std::vector<EstimatorResult> out(d);
    for (std::size_t j = 0; j < d; ++j)
        out[j] = EstimatorResult{sum[j] / double(k), eps, k};
    return out;
}

// ----- multilevel Monte Carlo -----

struct MlmcPlan {
    std::size_t K = 0;                       // maximum level
    std::vector<std::size_t> grid_steps;     // per-level fine steps, 2^k * ceil(T - t0)
    std::vector<std::uint64_t> samples;      // N_k
    double r = 0.5;                          // scheme strong order, recorded
};

struct MlmcLevelStats {
    std::size_t level = 0;
    std::uint64_t samples = 0;
    double mean_correction = 0.0;
    double variance = 0.0;
    double cost = 0.0;    // fine+coarse steps per sample
};

struct MlmcResult {
    EstimatorResult total;
    MlmcPlan plan;
    std::vector<MlmcLevelStats> levels;
};

// Coarse increments are exact pairwise sums of the fine increments (same
// Brownian path, half the steps).
inline Vec coarsen_increments(const Vec& fine, std::size_t d) {
    std::size_t fine_steps = fine.size() / d;
    require(fine_steps % 2 == 0, "coarsen_increments: odd step count");
    Vec coarse((fine_steps / 2) * d, 0.0);
    for (std::size_t n = 0; n < fine_steps / 2; ++n)
        for (std::size_t k = 0; k < d; ++k)
            coarse[n * d + k] = fine[(2 * n) * d + k] + fine[(2 * n + 1) * d + k];
    return coarse;
}

namespace detail {

// One coupled sample of P_k - P_{k-1} (or P_0 alone at level 0).
inline double coupled_correction(const sde::SdeSpec& spec,
                                 const std::function<double(const Vec&)>& payoff,
                                 std::size_t level, std::size_t base_steps,
                                 std::uint64_t seed, std::uint64_t sample_index) {
    std::size_t fine_steps = base_steps << level;
    sde::TimeGrid fine_grid = sde::TimeGrid::uniform(spec.t0, spec.T, fine_steps);
    auto inc = sde::sample_increments(fine_grid, spec.d, 1, seed, (level << 32) | sample_index);
    sde::PathBatch fine = sde::euler_maruyama(spec, fine_grid, inc);
    double p_fine = payoff(fine.state_vec(0, fine_steps));
    if (level == 0) return p_fine;
    sde::TimeGrid coarse_grid = sde::TimeGrid::uniform(spec.t0, spec.T, fine_steps / 2);
    std::vector<Vec> coarse_inc{coarsen_increments(fine.increments[0], spec.d)};
    sde::PathBatch coarse = sde::euler_maruyama(spec, coarse_grid, std::move(coarse_inc));
    return p_fine - payoff(coarse.state_vec(0, fine_steps / 2));
}

} // namespace detail

// Telescoping estimator Y = sum_k Y_k with coupled coarse/fine paths and
// Giles-style allocation N_k proportional to sqrt(V_k / C_k), sized so that
// sum_k V_k / N_k <= eps^2 / 2. Half-width reported is one standard error.
inline MlmcResult mlmc_estimate(const sde::SdeSpec& spec,
                                const std::function<double(const Vec&)>& payoff,
                                double eps, double r, std::uint64_t seed,
                                std::uint64_t level_budget = 50'000'000,
                                std::size_t pilot = 128) {
    require(eps > 0.0 && eps < 1.0, "mlmc_estimate: eps must be in (0,1)");
    std::size_t base_steps = std::max<std::size_t>(1, std::size_t(std::ceil(spec.T - spec.t0)));
    MlmcResult out;
    out.plan.K = std::size_t(std::ceil(std::log2(2.0 / eps)));
    out.plan.r = r;

    std::size_t K = out.plan.K;
    std::vector<double> pilot_mean(K + 1), pilot_var(K + 1), cost(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        out.plan.grid_steps.push_back(base_steps << k);
        cost[k] = double(base_steps << k) + (k > 0 ? double(base_steps << (k - 1)) : 0.0);
        double s = 0, s2 = 0;
        for (std::size_t i = 0; i < pilot; ++i) {
            double y = detail::coupled_correction(spec, payoff, k, base_steps, seed, i);
            s += y;
            s2 += y * y;
        }
        pilot_mean[k] = s / double(pilot);
        pilot_var[k] = std::max(1e-30, s2 / double(pilot) - pilot_mean[k] * pilot_mean[k]);
    }

    double sum_sqrt_vc = 0.0;
    for (std::size_t k = 0; k <= K; ++k) sum_sqrt_vc += std::sqrt(pilot_var[k] * cost[k]);
    out.plan.samples.resize(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        double nk = 2.0 / (eps * eps) * std::sqrt(pilot_var[k] / cost[k]) * sum_sqrt_vc;
        std::uint64_t n = std::max<std::uint64_t>(pilot, std::uint64_t(std::ceil(nk)));
        if (n > level_budget)
            throw InvalidArgument("mlmc_estimate: level " + std::to_string(k) +
                                  " needs " + std::to_string(n) + " samples, over budget");
        out.plan.samples[k] = n;
    }

    double total = 0.0, total_var = 0.0;
    std::uint64_t total_fine_steps = 0;
    for (std::size_t k = 0; k <= K; ++k) {
        std::uint64_t n = out.plan.samples[k];
        double s = 0, s2 = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            double y = detail::coupled_correction(spec, payoff, k, base_steps, seed, i);
            s += y;
            s2 += y * y;
        }
        double mean = s / double(n);
        double var = std::max(0.0, s2 / double(n) - mean * mean);
        out.levels.push_back({k, n, mean, var, cost[k]});
        total += mean;
        total_var += var / double(n);
        total_fine_steps += n * std::uint64_t(cost[k]);
    }
    out.total.value = total;
    out.total.half_width = std::sqrt(total_var);
    out.total.samples_or_queries = total_fine_steps;
    return out;
}

// ----- closed-form complexity and error-budget formulas (constant 1) -----

inline double mlmc_sample_complexity(double eps, double r) {
    require(eps > 0.0 && eps < 1.0 && r > 0.0, "mlmc_sample_complexity: bad arguments");
    double li = std::log(1.0 / eps);
    if (r > 0.5) return 1.0 / (eps * eps);
    if (r == 0.5) return li * li / (eps * eps);
    return std::pow(eps, -1.0 / r);
}

inline double qamlmc_sample_complexity(double eps, double r) {
    require(eps > 0.0 && eps < 1.0 && r > 0.0, "qamlmc_sample_complexity: bad arguments");
    double li = std::log(1.0 / eps);
    double lli = std::log(li);
    if (r > 1.0) return std::pow(li, 1.5) * lli * lli / eps;
    if (r == 1.0) return std::pow(li, 3.5) * lli * lli / eps;
    return std::pow(eps, -1.0 / r) * std::pow(li, 1.5) * lli * lli;
}

// Left/right Riemann-sum error bound for M nested integrals of an
// L-Lipschitz integrand over [a,b]^M with n cells per axis.
inline double riemann_error_bound(double L, double a, double b, std::size_t M, std::size_t n) {
    require(b > a && n >= 1 && M >= 1, "riemann_error_bound: bad arguments");
    return double(M) * L * std::pow(std::abs(b - a), double(M) + 1.0) / (2.0 * double(n));
}

// Cells needed so the Gaussian-increment discretization error stays below
// eps/3: N_Gauss >= 3 N d L_fp |6 dt|^{Nd+1} / (2 eps). Returned in log2 so
// the astronomically large/small regimes stay representable.
inline double ngauss_bound_log2(double N, double d, double L_fp, double dt, double eps) {
    require(eps > 0.0 && dt > 0.0, "ngauss_bound_log2: bad arguments");
    return std::log2(3.0 * N * d * std::max(L_fp, 1e-300) / (2.0 * eps)) +
           (N * d + 1.0) * std::log2(6.0 * dt);
}

inline double ngauss_bound(double N, double d, double L_fp, double dt, double eps) {
    return std::exp2(ngauss_bound_log2(N, d, L_fp, dt, eps));
}

inline int ngauss_qubits(double N, double d, double L_fp, double dt, double eps) {
    return std::max(1, int(std::ceil(ngauss_bound_log2(N, d, L_fp, dt, eps))));
}

struct ErrorBudget {
    std::uint64_t N = 0;               // time steps, ceil(eps^{-1/r})
    double n_gauss_log2 = 0.0;         // log2 of the N_Gauss lower bound
    int n_gauss = 0;                   // qubits per univariate Gaussian
    double samples_classical = 0.0;    // Chebyshev count at eps/3
    double queries_quantum = 0.0;      // QAMC count at eps/3
};

// Splits eps into thirds across the discretization / Gaussian-loading /
// estimation error terms and sizes each piece.
inline ErrorBudget error_budget(double eps, double r, double d, double L_fp, double dt,
                                double lambda_max = 1.0) {
    require(eps > 0.0 && eps < 1.0 && r > 0.0, "error_budget: bad arguments");
    ErrorBudget b;
    b.N = std::uint64_t(std::ceil(std::pow(eps, -1.0 / r)));
    b.n_gauss_log2 = ngauss_bound_log2(double(b.N), d, L_fp, dt, eps);
    b.n_gauss = std::max(1, int(std::ceil(b.n_gauss_log2)));
    double eps3 = eps / 3.0;
    b.samples_classical = lambda_max * lambda_max / (eps3 * eps3);
    b.queries_quantum = lambda_max / eps3;
    return b;
}

} // namespace qpde::mc
