#pragma once

#include <map>
#include <string>

#include "qpde/autodiff.hpp"
#include "qpde/bsde.hpp"
#include "qpde/common.hpp"
#include "qpde/ledger.hpp"
#include "qpde/qsim.hpp"
#include "qpde/sde.hpp"

namespace qpde::pipeline {

// Micro-scale end-to-end payoff estimation: the d=1 HJB instance rolled out
// over N <= 2 steps with n_gauss-qubit Gaussian increments, estimated by
// QAMC on a dense statevector. Large-register in-superposition arithmetic is
// represented by classical callbacks on the increment labels; the query
// ledger carries the per-unitary accounting of the full circuit.

struct MicroPipelineConfig {
    std::size_t N = 2;
    int n_gauss = 3;
    double T = 0.2;
    int phase_bits = 7;
    double delta = 0.25;
    std::uint64_t seed = 0;
};

struct MicroPipelineResult {
    double estimate = 0.0;
    double exact = 0.0;
    double payoff_lo = 0.0, payoff_hi = 1.0;
    std::uint64_t prep_applications = 0;
    std::map<std::string, std::uint64_t> queries;
    int phase_bits = 0;
    std::size_t reps = 0;
};

// Arithmetic-operation count of one pipeline preparation, from the circuit
// walk-through: N time additions, d N + d^2 N multiplications and
// (d-1) d N + 2 N additions for the state updates, then 2 N + 2 d N
// operations for the uhat updates.
inline std::uint64_t micro_arith_count(std::uint64_t d, std::uint64_t N) {
    return N + d * N + d * d * N + (d - 1) * d * N + 2 * N + 2 * N + 2 * d * N;
}

inline std::map<std::string, std::uint64_t> micro_prep_profile(std::uint64_t d, std::uint64_t N) {
    return {
        {"U_X0", 1}, {"U_t0", 1}, {"U_u0", 1}, {"U_grad0", 1}, {"U_loss", 1},
        {"U_mu", N}, {"U_sigma", N}, {"U_f", N}, {"U_NN", N - 1},
        {"U_Gauss", d * N}, {"arith", micro_arith_count(d, N)},
    };
}

inline MicroPipelineResult run_micro_pipeline(const MicroPipelineConfig& cfg,
                                              ledger::QueryLedger& queries) {
    require(cfg.N >= 1 && cfg.N <= 2, "micro pipeline: N must be 1 or 2");
    require(cfg.n_gauss >= 1 && cfg.n_gauss <= 3, "micro pipeline: n_gauss must be <= 3");

    bsde::PdeProblem hjb = bsde::make_hjb(1, cfg.T);
    sde::TimeGrid grid = sde::TimeGrid::uniform(0.0, cfg.T, cfg.N);
    double dt = grid.dt(0);
    sde::DiscretizedDistribution dist = sde::discretize_gaussian(cfg.n_gauss, dt);

    // fixed tiny model: u0, z0 constants plus one [1,2,1] network when N = 2
    const double u0 = 0.3, z0 = 0.2;
    autodiff::FeedForwardNet net = autodiff::FeedForwardNet::zeros(
        {1, 2, 1}, {autodiff::Activation::tanh, autodiff::Activation::identity});
    net.weights[0](0, 0) = 0.7;
    net.weights[0](1, 0) = -0.4;
    net.biases[0] = {0.1, -0.2};
    net.weights[1](0, 0) = 0.5;
    net.weights[1](0, 1) = 0.3;
    net.biases[1] = {0.05};

    auto payoff_of_label = [&](std::uint64_t label) {
        std::uint64_t mask = (std::uint64_t(1) << cfg.n_gauss) - 1;
        double x = 0.0, u = u0;
        for (std::size_t n = 0; n < cfg.N; ++n) {
            double dw = dist.points[(label >> (n * std::uint64_t(cfg.n_gauss))) & mask];
            double z = (n == 0) ? z0 : autodiff::forward_eval(net, Vec{x})[0];
            double fv = hjb.f(grid.t[n], Vec{x}, u, Vec{z});
            u = u - fv * dt + z * dw;
            x = x + 2.0 * dw;    // mu = 0, sigma = 2
        }
        double diff = hjb.g(Vec{x}) - u;
        return diff * diff;
    };

    // exact enumeration over all increment labels
    std::size_t labels = std::size_t(1) << (cfg.N * std::size_t(cfg.n_gauss));
    MicroPipelineResult result;
    result.exact = 0.0;
    result.payoff_lo = payoff_of_label(0);
    result.payoff_hi = result.payoff_lo;
    for (std::size_t lab = 0; lab < labels; ++lab) {
        double p = 1.0;
        std::uint64_t mask = (std::uint64_t(1) << cfg.n_gauss) - 1;
        for (std::size_t n = 0; n < cfg.N; ++n)
            p *= dist.probs[(lab >> (n * std::size_t(cfg.n_gauss))) & mask];
        double v = payoff_of_label(lab);
        result.exact += p * v;
        result.payoff_lo = std::min(result.payoff_lo, v);
        result.payoff_hi = std::max(result.payoff_hi, v);
    }
    if (result.payoff_hi <= result.payoff_lo) result.payoff_hi = result.payoff_lo + 1.0;

    int work_qubits = int(cfg.N) * cfg.n_gauss;
    int ancilla = work_qubits;
    auto prep = [&]() {
        qsim::StateVector chi(work_qubits + 1);
        for (std::size_t n = 0; n < cfg.N; ++n)
            qsim::load_distribution(chi, dist, int(n) * cfg.n_gauss, cfg.n_gauss);
        return chi;
    };

    qsim::QamcOptions opt;
    opt.eps = (result.payoff_hi - result.payoff_lo) * 2.0 * M_PI / double(1 << cfg.phase_bits);
    opt.delta = cfg.delta;
    opt.max_phase_bits = cfg.phase_bits;
    SequentialRng rng(cfg.seed, StreamPurpose::measurement);
    qsim::QamcResult est = qsim::qamc_mean(prep, payoff_of_label, result.payoff_lo,
                                           result.payoff_hi, 0, work_qubits, ancilla, opt, rng);

    result.estimate = est.value;
    result.phase_bits = est.phase_bits;
    result.reps = est.reps;
    result.prep_applications = est.queries.prep_applications;
    auto before = queries.snapshot();
    queries.add_profile(micro_prep_profile(1, cfg.N), est.queries.prep_applications);
    result.queries = ledger::QueryLedger::diff(queries.snapshot(), before);
    return result;
}

} // namespace qpde::pipeline
