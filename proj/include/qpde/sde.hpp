#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "qpde/common.hpp"
#include "qpde/rng.hpp"

namespace qpde::sde {

// dX_t = mu(t, X_t) dt + sigma(t, X_t) dW_t on [t0, T], X_{t0} = x0.
struct SdeSpec {
    std::size_t d = 1;
    std::function<Vec(double, const Vec&)> mu;
    std::function<Mat(double, const Vec&)> sigma;
    Vec x0;
    double t0 = 0.0;
    double T = 1.0;
};

struct TimeGrid {
    std::vector<double> t;    // t_0 .. t_N

    static TimeGrid uniform(double t0, double T, std::size_t steps) {
        require(T > t0, "TimeGrid: T must exceed t0");
        require(steps >= 1, "TimeGrid: need at least one step");
        TimeGrid g;
        g.t.resize(steps + 1);
        for (std::size_t n = 0; n <= steps; ++n)
            g.t[n] = t0 + (T - t0) * double(n) / double(steps);
        g.t.back() = T;
        return g;
    }

    std::size_t steps() const { return t.size() - 1; }
    double dt(std::size_t n) const { return t[n + 1] - t[n]; }
};

// Brownian increments and the Euler states they generate.
// increments[b][n] and states[b][n] are d-vectors; states[b][0] = x0.
struct PathBatch {
    std::size_t batch = 0, steps = 0, d = 0;
    std::vector<Vec> increments;    // batch x (steps*d), step-major
    std::vector<Vec> states;        // batch x ((steps+1)*d)

    const double* dw(std::size_t b, std::size_t n) const { return &increments[b][n * d]; }
    const double* state(std::size_t b, std::size_t n) const { return &states[b][n * d]; }
    Vec state_vec(std::size_t b, std::size_t n) const {
        const double* p = state(b, n);
        return Vec(p, p + d);
    }
};

// Increment (b, n, k) ~ N(0, dt_n), keyed by (seed, purpose, path, step) so
// any scheduling produces the same numbers.
inline std::vector<Vec> sample_increments(const TimeGrid& grid, std::size_t d, std::size_t batch,
                                          std::uint64_t seed, std::uint64_t stream_id = 0) {
    require(batch >= 1, "sample_increments: batch must be >= 1");
    std::size_t N = grid.steps();
    std::vector<Vec> inc(batch, Vec(N * d, 0.0));
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t n = 0; n < N; ++n) {
            RngStream stream(seed, StreamPurpose::increments, stream_id * 0x10000 + b, n);
            double sd = std::sqrt(grid.dt(n));
            for (std::size_t k = 0; k < d; ++k)
                inc[b][n * d + k] = sd * stream.normal(k);
        }
    }
    return inc;
}

// X_{n+1} = X_n + mu(t_n, X_n) dt_n + sigma(t_n, X_n) dW_n.
inline PathBatch euler_maruyama(const SdeSpec& spec, const TimeGrid& grid,
                                std::vector<Vec> increments, unsigned threads = 1) {
    std::size_t N = grid.steps();
    std::size_t d = spec.d;
    require(!increments.empty(), "euler_maruyama: empty batch");
    for (const Vec& row : increments)
        require(row.size() == N * d, "euler_maruyama: increment shape mismatch");
    require(spec.x0.size() == d, "euler_maruyama: x0 dimension mismatch");

    PathBatch out;
    out.batch = increments.size();
    out.steps = N;
    out.d = d;
    out.increments = std::move(increments);
    out.states.assign(out.batch, Vec((N + 1) * d, 0.0));

    std::vector<std::string> errors(out.batch);
    parallel_for(out.batch, threads, [&](std::size_t b) {
        Vec x = spec.x0;
        for (std::size_t k = 0; k < d; ++k) out.states[b][k] = x[k];
        for (std::size_t n = 0; n < N; ++n) {
            double tn = grid.t[n];
            double dt = grid.dt(n);
            Vec drift = spec.mu(tn, x);
            Mat sig = spec.sigma(tn, x);
            const double* dw = out.dw(b, n);
            for (std::size_t i = 0; i < d; ++i) {
                double acc = x[i] + drift[i] * dt;
                for (std::size_t j = 0; j < d; ++j) acc += sig(i, j) * dw[j];
                x[i] = acc;
            }
            if (!all_finite(x)) {
                errors[b] = "euler_maruyama: non-finite state on path " + std::to_string(b) +
                            " at step " + std::to_string(n + 1);
                return;
            }
            for (std::size_t k = 0; k < d; ++k) out.states[b][(n + 1) * d + k] = x[k];
        }
    });
    for (const std::string& e : errors)
        if (!e.empty()) throw NumericError(e);
    return out;
}

// Fits the slope of log E[sup_n ||Xhat - X||_2] against log dt over a set of
// uniform grids. `analytic` must return the exact pathwise solution at every
// grid point, given the same Brownian increments.
using AnalyticPath = std::function<std::vector<Vec>(const TimeGrid&, const Vec& increments)>;

inline double empirical_strong_order(const SdeSpec& spec, const AnalyticPath& analytic,
                                     const std::vector<std::size_t>& grid_steps, std::size_t batch,
                                     std::uint64_t seed) {
    require(grid_steps.size() >= 3, "empirical_strong_order: need at least 3 grids");
    Vec log_dt, log_err;
    for (std::size_t gi = 0; gi < grid_steps.size(); ++gi) {
        TimeGrid grid = TimeGrid::uniform(spec.t0, spec.T, grid_steps[gi]);
        auto inc = sample_increments(grid, spec.d, batch, seed, gi);
        PathBatch paths = euler_maruyama(spec, grid, inc);
        double mean_sup = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            std::vector<Vec> exact = analytic(grid, paths.increments[b]);
            double sup = 0.0;
            for (std::size_t n = 0; n <= grid.steps(); ++n) {
                double err2 = 0.0;
                for (std::size_t k = 0; k < spec.d; ++k) {
                    double e = paths.state(b, n)[k] - exact[n][k];
                    err2 += e * e;
                }
                sup = std::max(sup, std::sqrt(err2));
            }
            mean_sup += sup;
        }
        mean_sup /= double(batch);
        log_dt.push_back(std::log((spec.T - spec.t0) / double(grid_steps[gi])));
        log_err.push_back(std::log(mean_sup));
    }
    return ls_slope(log_dt, log_err);
}

// Discretized distribution over a real grid; the substrate for quantum
// distribution loading.
struct DiscretizedDistribution {
    Vec points;      // 2^n_bits grid values
    Vec probs;       // renormalized, sums to 1
    int n_bits = 0;

    double mean() const {
        double m = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) m += probs[i] * points[i];
        return m;
    }
    double variance() const {
        double m = mean(), v = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) v += probs[i] * (points[i] - m) * (points[i] - m);
        return v;
    }
};

// N(0, dt) truncated to +-3 sqrt(dt), 2^n_bits uniform cells; each cell is
// represented by its midpoint with a density-times-width weight, renormalized
// after truncation (the discarded tail mass is about 0.003).
inline DiscretizedDistribution discretize_gaussian(int n_bits, double variance) {
    require(n_bits >= 1, "discretize_gaussian: need at least one bit");
    require(variance >= 0.0, "discretize_gaussian: negative variance");
    std::size_t cells = std::size_t(1) << n_bits;
    DiscretizedDistribution dist;
    dist.n_bits = n_bits;
    dist.points.resize(cells);
    dist.probs.resize(cells);
    double sd = std::sqrt(variance);
    double lo = -3.0 * sd, hi = 3.0 * sd;
    double dx = (hi - lo) / double(cells);
    if (sd == 0.0) {
        dist.points.assign(cells, 0.0);
        dist.probs.assign(cells, 1.0 / double(cells));
        return dist;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
        double x = lo + (double(i) + 0.5) * dx;
        double pdf = std::exp(-x * x / (2.0 * variance)) / (sd * std::sqrt(2.0 * M_PI));
        dist.points[i] = x;
        dist.probs[i] = pdf * dx;
        total += pdf * dx;
    }
    for (double& p : dist.probs) p /= total;
    return dist;
}

// Binary path dump: header (batch, N, d, seed) as little-endian u64 followed
// by increments then states as raw doubles.
inline void dump_paths(const PathBatch& paths, std::uint64_t seed, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(bool(os), "dump_paths: cannot open " + path);
    std::uint64_t header[4] = {paths.batch, paths.steps, paths.d, seed};
    os.write(reinterpret_cast<const char*>(header), sizeof header);
    for (const Vec& row : paths.increments)
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(double)));
    for (const Vec& row : paths.states)
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(double)));
}

inline PathBatch load_paths(const std::string& path, std::uint64_t* seed_out = nullptr) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), "load_paths: cannot open " + path);
    std::uint64_t header[4];
    is.read(reinterpret_cast<char*>(header), sizeof header);
    require(bool(is), "load_paths: truncated header");
    PathBatch out;
    out.batch = header[0];
    out.steps = header[1];
    out.d = header[2];
    if (seed_out) *seed_out = header[3];
    out.increments.assign(out.batch, Vec(out.steps * out.d));
    out.states.assign(out.batch, Vec((out.steps + 1) * out.d));
    for (Vec& row : out.increments)
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(double)));
    for (Vec& row : out.states)
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(double)));
    require(bool(is), "load_paths: truncated payload");
    return out;
}

} // namespace qpde::sde
