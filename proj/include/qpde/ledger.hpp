#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "qpde/common.hpp"
#include "qpde/rng.hpp"

namespace qpde::ledger {

// Fixed set of unitary names the budget formulas speak about.
inline const std::vector<std::string>& unitary_names() {
    static const std::vector<std::string> names = {
        "U_X0", "U_t0", "U_u0", "U_grad0", "U_mu", "U_sigma",
        "U_f", "U_NN", "U_Gauss", "U_loss", "arith"};
    return names;
}

// Monotone per-unitary call counters with snapshot/diff support.
class QueryLedger {
public:
    QueryLedger() {
        for (const std::string& n : unitary_names()) counters_[n] = 0;
    }

    void add(const std::string& name, std::uint64_t count) {
        auto it = counters_.find(name);
        require(it != counters_.end(), "QueryLedger: unknown unitary " + name);
        it->second.fetch_add(count, std::memory_order_relaxed);
    }

    // Scaled bundle: every prep of the pipeline touches several unitaries.
    void add_profile(const std::map<std::string, std::uint64_t>& profile, std::uint64_t times) {
        for (const auto& [name, per] : profile) add(name, per * times);
    }

    std::uint64_t count(const std::string& name) const {
        auto it = counters_.find(name);
        require(it != counters_.end(), "QueryLedger: unknown unitary " + name);
        return it->second.load(std::memory_order_relaxed);
    }

    std::map<std::string, std::uint64_t> snapshot() const {
        std::map<std::string, std::uint64_t> out;
        for (const auto& [name, c] : counters_) out[name] = c.load(std::memory_order_relaxed);
        return out;
    }

    static std::map<std::string, std::uint64_t> diff(const std::map<std::string, std::uint64_t>& after,
                                                     const std::map<std::string, std::uint64_t>& before) {
        std::map<std::string, std::uint64_t> out;
        for (const auto& [name, c] : after) out[name] = c - before.at(name);
        return out;
    }

    void write_csv(std::ostream& os) const {
        os << "unitary,count\n";
        for (const auto& [name, c] : snapshot()) os << name << ',' << c << '\n';
    }

private:
    std::map<std::string, std::atomic<std::uint64_t>> counters_;
};

// ----- gradient-method query complexities (constant 1, logs dropped) -----

enum class SamplingMode { classical, quantum };

inline SamplingMode mode_from_string(const std::string& s) {
    if (s == "classical" || s == "C") return SamplingMode::classical;
    if (s == "quantum" || s == "Q") return SamplingMode::quantum;
    throw InvalidArgument("unknown sampling mode: " + s);
}

enum class GradientMethod { backprop, forward_gradient, numerical };

struct ComplexityQuery {
    GradientMethod method = GradientMethod::backprop;
    SamplingMode x_mode = SamplingMode::classical;
    SamplingMode v_mode = SamplingMode::classical;    // forward gradient only
    double d = 1.0;
    double g_max = 1.0;
    double eps = 0.1;
};

// The seven tabulated rows, with n_theta replaced by d^2. Only the listed
// (method, mode) combinations exist; anything else is rejected.
inline double gradient_method_complexity(const ComplexityQuery& q) {
    require(q.eps > 0 && q.d >= 1 && q.g_max >= 0, "gradient_method_complexity: bad inputs");
    const double d = q.d, g = q.g_max, eps = q.eps;
    const bool xq = q.x_mode == SamplingMode::quantum;
    const bool vq = q.v_mode == SamplingMode::quantum;
    switch (q.method) {
        case GradientMethod::backprop:
            return xq ? d * d * std::sqrt(g) / eps : g / (eps * eps);
        case GradientMethod::numerical:
            return xq ? std::pow(d, 2.5) * std::sqrt(g) / eps : d * d * g / (eps * eps);
        case GradientMethod::forward_gradient:
            if (!xq && !vq) return std::pow(d, 4.0) * g / (eps * eps);
            if (xq && !vq) return std::pow(d, 5.0) * std::pow(g, 1.5) / (eps * eps * eps);
            if (xq && vq) return std::pow(d, 2.5) * std::sqrt(g) / eps;
            throw InvalidArgument("gradient_method_complexity: classical X with quantum v is not listed");
    }
    throw InvalidArgument("gradient_method_complexity: unknown method");
}

// ----- per-unitary budgets for the payoff-estimation pipeline -----

struct UnitaryBudget {
    double init = 0;       // U_X0, U_t0, U_u0, U_grad0, U_loss each
    double step = 0;       // U_mu, U_sigma, U_f, U_NN each
    double gauss = 0;      // U_Gauss
    double arith = 0;      // arithmetic operations
};

// Loss-estimation budgets: quantum lambda/eps vs classical lambda^2/eps^2
// multipliers. Solution mode substitutes N = eps^{-1/r}.
inline UnitaryBudget theoretical_budget(SamplingMode mode, double N, double d, double eps,
                                        double lambda_max) {
    require(eps > 0 && N >= 1 && d >= 1, "theoretical_budget: bad inputs");
    double base = (mode == SamplingMode::quantum) ? lambda_max / eps
                                                  : lambda_max * lambda_max / (eps * eps);
    return {base, N * base, d * N * base, d * d * N * base};
}

inline UnitaryBudget solution_budget(SamplingMode mode, double r, double d, double eps,
                                     double lambda_max) {
    require(r > 0, "solution_budget: strong order must be positive");
    return theoretical_budget(mode, std::pow(eps, -1.0 / r), d, eps, lambda_max);
}

// lambda_max^2 = K_fp (1 + K2 dt^{2r} + C (1 + ||x0||^2)).
inline double payoff_variance_bound(double K_fp, double K2, double dt, double r, double C,
                                    const Vec& x0) {
    require(K_fp >= 0 && K2 >= 0 && dt >= 0 && C >= 0, "payoff_variance_bound: negative inputs");
    return K_fp * (1.0 + K2 * std::pow(dt, 2.0 * r) + C * (1.0 + norm2_sq(x0)));
}

// Queries to estimate E[f_NN(X)] with QAMC: (L + |f(0)|^2)(1 + E||X||^2)/eps.
inline double loss_estimation_budget(double L, double f0, double E_X2, double eps) {
    require(eps > 0, "loss_estimation_budget: eps must be positive");
    return (L + f0 * f0) * (1.0 + E_X2) / eps;
}

// ----- empirical scaling fits -----

struct SlopeFit {
    double slope = 0;
    double ci_lo = 0, ci_hi = 0;    // bootstrap 95% band
};

// Log-log least-squares slope of (queries, error) pairs with a bootstrap
// confidence interval.
inline SlopeFit scaling_fit(const std::vector<std::pair<double, double>>& points,
                            std::uint64_t seed = 1, std::size_t bootstrap = 1000) {
    require(points.size() >= 4, "scaling_fit: need at least 4 points");
    Vec lx, ly;
    for (auto [q, e] : points) {
        require(q > 0 && e > 0, "scaling_fit: values must be positive");
        lx.push_back(std::log(q));
        ly.push_back(std::log(e));
    }
    SlopeFit fit;
    fit.slope = ls_slope(lx, ly);
    SequentialRng rng(seed, StreamPurpose::generic);
    Vec slopes;
    slopes.reserve(bootstrap);
    Vec bx(points.size()), by(points.size());
    for (std::size_t rep = 0; rep < bootstrap; ++rep) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            std::size_t j = std::size_t(rng.below(points.size()));
            bx[i] = lx[j];
            by[i] = ly[j];
        }
        double mx = bx[0];
        bool degenerate = true;
        for (double v : bx)
            if (v != mx) { degenerate = false; break; }
        if (degenerate) continue;
        slopes.push_back(ls_slope(bx, by));
    }
    std::sort(slopes.begin(), slopes.end());
    if (!slopes.empty()) {
        fit.ci_lo = slopes[std::size_t(0.025 * double(slopes.size()))];
        fit.ci_hi = slopes[std::min(slopes.size() - 1, std::size_t(0.975 * double(slopes.size())))];
    }
    return fit;
}

} // namespace qpde::ledger
