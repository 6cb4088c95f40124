#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "qpde/mc.hpp"
#include "qpde/sde.hpp"
#include "test_util.hpp"

using namespace qpde;
using namespace qpde::sde;

namespace {

SdeSpec gbm_spec(double a, double b, double x0, double T) {
    SdeSpec s;
    s.d = 1;
    s.x0 = {x0};
    s.T = T;
    s.mu = [a](double, const Vec& x) { return Vec{a * x[0]}; };
    s.sigma = [b](double, const Vec& x) {
        Mat m(1, 1);
        m(0, 0) = b * x[0];
        return m;
    };
    return s;
}

} // namespace

TEST_CASE("increment sampling") {
    TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 10);

    SECTION("two runs with identical seeds are bit-identical") {
        auto a = sample_increments(grid, 3, 4, 123);
        auto b = sample_increments(grid, 3, 4, 123);
        CHECK(a == b);
        auto c = sample_increments(grid, 3, 4, 124);
        CHECK(a != c);
    }
    SECTION("zero-length step gives zero increments") {
        TimeGrid degenerate;
        degenerate.t = {0.0, 0.0, 1.0};
        auto inc = sample_increments(degenerate, 2, 3, 7);
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t k = 0; k < 2; ++k) CHECK(inc[b][k] == 0.0);
    }
    SECTION("moments match N(0, dt) at one million samples") {
        TimeGrid one = TimeGrid::uniform(0.0, 0.1, 1);
        const std::size_t n = 1'000'000;
        auto inc = sample_increments(one, 1, n, 99);
        double mean = 0, var = 0;
        for (std::size_t b = 0; b < n; ++b) mean += inc[b][0];
        mean /= double(n);
        for (std::size_t b = 0; b < n; ++b) var += (inc[b][0] - mean) * (inc[b][0] - mean);
        var /= double(n - 1);
        double sd = std::sqrt(0.1);
        CHECK(std::abs(mean) <= 4.0 * sd / std::sqrt(double(n)));
        CHECK(var == Catch::Approx(0.1).epsilon(0.01));
    }
}

TEST_CASE("euler_maruyama") {
    SECTION("deterministic drift integrates time exactly") {
        SdeSpec s;
        s.d = 1;
        s.x0 = {0.0};
        s.T = 1.0;
        s.mu = [](double, const Vec&) { return Vec{1.0}; };
        s.sigma = [](double, const Vec&) { return Mat(1, 1); };
        TimeGrid grid = TimeGrid::uniform(0, 1, 10);
        auto paths = euler_maruyama(s, grid, sample_increments(grid, 1, 2, 5));
        for (std::size_t n = 0; n <= 10; ++n)
            CHECK(paths.state(0, n)[0] == Catch::Approx(grid.t[n]).margin(1e-15));
    }
    SECTION("pure random walk telescopes the increments") {
        SdeSpec s;
        s.d = 2;
        s.x0 = {1.0, -1.0};
        s.T = 1.0;
        s.mu = [](double, const Vec&) { return Vec{0.0, 0.0}; };
        s.sigma = [](double, const Vec&) { return Mat::identity(2); };
        TimeGrid grid = TimeGrid::uniform(0, 1, 16);
        auto paths = euler_maruyama(s, grid, sample_increments(grid, 2, 3, 9));
        for (std::size_t b = 0; b < 3; ++b) {
            for (std::size_t k = 0; k < 2; ++k) {
                double acc = s.x0[k];
                for (std::size_t n = 0; n < 16; ++n) acc += paths.dw(b, n)[k];
                CHECK(paths.state(b, 16)[k] == Catch::Approx(acc).margin(1e-12));
            }
        }
    }
    SECTION("euler recursion residual is exactly zero when recomputed") {
        SdeSpec s = gbm_spec(0.1, 0.3, 1.0, 1.0);
        TimeGrid grid = TimeGrid::uniform(0, 1, 8);
        auto paths = euler_maruyama(s, grid, sample_increments(grid, 1, 4, 11));
        for (std::size_t b = 0; b < 4; ++b) {
            double x = 1.0;
            for (std::size_t n = 0; n < 8; ++n) {
                x = x + 0.1 * x * grid.dt(n) + 0.3 * x * paths.dw(b, n)[0];
                CHECK(paths.state(b, n + 1)[0] == x);    // bitwise
            }
        }
    }
    SECTION("thread count does not change results") {
        SdeSpec s = gbm_spec(0.05, 0.2, 1.0, 1.0);
        TimeGrid grid = TimeGrid::uniform(0, 1, 16);
        auto inc = sample_increments(grid, 1, 32, 13);
        auto p1 = euler_maruyama(s, grid, inc, 1);
        auto p4 = euler_maruyama(s, grid, inc, 4);
        CHECK(p1.states == p4.states);
    }
    SECTION("non-finite states are reported with path and step") {
        SdeSpec s;
        s.d = 1;
        s.x0 = {1.0};
        s.T = 1.0;
        s.mu = [](double, const Vec& x) { return Vec{x[0] * 1e200}; };
        s.sigma = [](double, const Vec&) { return Mat(1, 1); };
        TimeGrid grid = TimeGrid::uniform(0, 1, 4);
        CHECK_THROWS_AS(euler_maruyama(s, grid, sample_increments(grid, 1, 1, 3)), NumericError);
    }
}

TEST_CASE("empirical strong order") {
    std::vector<std::size_t> grids{8, 16, 32, 64, 128};

    SECTION("additive noise with time-linear drift converges at first order") {
        SdeSpec s;
        s.d = 1;
        s.x0 = {0.5};
        s.T = 1.0;
        s.mu = [](double t, const Vec&) { return Vec{t}; };
        s.sigma = [](double, const Vec&) {
            Mat m(1, 1);
            m(0, 0) = 0.4;
            return m;
        };
        // X_t = x0 + t^2/2 + 0.4 W_t exactly, given W on the grid
        AnalyticPath exact = [](const TimeGrid& grid, const Vec& inc) {
            std::vector<Vec> path(grid.steps() + 1);
            double w = 0;
            path[0] = {0.5};
            for (std::size_t n = 0; n < grid.steps(); ++n) {
                w += inc[n];
                path[n + 1] = {0.5 + grid.t[n + 1] * grid.t[n + 1] / 2.0 + 0.4 * w};
            }
            return path;
        };
        double r = empirical_strong_order(s, exact, grids, 400, 17);
        CHECK(r > 0.85);
        CHECK(r < 1.15);
    }
    SECTION("geometric Brownian motion converges at order one half") {
        double a = 0.1, b = 0.4;
        SdeSpec s = gbm_spec(a, b, 1.0, 1.0);
        AnalyticPath exact = [=](const TimeGrid& grid, const Vec& inc) {
            std::vector<Vec> path(grid.steps() + 1);
            double w = 0;
            path[0] = {1.0};
            for (std::size_t n = 0; n < grid.steps(); ++n) {
                w += inc[n];
                path[n + 1] = {std::exp((a - b * b / 2.0) * grid.t[n + 1] + b * w)};
            }
            return path;
        };
        double r = empirical_strong_order(s, exact, grids, 800, 23);
        CHECK(r > 0.35);
        CHECK(r < 0.65);
    }
    SECTION("deterministic dynamics converge at first order") {
        SdeSpec s;
        s.d = 1;
        s.x0 = {1.0};
        s.T = 1.0;
        s.mu = [](double, const Vec& x) { return Vec{x[0]}; };
        s.sigma = [](double, const Vec&) { return Mat(1, 1); };
        AnalyticPath exact = [](const TimeGrid& grid, const Vec&) {
            std::vector<Vec> path(grid.steps() + 1);
            for (std::size_t n = 0; n <= grid.steps(); ++n) path[n] = {std::exp(grid.t[n])};
            return path;
        };
        double r = empirical_strong_order(s, exact, grids, 4, 29);
        CHECK(r > 0.85);
        CHECK(r < 1.15);
    }
    SECTION("fewer than three grids rejected") {
        SdeSpec s = gbm_spec(0.1, 0.2, 1.0, 1.0);
        AnalyticPath exact = [](const TimeGrid& g, const Vec&) {
            return std::vector<Vec>(g.steps() + 1, Vec{1.0});
        };
        CHECK_THROWS_AS(empirical_strong_order(s, exact, {8, 16}, 10, 1), InvalidArgument);
    }
}

TEST_CASE("discretize_gaussian") {
    SECTION("one bit splits symmetrically") {
        auto dist = discretize_gaussian(1, 1.0);
        REQUIRE(dist.probs.size() == 2);
        CHECK(dist.probs[0] == Catch::Approx(0.5).margin(1e-12));
        CHECK(dist.probs[1] == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("weighted mean vanishes by symmetry") {
        for (int bits : {2, 4, 6}) {
            auto dist = discretize_gaussian(bits, 0.37);
            CHECK(std::abs(dist.mean()) < 1e-12);
        }
    }
    SECTION("variance approaches the 3-sigma truncated value") {
        double dt = 0.25;
        auto dist = discretize_gaussian(9, dt);
        CHECK(dist.variance() == Catch::Approx(0.9733 * dt).epsilon(0.01));
    }
    SECTION("probabilities renormalize to one") {
        auto dist = discretize_gaussian(5, 2.0);
        double total = 0;
        for (double p : dist.probs) total += p;
        CHECK(total == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("discretized Gaussian mean error respects the Riemann bound") {
    // single-point-per-cell discretization of E[X] over [-3sd, 3sd]: the
    // measured error against the truncated-normal mean (= 0) stays below the
    // left-rule bound for the integrand x p(x)
    double dt = 1.0, sd = 1.0;
    for (int bits = 2; bits <= 8; ++bits) {
        auto dist = discretize_gaussian(bits, dt);
        double err = std::abs(dist.mean());
        // Lipschitz constant of x phi(x) on [-3,3] is bounded by 1
        double bound = mc::riemann_error_bound(1.0, -3.0 * sd, 3.0 * sd, 1,
                                               std::size_t(1) << bits);
        CHECK(err <= bound);
    }
}

TEST_CASE("path dump round-trips") {
    SdeSpec s = gbm_spec(0.1, 0.3, 1.0, 1.0);
    TimeGrid grid = TimeGrid::uniform(0, 1, 6);
    auto paths = euler_maruyama(s, grid, sample_increments(grid, 1, 3, 55));
    auto tmp = std::filesystem::temp_directory_path() / "qpde_paths_test.bin";
    dump_paths(paths, 55, tmp.string());
    std::uint64_t seed = 0;
    PathBatch loaded = load_paths(tmp.string(), &seed);
    CHECK(seed == 55);
    CHECK(loaded.increments == paths.increments);
    CHECK(loaded.states == paths.states);
    std::filesystem::remove(tmp);
}
