#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "qpde/qsim.hpp"
#include "qpde/sde.hpp"
#include "test_util.hpp"

using namespace qpde;
using namespace qpde::qsim;

namespace {

CMat kron(const CMat& a, const CMat& b) {
    CMat out(a.dim * b.dim);
    for (std::size_t i = 0; i < a.dim; ++i)
        for (std::size_t j = 0; j < a.dim; ++j)
            for (std::size_t k = 0; k < b.dim; ++k)
                for (std::size_t l = 0; l < b.dim; ++l)
                    out(i * b.dim + k, j * b.dim + l) = a(i, j) * b(k, l);
    return out;
}

// Expand a gate to the full register; gate qubit 0 = target[0]. Built by its
// action on basis states, deliberately different from the simulator kernel.
CMat embed(const CMat& g, const std::vector<int>& targets, int n) {
    std::size_t dim = std::size_t(1) << n;
    std::size_t gd = g.dim;
    CMat out(dim);
    for (std::size_t col = 0; col < dim; ++col) {
        std::size_t sub = 0;
        for (std::size_t b = 0; b < targets.size(); ++b)
            if ((col >> targets[b]) & 1) sub |= std::size_t(1) << b;
        for (std::size_t i = 0; i < gd; ++i) {
            std::size_t row = col;
            for (std::size_t b = 0; b < targets.size(); ++b) {
                std::size_t mask = std::size_t(1) << targets[b];
                if ((i >> b) & 1) row |= mask; else row &= ~mask;
            }
            out(row, col) += g(i, sub);
        }
    }
    return out;
}

// Taylor-series exp(-iHt) acting on a vector, with scaling so the series
// converges fast; the independent oracle for the eigendecomposition path.
CVec taylor_evolve(const CMat& h, double t, CVec psi) {
    double hnorm = 0;
    for (const cplx& v : h.data) hnorm = std::max(hnorm, std::abs(v));
    hnorm *= double(h.dim);
    int s = 0;
    while (hnorm * std::abs(t) / std::pow(2.0, s) > 0.5) ++s;
    double dt = t / std::pow(2.0, s);
    auto apply_h = [&](const CVec& x) {
        CVec y(x.size(), cplx(0, 0));
        for (std::size_t i = 0; i < h.dim; ++i)
            for (std::size_t j = 0; j < h.dim; ++j) y[i] += h(i, j) * x[j];
        return y;
    };
    for (int rep = 0; rep < (1 << s); ++rep) {
        CVec acc = psi, term = psi;
        for (int k = 1; k <= 40; ++k) {
            term = apply_h(term);
            cplx coeff = cplx(0, -dt) / double(k);
            for (cplx& v : term) v *= coeff;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += term[i];
        }
        psi = acc;
    }
    return psi;
}

double entanglement_entropy(const CVec& psi, int n, int cut) {
    std::size_t da = std::size_t(1) << cut, db = std::size_t(1) << (n - cut);
    Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(Eigen::Index(da), Eigen::Index(da));
    for (std::size_t i = 0; i < da; ++i)
        for (std::size_t j = 0; j < da; ++j)
            for (std::size_t b = 0; b < db; ++b)
                rho(Eigen::Index(i), Eigen::Index(j)) +=
                    psi[i + (b << cut)] * std::conj(psi[j + (b << cut)]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
    double s = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        double lam = es.eigenvalues()(i);
        if (lam > 1e-14) s -= lam * std::log(lam);
    }
    return s;
}

} // namespace

TEST_CASE("gate application") {
    SECTION("X flips |0>") {
        StateVector s(1);
        apply_gate(s, gate_x(), {0});
        CHECK(std::abs(s.amp(1) - cplx(1, 0)) < 1e-15);
    }
    SECTION("H twice is the identity") {
        StateVector s(2);
        apply_gate(s, gate_h(), {1});
        apply_gate(s, gate_h(), {1});
        CHECK(std::abs(s.amp(0) - cplx(1, 0)) < 1e-14);
    }
    SECTION("random two-qubit unitary preserves the norm") {
        StateVector s(3);
        apply_gate(s, gate_h(), {0});
        apply_gate(s, gate_rx(0.7), {2});
        CMat u = kron(gate_rx(1.234), gate_ry(0.456)) * gate_cnot() *
                 kron(gate_h(), gate_rx(-2.1));
        REQUIRE(is_unitary(u, 1e-12));
        apply_gate(s, u, {1, 2});
        CHECK(std::abs(s.norm() - 1.0) < 1e-12);
    }
    SECTION("non-unitary matrices are rejected") {
        CMat bad(2);
        bad(0, 0) = 1.0;
        bad(1, 1) = 0.5;
        StateVector s(1);
        CHECK_THROWS_AS(apply_gate(s, bad, {0}), InvalidArgument);
    }
    SECTION("agrees with the dense embedding on a 3-qubit state") {
        StateVector s(3);
        apply_gate(s, gate_h(), {0});
        apply_gate(s, gate_ry(0.3), {1});
        apply_gate(s, gate_rx(1.1), {2});
        CVec before = s.amps();
        CMat g = gate_cnot();
        apply_gate(s, g, {2, 0});
        CMat full = embed(g, {2, 0}, 3);
        CVec want(8, cplx(0, 0));
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) want[i] += full(i, j) * before[j];
        for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(s.amp(i) - want[i]) < 1e-13);
    }
}

TEST_CASE("norm drift stays below 1e-10 over a thousand gates") {
    StateVector s(4);
    SequentialRng rng(3, StreamPurpose::generic);
    for (int i = 0; i < 1000; ++i) {
        int q = int(rng.below(4));
        switch (rng.below(3)) {
            case 0: apply_gate(s, gate_h(), {q}); break;
            case 1: apply_gate(s, gate_rx(rng.uniform() * 6.28), {q}); break;
            default: apply_gate(s, gate_cnot(), {q, (q + 1) % 4}); break;
        }
    }
    CHECK(std::abs(s.norm() - 1.0) <= 1e-10);
}

TEST_CASE("evolve_hamiltonian") {
    SECTION("t = 0 is the identity") {
        StateVector s(2);
        apply_gate(s, gate_h(), {0});
        CVec before = s.amps();
        evolve_hamiltonian(s, hea_hamiltonian(2), 0.0);
        CHECK(s.amps() == before);
    }
    SECTION("Z on |0> only moves the global phase") {
        StateVector s(1);
        CMat z = gate_z();
        evolve_hamiltonian(s, z, 1.3);
        CHECK(std::abs(std::abs(s.amp(0)) - 1.0) < 1e-12);
    }
    SECTION("matches an independent Taylor-series propagator") {
        for (int n : {2, 3}) {
            StateVector s(n);
            apply_gate(s, gate_h(), {0});
            CMat h = hea_hamiltonian(n);
            CVec want = taylor_evolve(h, 0.9, s.amps());
            evolve_hamiltonian(s, h, 0.9);
            for (std::size_t i = 0; i < s.dim(); ++i) CHECK(std::abs(s.amp(i) - want[i]) < 1e-10);
        }
    }
    SECTION("the entangling Hamiltonian entangles every cut at t = 1") {
        int n = 5;
        StateVector s(n);
        evolve_hamiltonian(s, hea_hamiltonian(n), 1.0);
        CHECK(std::abs(s.norm() - 1.0) < 1e-10);
        for (int cut = 1; cut < n; ++cut) CHECK(entanglement_entropy(s.amps(), n, cut) > 0.05);
    }
    SECTION("non-Hermitian input rejected") {
        CMat h(2);
        h(0, 1) = 1.0;
        StateVector s(1);
        CHECK_THROWS_AS(evolve_hamiltonian(s, h, 1.0), InvalidArgument);
    }
}

TEST_CASE("load_distribution") {
    SECTION("uniform two-cell distribution") {
        sde::DiscretizedDistribution dist;
        dist.n_bits = 1;
        dist.points = {-1.0, 1.0};
        dist.probs = {0.5, 0.5};
        StateVector s(1);
        load_distribution(s, dist, 0, 1);
        CHECK(std::abs(s.amp(0) - cplx(1.0 / std::sqrt(2.0), 0)) < 1e-14);
        CHECK(std::abs(s.amp(1) - cplx(1.0 / std::sqrt(2.0), 0)) < 1e-14);
    }
    SECTION("measured probabilities reproduce p_i") {
        auto dist = sde::discretize_gaussian(3, 0.5);
        StateVector s(4);
        s.add_register("dist", 0, 3);
        load_distribution(s, dist, 0, 3);
        Vec probs = s.register_probs(0, 3);
        for (std::size_t i = 0; i < dist.probs.size(); ++i)
            CHECK(probs[i] == Catch::Approx(dist.probs[i]).margin(1e-12));
    }
    SECTION("weighted label mean equals the grid mean") {
        auto dist = sde::discretize_gaussian(4, 1.0);
        StateVector s(4);
        load_distribution(s, dist, 0, 4);
        double acc = 0;
        Vec probs = s.register_probs(0, 4);
        for (std::size_t i = 0; i < probs.size(); ++i) acc += probs[i] * dist.points[i];
        CHECK(acc == Catch::Approx(dist.mean()).margin(1e-12));
    }
    SECTION("occupied registers are rejected") {
        auto dist = sde::discretize_gaussian(2, 1.0);
        StateVector s(2);
        apply_gate(s, gate_x(), {0});
        CHECK_THROWS_AS(load_distribution(s, dist, 0, 2), InvalidArgument);
    }
    SECTION("unnormalized inputs are rejected") {
        sde::DiscretizedDistribution dist;
        dist.n_bits = 1;
        dist.points = {0.0, 1.0};
        dist.probs = {0.6, 0.6};
        StateVector s(1);
        CHECK_THROWS_AS(load_distribution(s, dist, 0, 1), InvalidArgument);
    }
}

TEST_CASE("grover-rudolph angles") {
    SECTION("uniform pdf gives pi/4 at every level") {
        auto angles = grover_rudolph_angles([](double) { return 1.0; }, 0.0, 1.0, 3);
        for (const Vec& level : angles.levels)
            for (double th : level) CHECK(th == Catch::Approx(M_PI / 4.0).margin(1e-10));
    }
    SECTION("symmetric Gaussian splits evenly at the top level") {
        auto pdf = [](double x) { return std::exp(-x * x / 2.0); };
        auto angles = grover_rudolph_angles(pdf, -3.0, 3.0, 1);
        CHECK(angles.levels[0][0] == Catch::Approx(M_PI / 4.0).margin(1e-10));
    }
    SECTION("amplitudes squared match cell integrals at m = 5") {
        auto pdf = [](double x) { return std::exp(-x * x / 2.0) / std::sqrt(2.0 * M_PI); };
        int m = 5;
        auto angles = grover_rudolph_angles(pdf, -3.0, 3.0, m);
        StateVector s(m);
        apply_grover_rudolph(s, angles, 0, m);
        CHECK(std::abs(s.norm() - 1.0) < 1e-12);
        double total = qsim::detail::integrate(pdf, -3.0, 3.0);
        double width = 6.0 / double(1 << m);
        for (std::size_t cell = 0; cell < (std::size_t(1) << m); ++cell) {
            double a = -3.0 + double(cell) * width;
            double mass = qsim::detail::integrate(pdf, a, a + width) / total;
            CHECK(std::norm(s.amp(cell)) == Catch::Approx(mass).margin(1e-8));
        }
    }
    SECTION("reproduces load_distribution for a log-concave pdf") {
        auto pdf = [](double x) { return std::exp(-std::abs(x) - 0.2 * x * x); };
        int m = 4;
        auto angles = grover_rudolph_angles(pdf, -2.0, 2.0, m);
        StateVector gr(m);
        apply_grover_rudolph(gr, angles, 0, m);

        sde::DiscretizedDistribution dist;
        dist.n_bits = m;
        double total = qsim::detail::integrate(pdf, -2.0, 2.0);
        double width = 4.0 / double(1 << m);
        for (std::size_t cell = 0; cell < (std::size_t(1) << m); ++cell) {
            double a = -2.0 + double(cell) * width;
            dist.points.push_back(a + width / 2.0);
            dist.probs.push_back(qsim::detail::integrate(pdf, a, a + width) / total);
        }
        double fix = 0;
        for (double p : dist.probs) fix += p;
        for (double& p : dist.probs) p /= fix;
        StateVector direct(m);
        load_distribution(direct, dist, 0, m);
        for (std::size_t i = 0; i < gr.dim(); ++i)
            CHECK(std::abs(gr.amp(i) - direct.amp(i)) < 1e-8);
    }
}

TEST_CASE("oracle_rotation realizes the expectation as an ancilla probability") {
    auto dist = sde::discretize_gaussian(3, 1.0);
    SECTION("v identically zero leaves the ancilla at |0>") {
        StateVector s(4);
        load_distribution(s, dist, 0, 3);
        oracle_rotation(s, [](std::uint64_t) { return 0.0; }, 0, 3, 3);
        CHECK(s.prob_one(3) == Catch::Approx(0.0).margin(1e-14));
    }
    SECTION("v identically one flips the ancilla") {
        StateVector s(4);
        load_distribution(s, dist, 0, 3);
        oracle_rotation(s, [](std::uint64_t) { return 1.0; }, 0, 3, 3);
        CHECK(s.prob_one(3) == Catch::Approx(1.0).margin(1e-14));
    }
    SECTION("ancilla-1 probability equals the classical weighted mean") {
        auto net = test_util::random_net({1, 3, 1},
                                         {autodiff::Activation::tanh, autodiff::Activation::sigmoid}, 4);
        auto v = [&](std::uint64_t x) {
            return autodiff::forward_eval(net, {dist.points[x]})[0];
        };
        StateVector s(4);
        load_distribution(s, dist, 0, 3);
        oracle_rotation(s, v, 0, 3, 3);
        double classical = 0;
        for (std::size_t i = 0; i < dist.probs.size(); ++i) classical += dist.probs[i] * v(i);
        CHECK(s.prob_one(3) == Catch::Approx(classical).margin(1e-12));
    }
    SECTION("out-of-range values violate the contract") {
        StateVector s(4);
        load_distribution(s, dist, 0, 3);
        CHECK_THROWS_AS(oracle_rotation(s, [](std::uint64_t) { return 1.5; }, 0, 3, 3),
                        ContractViolation);
    }
}

TEST_CASE("function oracles") {
    SECTION("XOR involution restores the state bitwise") {
        FunctionOracle oracle{[](std::uint64_t x) { return (3 * x + 1) % 8; }, "test"};
        StateVector s(6);
        apply_gate(s, gate_h(), {0});
        apply_gate(s, gate_h(), {1});
        apply_gate(s, gate_ry(0.7), {2});
        CVec before = s.amps();
        apply_oracle(s, oracle, 0, 3, 3, 3);
        apply_oracle(s, oracle, 0, 3, 3, 3);
        CHECK(s.amps() == before);
    }
    SECTION("computes into the target register") {
        FunctionOracle oracle{[](std::uint64_t x) { return x * x; }, "square"};
        StateVector s(6);
        apply_gate(s, gate_x(), {1});    // input = 2
        apply_oracle(s, oracle, 0, 2, 2, 4);
        CHECK(std::abs(s.amp(2 | (4 << 2)) - cplx(1, 0)) < 1e-14);
    }
    SECTION("qram lookup in superposition") {
        auto oracle = qram_oracle({5, 3, 7, 1});
        StateVector s(6);
        apply_gate(s, gate_h(), {0});
        apply_gate(s, gate_h(), {1});
        apply_oracle(s, oracle, 0, 2, 2, 4);
        for (std::uint64_t i = 0; i < 4; ++i) {
            std::vector<std::uint64_t> table{5, 3, 7, 1};
            CHECK(std::abs(s.amp(i | (table[i] << 2)) - cplx(0.5, 0)) < 1e-14);
        }
    }
}

TEST_CASE("fixed-point encoding") {
    FixedPointFormat fmt{3, 5};
    SECTION("round-trips exactly over the whole representable grid") {
        double res = fmt.resolution();
        std::uint64_t cells = std::uint64_t(1) << (fmt.int_bits + fmt.frac_bits);
        for (std::uint64_t mag = 0; mag < cells; ++mag) {
            double x = double(mag) * res;
            CHECK(fmt.decode(fmt.encode(x)) == x);
            if (mag > 0) CHECK(fmt.decode(fmt.encode(-x)) == -x);
        }
    }
    SECTION("range matches R = 2^c1 - 2^-c2") {
        CHECK(fmt.max_value() == 8.0 - 1.0 / 32.0);
        CHECK_THROWS_AS(fmt.encode(8.1), ContractViolation);
    }
    SECTION("negative zero canonicalizes") {
        CHECK(fmt.encode(-0.0) == fmt.encode(0.0));
    }
}

TEST_CASE("qft axis helper matches the dense transform") {
    std::size_t m = 3, M = 8;
    CVec amps(M);
    SequentialRng rng(17, StreamPurpose::generic);
    double norm = 0;
    for (cplx& a : amps) {
        a = cplx(rng.uniform() - 0.5, rng.uniform() - 0.5);
        norm += std::norm(a);
    }
    for (cplx& a : amps) a /= std::sqrt(norm);
    CVec want(M, cplx(0, 0));
    for (std::size_t k = 0; k < M; ++k)
        for (std::size_t j = 0; j < M; ++j)
            want[k] += amps[j] * std::exp(cplx(0, -2.0 * M_PI * double(j * k) / double(M))) /
                       std::sqrt(double(M));
    CVec got = amps;
    qsim::detail::fft_axis(got, 0, 1, M, -1);
    for (std::size_t i = 0; i < M; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    (void)m;
}

TEST_CASE("amplitude estimation") {
    SECTION("a = 0 is recovered exactly") {
        StateVector chi(1);    // |0>, ancilla qubit 0, success amplitude 0
        SequentialRng rng(1, StreamPurpose::measurement);
        CHECK(amplitude_estimate(chi, 0, 5, rng) == 0.0);
    }
    SECTION("exactly representable phases are recovered exactly") {
        for (int M0 : {1, 3, 7, 12, 15}) {
            double a = std::pow(std::sin(M_PI * double(M0) / 32.0), 2);
            StateVector chi(1);
            chi.amps()[0] = std::sqrt(1.0 - a);
            chi.amps()[1] = std::sqrt(a);
            SequentialRng rng(M0, StreamPurpose::measurement);
            double est = amplitude_estimate(chi, 0, 5, rng);
            CHECK(est == Catch::Approx(a).margin(1e-12));
        }
    }
    SECTION("the error bound holds at the advertised rate") {
        int hits = 0, trials = 60;
        int m = 6;
        double k = double(1 << m);
        for (int t = 0; t < trials; ++t) {
            RngStream ts(400 + t, StreamPurpose::generic);
            double a = ts.uniform(0);
            StateVector chi(1);
            chi.amps()[0] = std::sqrt(1.0 - a);
            chi.amps()[1] = std::sqrt(a);
            SequentialRng rng(500 + t, StreamPurpose::measurement);
            double est = amplitude_estimate(chi, 0, m, rng);
            double bound = 2.0 * M_PI * std::sqrt(a * (1.0 - a)) / k + M_PI * M_PI / (k * k);
            if (std::abs(est - a) <= bound) ++hits;
        }
        CHECK(double(hits) / double(trials) >= 0.75);
    }
    SECTION("query counting follows k = 2^m") {
        StateVector chi(1);
        chi.amps()[0] = std::sqrt(0.7);
        chi.amps()[1] = std::sqrt(0.3);
        SequentialRng rng(9, StreamPurpose::measurement);
        AeQueryCount count;
        amplitude_estimate(chi, 0, 6, rng, &count);
        CHECK(count.oracle_reflections == 63);
        CHECK(count.prep_applications == 2 * 63 + 1);
    }
}

TEST_CASE("median powering") {
    SECTION("deterministic estimators pass through") {
        CHECK(median_power([] { return 4.2; }, 0.01) == 4.2);
    }
    SECTION("delta >= 1/2 degenerates to a single run") {
        CHECK(powering_reps(0.5) == 1);
        CHECK(powering_reps(0.9) == 1);
    }
    SECTION("boosts a 2/3-correct estimator to failure <= 0.01") {
        std::size_t failures = 0, meta = 1000;
        for (std::size_t t = 0; t < meta; ++t) {
            SequentialRng rng(2000 + t, StreamPurpose::generic);
            auto thunk = [&]() { return rng.uniform() < 2.0 / 3.0 ? 1.0 : 100.0; };
            if (median_power(thunk, 0.01) != 1.0) ++failures;
        }
        CHECK(double(failures) / double(meta) <= 0.01);
    }
}

TEST_CASE("qamc mean estimation") {
    SECTION("constant functions are reproduced within eps") {
        auto prep = []() { return StateVector(2); };    // |00>, 1-bit register + ancilla
        QamcOptions opt;
        opt.eps = 0.02;
        opt.delta = 0.1;
        SequentialRng rng(3, StreamPurpose::measurement);
        auto res = qamc_mean(prep, [](std::uint64_t) { return 0.6; }, 0.0, 1.0, 0, 1, 1, opt, rng);
        CHECK(res.value == Catch::Approx(0.6).margin(0.02));
    }
    SECTION("matches the classical weighted mean of x^2 under the Gaussian grid") {
        auto dist = sde::discretize_gaussian(3, 1.0);
        double hi = 9.0;    // grid points lie within [-3, 3]
        auto v = [&](std::uint64_t x) { return dist.points[x] * dist.points[x]; };
        double classical = 0;
        for (std::size_t i = 0; i < dist.probs.size(); ++i) classical += dist.probs[i] * v(i);
        auto prep = [&]() {
            StateVector chi(4);
            load_distribution(chi, dist, 0, 3);
            return chi;
        };
        QamcOptions opt;
        opt.eps = 0.05;
        opt.delta = 0.05;
        SequentialRng rng(5, StreamPurpose::measurement);
        auto res = qamc_mean(prep, v, 0.0, hi, 0, 3, 3, opt, rng);
        CHECK(res.value == Catch::Approx(classical).margin(0.05));
        CHECK(res.queries.prep_applications > 0);
    }
    SECTION("range violations are contract errors") {
        auto prep = []() { return StateVector(2); };
        QamcOptions opt;
        opt.eps = 0.1;
        SequentialRng rng(7, StreamPurpose::measurement);
        CHECK_THROWS_AS(qamc_mean(prep, [](std::uint64_t) { return 2.0; }, 0.0, 1.0, 0, 1, 1, opt, rng),
                        ContractViolation);
    }
    SECTION("the distribution-level overload estimates grid expectations") {
        auto dist = sde::discretize_gaussian(2, 1.0);
        auto v = [&](std::uint64_t x) { return std::abs(dist.points[x]); };
        double classical = 0;
        for (std::size_t i = 0; i < dist.probs.size(); ++i) classical += dist.probs[i] * v(i);
        QamcOptions opt;
        opt.eps = 0.1;
        opt.delta = 0.1;
        SequentialRng rng(9, StreamPurpose::measurement);
        auto res = qamc_mean(dist, v, 0.0, 3.0, opt, rng);
        CHECK(res.value == Catch::Approx(classical).margin(0.1));
    }
}

TEST_CASE("robust inner product estimation") {
    SECTION("aligned unit vectors give 1") {
        Vec v{0.5, 0.5, 0.5, 0.5};
        SequentialRng rng(11, StreamPurpose::measurement);
        auto res = inner_product_estimate(v, v, 0.05, 0.1, rng);
        CHECK(res.value == Catch::Approx(1.0).margin(0.05));
    }
    SECTION("orthogonal vectors give 0") {
        Vec a{1, 0, 0, 0}, b{0, 1, 0, 0};
        SequentialRng rng(13, StreamPurpose::measurement);
        auto res = inner_product_estimate(a, b, 0.05, 0.1, rng);
        CHECK(res.value == Catch::Approx(0.0).margin(0.05));
    }
    SECTION("random dimension-8 pairs track the direct dot product") {
        for (std::uint64_t t = 0; t < 5; ++t) {
            Vec a = test_util::random_normal_vec(8, 100 + t);
            Vec b = test_util::random_normal_vec(8, 200 + t);
            double na = norm2(a), nb = norm2(b);
            for (double& x : a) x /= na;
            for (double& x : b) x /= nb;
            SequentialRng rng(300 + t, StreamPurpose::measurement);
            auto res = inner_product_estimate(a, b, 0.05, 0.1, rng);
            CHECK(res.value == Catch::Approx(dot(a, b)).margin(0.05));
        }
    }
    SECTION("zero-norm vectors are rejected") {
        Vec z(4, 0.0), v{1, 0, 0, 0};
        SequentialRng rng(1, StreamPurpose::measurement);
        CHECK_THROWS_AS(inner_product_estimate(z, v, 0.1, 0.1, rng), InvalidArgument);
    }
}

TEST_CASE("hea expectations") {
    SECTION("all-zero angles with t = 0 leave every qubit at |0>") {
        HeaSpec spec = HeaSpec::zeros(4, 2, 0.0);
        for (double z : hea_expectations(spec)) CHECK(z == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("single qubit reads cos(theta)") {
        HeaSpec spec = HeaSpec::zeros(1, 1, 0.0);
        for (double th : {0.0, 0.4, 1.3, 2.8}) {
            spec.thetas[0] = th;
            CHECK(hea_expectations(spec)[0] == Catch::Approx(std::cos(th)).margin(1e-12));
        }
    }
    SECTION("matches an independently assembled dense circuit at n = 5") {
        int n = 5, reps = 2;
        HeaSpec spec = HeaSpec::zeros(n, reps, 1.0);
        for (std::size_t i = 0; i < spec.input_angles.size(); ++i)
            spec.input_angles[i] = 0.3 + 0.2 * double(i);
        for (std::size_t i = 0; i < spec.thetas.size(); ++i)
            spec.thetas[i] = -0.9 + 0.17 * double(i);

        // independent path: multiply embedded dense gate matrices
        std::size_t dim = std::size_t(1) << n;
        CMat circuit = CMat::identity(dim);
        auto left_multiply = [&](const CMat& g, const std::vector<int>& targets) {
            circuit = embed(g, targets, n) * circuit;
        };
        for (int q = 0; q < n; ++q) left_multiply(gate_rx(spec.input_angles[std::size_t(q)]), {q});
        for (int k = 0; k < reps; ++k) {
            for (int q = 0; q < n; ++q)
                left_multiply(gate_rx(spec.thetas[std::size_t(k * n + q)]), {q});
            for (int q = 0; q < n; ++q) left_multiply(gate_cnot(), {q, (q + 1) % n});
        }
        StateVector init(n);
        evolve_hamiltonian(init, hea_hamiltonian(n), 1.0);
        CVec psi(dim, cplx(0, 0));
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) psi[i] += circuit(i, j) * init.amp(j);
        Vec want(std::size_t(n), 0.0);
        for (std::size_t i = 0; i < dim; ++i)
            for (int q = 0; q < n; ++q)
                want[std::size_t(q)] += std::norm(psi[i]) * (((i >> q) & 1) ? -1.0 : 1.0);

        Vec got = hea_expectations(spec);
        for (int q = 0; q < n; ++q)
            CHECK(got[std::size_t(q)] == Catch::Approx(want[std::size_t(q)]).margin(1e-10));
    }
    SECTION("shot-noise mode converges to the exact values") {
        HeaSpec spec = HeaSpec::zeros(2, 1, 0.0);
        spec.thetas = {0.8, -0.5};
        SequentialRng rng(21, StreamPurpose::measurement);
        Vec exact = hea_expectations(spec);
        Vec shots = hea_expectations(spec, 200000, &rng);
        for (std::size_t q = 0; q < 2; ++q) CHECK(shots[q] == Catch::Approx(exact[q]).margin(0.02));
    }
}

TEST_CASE("parameter-shift gradients") {
    SECTION("single-qubit analytics") {
        HeaSpec spec = HeaSpec::zeros(1, 1, 0.0);
        Vec w{1.0};
        spec.thetas[0] = 0.0;
        CHECK(param_shift_theta(spec, w, 0) == Catch::Approx(0.0).margin(1e-12));
        spec.thetas[0] = M_PI / 2.0;
        CHECK(param_shift_theta(spec, w, 0) == Catch::Approx(-1.0).margin(1e-12));
    }
    SECTION("matches central finite differences on a random ansatz") {
        HeaSpec spec = HeaSpec::zeros(3, 2, 1.0);
        RngStream s(31, StreamPurpose::generic);
        for (std::size_t i = 0; i < spec.input_angles.size(); ++i)
            spec.input_angles[i] = 2.0 * s.uniform(i) - 1.0;
        for (std::size_t i = 0; i < spec.thetas.size(); ++i)
            spec.thetas[i] = 2.0 * s.uniform(100 + i) - 1.0;
        Vec w{0.7, -0.4, 1.1};
        double h = 1e-5;
        for (std::size_t j = 0; j < spec.thetas.size(); ++j) {
            HeaSpec up = spec, dn = spec;
            up.thetas[j] += h;
            dn.thetas[j] -= h;
            double fd = (dot(w, hea_expectations(up)) - dot(w, hea_expectations(dn))) / (2.0 * h);
            CHECK(param_shift_theta(spec, w, j) == Catch::Approx(fd).margin(1e-6));
        }
        for (std::size_t j = 0; j < spec.input_angles.size(); ++j) {
            HeaSpec up = spec, dn = spec;
            up.input_angles[j] += h;
            dn.input_angles[j] -= h;
            double fd = (dot(w, hea_expectations(up)) - dot(w, hea_expectations(dn))) / (2.0 * h);
            CHECK(param_shift_input(spec, w, j) == Catch::Approx(fd).margin(1e-6));
        }
    }
}
