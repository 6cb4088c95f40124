#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qpde/common.hpp"
#include "qpde/rng.hpp"
#include "qpde/sde.hpp"

namespace qpde::qsim {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

constexpr int kMaxQubits = 24;          // raw statevector capacity
constexpr int kMaxDenseQubits = 12;     // dense eigendecomposition capacity

// Small dense complex matrix (square, row-major).
struct CMat {
    std::size_t dim = 0;
    CVec data;

    CMat() = default;
    explicit CMat(std::size_t n) : dim(n), data(n * n, cplx(0, 0)) {}

    cplx& operator()(std::size_t i, std::size_t j) { return data[i * dim + j]; }
    cplx operator()(std::size_t i, std::size_t j) const { return data[i * dim + j]; }

    static CMat identity(std::size_t n) {
        CMat m(n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
        return m;
    }

    CMat operator*(const CMat& o) const {
        CMat r(dim);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t k = 0; k < dim; ++k) {
                cplx a = (*this)(i, k);
                if (a == cplx(0, 0)) continue;
                for (std::size_t j = 0; j < dim; ++j) r(i, j) += a * o(k, j);
            }
        return r;
    }

    CMat dagger() const {
        CMat r(dim);
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) r(j, i) = std::conj((*this)(i, j));
        return r;
    }

    double max_abs_dev_from_identity() const {
        double m = 0;
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) {
                cplx want = (i == j) ? cplx(1, 0) : cplx(0, 0);
                m = std::max(m, std::abs((*this)(i, j) - want));
            }
        return m;
    }
};

inline bool is_unitary(const CMat& g, double tol = 1e-10) {
    return (g.dagger() * g).max_abs_dev_from_identity() <= tol;
}

// ----- standard gates -----

inline CMat gate_x() { CMat g(2); g(0, 1) = 1; g(1, 0) = 1; return g; }
inline CMat gate_y() { CMat g(2); g(0, 1) = cplx(0, -1); g(1, 0) = cplx(0, 1); return g; }
inline CMat gate_z() { CMat g(2); g(0, 0) = 1; g(1, 1) = -1; return g; }
inline CMat gate_h() {
    CMat g(2);
    double s = 1.0 / std::sqrt(2.0);
    g(0, 0) = s; g(0, 1) = s; g(1, 0) = s; g(1, 1) = -s;
    return g;
}
inline CMat gate_rx(double theta) {
    CMat g(2);
    double c = std::cos(theta / 2), s = std::sin(theta / 2);
    g(0, 0) = c; g(0, 1) = cplx(0, -s); g(1, 0) = cplx(0, -s); g(1, 1) = c;
    return g;
}
inline CMat gate_ry(double theta) {
    CMat g(2);
    double c = std::cos(theta / 2), s = std::sin(theta / 2);
    g(0, 0) = c; g(0, 1) = -s; g(1, 0) = s; g(1, 1) = c;
    return g;
}
inline CMat gate_cnot() {
    CMat g(4);
    // control = gate qubit 0 (LSB), target = gate qubit 1
    g(0, 0) = 1; g(2, 2) = 1; g(1, 3) = 1; g(3, 1) = 1;
    return g;
}

// ----- state vector -----

struct QubitRegister {
    std::string name;
    int offset = 0;
    int width = 0;
};

// Dense amplitude vector over named qubit registers. Qubit q is bit q of the
// basis index (qubit 0 = LSB).
class StateVector {
public:
    explicit StateVector(int n_qubits) : n_(n_qubits) {
        require(n_qubits >= 1 && n_qubits <= kMaxQubits, "StateVector: qubit count out of range");
        amps_.assign(std::size_t(1) << n_, cplx(0, 0));
        amps_[0] = 1;
    }

    int n_qubits() const { return n_; }
    std::size_t dim() const { return amps_.size(); }
    CVec& amps() { return amps_; }
    const CVec& amps() const { return amps_; }
    cplx amp(std::size_t i) const { return amps_[i]; }

    void add_register(const std::string& name, int offset, int width) {
        require(offset >= 0 && width >= 1 && offset + width <= n_, "add_register: out of range");
        for (const auto& r : registers_)
            require(offset + width <= r.offset || r.offset + r.width <= offset,
                    "add_register: registers must be disjoint");
        registers_.push_back({name, offset, width});
    }

    const QubitRegister& reg(const std::string& name) const {
        for (const auto& r : registers_)
            if (r.name == name) return r;
        throw InvalidArgument("unknown register: " + name);
    }

    double norm() const {
        double s = 0;
        for (const cplx& a : amps_) s += std::norm(a);
        return std::sqrt(s);
    }

    void check_norm(double tol = 1e-10) const {
        if (std::abs(norm() - 1.0) > tol) throw NumericError("StateVector: norm drifted");
    }

    // Marginal probability that `qubit` reads 1.
    double prob_one(int qubit) const {
        std::size_t mask = std::size_t(1) << qubit;
        double p = 0;
        for (std::size_t i = 0; i < amps_.size(); ++i)
            if (i & mask) p += std::norm(amps_[i]);
        return p;
    }

    // <Z_qubit>
    double expectation_z(int qubit) const { return 1.0 - 2.0 * prob_one(qubit); }

    // Marginal distribution of a register.
    Vec register_probs(int offset, int width) const {
        Vec p(std::size_t(1) << width, 0.0);
        std::size_t mask = (std::size_t(1) << width) - 1;
        for (std::size_t i = 0; i < amps_.size(); ++i)
            p[(i >> offset) & mask] += std::norm(amps_[i]);
        return p;
    }

    std::uint64_t sample_register(int offset, int width, SequentialRng& rng) const {
        Vec p = register_probs(offset, width);
        double u = rng.uniform(), acc = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u <= acc) return i;
        }
        return p.size() - 1;
    }

private:
    int n_;
    CVec amps_;
    std::vector<QubitRegister> registers_;
};

// ----- gate application -----

namespace detail {

inline void apply_gate_unchecked(StateVector& state, const CMat& g, const std::vector<int>& targets) {
    int k = int(targets.size());
    std::size_t gd = std::size_t(1) << k;
    require(g.dim == gd, "apply_gate: matrix size does not match target count");
    std::vector<std::size_t> masks(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        require(targets[i] >= 0 && targets[i] < state.n_qubits(), "apply_gate: target out of range");
        masks[i] = std::size_t(1) << targets[i];
    }
    std::size_t tmask = 0;
    for (std::size_t m : masks) tmask |= m;

    CVec scratch(gd);
    CVec& amps = state.amps();
    for (std::size_t base = 0; base < amps.size(); ++base) {
        if (base & tmask) continue;    // enumerate blocks by their all-zero-target representative
        for (std::size_t j = 0; j < gd; ++j) {
            std::size_t idx = base;
            for (int b = 0; b < k; ++b)
                if (j & (std::size_t(1) << b)) idx |= masks[std::size_t(b)];
            scratch[j] = amps[idx];
        }
        for (std::size_t i = 0; i < gd; ++i) {
            cplx acc(0, 0);
            for (std::size_t j = 0; j < gd; ++j) acc += g(i, j) * scratch[j];
            std::size_t idx = base;
            for (int b = 0; b < k; ++b)
                if (i & (std::size_t(1) << b)) idx |= masks[std::size_t(b)];
            amps[idx] = acc;
        }
    }
}

} // namespace detail

inline void apply_gate(StateVector& state, const CMat& g, const std::vector<int>& targets) {
    require(is_unitary(g), "apply_gate: matrix is not unitary");
    detail::apply_gate_unchecked(state, g, targets);
}

// ----- Hamiltonian evolution (dense eigendecomposition) -----

inline void check_hermitian(const CMat& h, double tol = 1e-10) {
    for (std::size_t i = 0; i < h.dim; ++i)
        for (std::size_t j = 0; j < h.dim; ++j)
            if (std::abs(h(i, j) - std::conj(h(j, i))) > tol)
                throw InvalidArgument("evolve_hamiltonian: matrix is not Hermitian");
}

// psi <- exp(-i H t) psi, H dense Hermitian over the whole state.
inline void evolve_hamiltonian(StateVector& state, const CMat& h, double t) {
    require(state.n_qubits() <= kMaxDenseQubits, "evolve_hamiltonian: over dense capacity");
    require(h.dim == state.dim(), "evolve_hamiltonian: dimension mismatch");
    check_hermitian(h);
    if (t == 0.0) return;
    using EMat = Eigen::MatrixXcd;
    EMat H(Eigen::Index(h.dim), Eigen::Index(h.dim));
    for (std::size_t i = 0; i < h.dim; ++i)
        for (std::size_t j = 0; j < h.dim; ++j) H(Eigen::Index(i), Eigen::Index(j)) = h(i, j);
    Eigen::SelfAdjointEigenSolver<EMat> es(H);
    Eigen::VectorXcd psi(Eigen::Index(h.dim));
    for (std::size_t i = 0; i < h.dim; ++i) psi(Eigen::Index(i)) = state.amps()[i];
    Eigen::VectorXcd y = es.eigenvectors().adjoint() * psi;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        y(i) *= std::exp(cplx(0, -es.eigenvalues()(i) * t));
    psi = es.eigenvectors() * y;
    for (std::size_t i = 0; i < h.dim; ++i) state.amps()[i] = psi(Eigen::Index(i));
}

// Pauli-string helper: product over (qubit, P) factors; repeated qubits
// multiply their 2x2 factors (so X_i X_i collapses to the identity).
inline CMat pauli_string(int n, const std::vector<std::pair<int, char>>& factors) {
    std::vector<CMat> single(std::size_t(n), CMat::identity(2));
    for (auto [q, p] : factors) {
        CMat g = (p == 'X') ? gate_x() : (p == 'Y') ? gate_y() : gate_z();
        single[std::size_t(q)] = single[std::size_t(q)] * g;
    }
    std::size_t dim = std::size_t(1) << n;
    CMat out(dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            cplx v(1, 0);
            for (int q = 0; q < n && v != cplx(0, 0); ++q)
                v *= single[std::size_t(q)]((i >> q) & 1, (j >> q) & 1);
            out(i, j) = v;
        }
    return out;
}

// H = sum_i X_i X_{i+1} + Y_i Y_{i+1} + 2 Z_i Z_{i+1} + X_i, index n+1 wraps to 1.
inline CMat hea_hamiltonian(int n) {
    require(n >= 1 && n <= kMaxDenseQubits, "hea_hamiltonian: qubit count out of range");
    std::size_t dim = std::size_t(1) << n;
    CMat h(dim);
    auto add = [&](const CMat& term, double w) {
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += w * term.data[i];
    };
    for (int i = 0; i < n; ++i) {
        int j = (i + 1) % n;
        add(pauli_string(n, {{i, 'X'}, {j, 'X'}}), 1.0);
        add(pauli_string(n, {{i, 'Y'}, {j, 'Y'}}), 1.0);
        add(pauli_string(n, {{i, 'Z'}, {j, 'Z'}}), 2.0);
        add(pauli_string(n, {{i, 'X'}}), 1.0);
    }
    return h;
}

// ----- distribution loading -----

// Writes amplitudes sqrt(p_i) onto a register that is currently |0...0> and
// unentangled with the rest of the state.
inline void load_distribution(StateVector& state, const sde::DiscretizedDistribution& dist,
                              int offset, int width) {
    require(width == dist.n_bits, "load_distribution: register width mismatch");
    double total = 0;
    for (double p : dist.probs) {
        require(p >= 0, "load_distribution: negative probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-10)
        throw InvalidArgument("load_distribution: probabilities do not sum to 1");

    std::size_t rmask = ((std::size_t(1) << width) - 1) << offset;
    CVec& amps = state.amps();
    for (std::size_t i = 0; i < amps.size(); ++i)
        if ((i & rmask) != 0 && std::abs(amps[i]) > 1e-14)
            throw InvalidArgument("load_distribution: register is not |0...0>");

    CVec out(amps.size(), cplx(0, 0));
    for (std::size_t i = 0; i < amps.size(); ++i) {
        if (amps[i] == cplx(0, 0) || (i & rmask)) continue;
        for (std::size_t v = 0; v < dist.probs.size(); ++v)
            out[i | (v << offset)] = amps[i] * std::sqrt(dist.probs[v]);
    }
    amps = std::move(out);
}

// ----- Grover-Rudolph angle table -----

namespace detail {

// Adaptive Simpson quadrature to absolute tolerance.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double fa, double fm, double fb, double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0) throw NumericError("grover_rudolph_angles: quadrature failed to converge");
    if (std::abs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12) {
    if (a == b) return 0.0;
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

} // namespace detail

// Per-level rotation angles theta_i = arccos(sqrt(f_GR(i))) where f_GR is the
// probability mass of the left half of region i relative to the whole region.
// levels[m] has 2^m angles.
struct GroverRudolphAngles {
    double lo = 0, hi = 0;
    std::vector<Vec> levels;
};

inline GroverRudolphAngles grover_rudolph_angles(const std::function<double(double)>& pdf,
                                                 double lo, double hi, int m) {
    require(m >= 1 && hi > lo, "grover_rudolph_angles: bad arguments");
    GroverRudolphAngles out;
    out.lo = lo;
    out.hi = hi;
    for (int level = 0; level < m; ++level) {
        std::size_t regions = std::size_t(1) << level;
        double width = (hi - lo) / double(regions);
        Vec thetas(regions);
        for (std::size_t i = 0; i < regions; ++i) {
            double a = lo + double(i) * width;
            double b = a + width;
            double whole = detail::integrate(pdf, a, b);
            double left = detail::integrate(pdf, a, 0.5 * (a + b));
            require(whole > 0, "grover_rudolph_angles: vanishing region mass");
            double frac = std::clamp(left / whole, 0.0, 1.0);
            thetas[i] = std::acos(std::sqrt(frac));
        }
        out.levels.push_back(std::move(thetas));
    }
    return out;
}

// Applies the inductive construction: after m levels the register holds
// amplitudes whose squares are the relative region masses. MSB-first region
// refinement; register bit (width-1-level) distinguishes left/right at that
// level.
inline void apply_grover_rudolph(StateVector& state, const GroverRudolphAngles& angles,
                                 int offset, int width) {
    require(int(angles.levels.size()) == width, "apply_grover_rudolph: width mismatch");
    std::size_t rmask = ((std::size_t(1) << width) - 1) << offset;
    CVec& amps = state.amps();
    for (std::size_t i = 0; i < amps.size(); ++i)
        if ((i & rmask) != 0 && std::abs(amps[i]) > 1e-14)
            throw InvalidArgument("apply_grover_rudolph: register is not |0...0>");

    CVec out(amps.size(), cplx(0, 0));
    std::size_t cells = std::size_t(1) << width;
    for (std::size_t i = 0; i < amps.size(); ++i) {
        if (amps[i] == cplx(0, 0) || (i & rmask)) continue;
        for (std::size_t cell = 0; cell < cells; ++cell) {
            double a = 1.0;
            std::size_t region = 0;
            for (int level = 0; level < width; ++level) {
                bool right = (cell >> (width - 1 - level)) & 1;
                double theta = angles.levels[std::size_t(level)][region];
                a *= right ? std::sin(theta) : std::cos(theta);
                region = 2 * region + (right ? 1 : 0);
            }
            out[i | (cell << offset)] = amps[i] * a;
        }
    }
    amps = std::move(out);
}

// ----- function oracles and fixed-point encoding -----

// Quantum access to a classical function with XOR target semantics:
// |x>|y> -> |x>|y xor f(x)>. Applying it twice is the identity.
struct FunctionOracle {
    std::function<std::uint64_t(std::uint64_t)> f;
    std::string cost_tag = "oracle";
};

inline void apply_oracle(StateVector& state, const FunctionOracle& oracle,
                         int in_offset, int in_width, int out_offset, int out_width) {
    std::size_t in_mask = (std::size_t(1) << in_width) - 1;
    std::size_t out_cap = std::size_t(1) << out_width;
    CVec& amps = state.amps();
    CVec out(amps.size(), cplx(0, 0));
    for (std::size_t i = 0; i < amps.size(); ++i) {
        if (amps[i] == cplx(0, 0)) continue;
        std::uint64_t x = (i >> in_offset) & in_mask;
        std::uint64_t fx = oracle.f(x);
        require(fx < out_cap, "apply_oracle: image exceeds target register");
        out[i ^ (std::size_t(fx) << out_offset)] += amps[i];
    }
    amps = std::move(out);
}

// QRAM per its defining semantics: an in-memory table queried in superposition.
inline FunctionOracle qram_oracle(std::vector<std::uint64_t> table) {
    return {[t = std::move(table)](std::uint64_t i) { return t.at(i); }, "qram"};
}

// Sign-magnitude fixed point: value = (-1)^s (a . b) with c1 integer bits and
// c2 fraction bits; representable range [-R, R], R = 2^{c1} - 2^{-c2}.
struct FixedPointFormat {
    int int_bits = 4;
    int frac_bits = 8;

    int total_bits() const { return int_bits + frac_bits + 1; }
    double resolution() const { return std::ldexp(1.0, -frac_bits); }
    double max_value() const { return std::ldexp(1.0, int_bits) - resolution(); }

    std::uint64_t encode(double x) const {
        require(std::isfinite(x), "FixedPointFormat: non-finite value");
        if (std::abs(x) > max_value() + 0.5 * resolution())
            throw ContractViolation("FixedPointFormat: value out of range");
        std::uint64_t s = x < 0 ? 1 : 0;
        std::uint64_t mag = std::uint64_t(std::llround(std::abs(x) / resolution()));
        std::uint64_t mag_cap = (std::uint64_t(1) << (int_bits + frac_bits)) - 1;
        mag = std::min(mag, mag_cap);
        if (mag == 0) s = 0;    // canonical zero
        return (s << (int_bits + frac_bits)) | mag;
    }

    double decode(std::uint64_t bits) const {
        std::uint64_t mag = bits & ((std::uint64_t(1) << (int_bits + frac_bits)) - 1);
        double v = double(mag) * resolution();
        return (bits >> (int_bits + frac_bits)) & 1 ? -v : v;
    }
};

// ----- controlled rotation loading a value into an ancilla amplitude -----

// |x>|0> -> |x>(sqrt(1-v(x))|0> + sqrt(v(x))|1>) over the given register; the
// ancilla-1 probability afterwards equals sum_x |a_x|^2 v(x).
inline void oracle_rotation(StateVector& state, const std::function<double(std::uint64_t)>& v,
                            int reg_offset, int reg_width, int ancilla) {
    if (state.prob_one(ancilla) > 1e-12)
        throw InvalidArgument("oracle_rotation: ancilla is not |0>");
    std::size_t reg_mask = (std::size_t(1) << reg_width) - 1;
    std::size_t anc_mask = std::size_t(1) << ancilla;
    CVec& amps = state.amps();
    for (std::size_t i = 0; i < amps.size(); ++i) {
        if (i & anc_mask) continue;
        if (amps[i] == cplx(0, 0)) continue;
        double val = v((i >> reg_offset) & reg_mask);
        if (val < -1e-12 || val > 1.0 + 1e-12)
            throw ContractViolation("oracle_rotation: v(x) outside [0,1]");
        val = std::clamp(val, 0.0, 1.0);
        cplx a = amps[i];
        amps[i] = a * std::sqrt(1.0 - val);
        amps[i | anc_mask] = a * std::sqrt(val);
    }
}

// ----- amplitude estimation -----

struct AeQueryCount {
    std::uint64_t prep_applications = 0;     // uses of the chi-preparation circuit (and inverse)
    std::uint64_t oracle_reflections = 0;    // uses of the marked-state reflection
};

namespace detail {

// In-place radix-2 FFT along a strided axis; sign=+1 is the QFT
// (F|k> = sum_j w^{jk}|j>/sqrt(M)), sign=-1 its inverse.
inline void fft_axis(CVec& amps, std::size_t offset, std::size_t stride, std::size_t count, int sign) {
    // bit reversal
    for (std::size_t i = 1, j = 0; i < count; ++i) {
        std::size_t bit = count >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(amps[offset + i * stride], amps[offset + j * stride]);
    }
    for (std::size_t len = 2; len <= count; len <<= 1) {
        double ang = double(sign) * 2.0 * M_PI / double(len);
        cplx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < count; i += len) {
            cplx w(1, 0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                cplx u = amps[offset + (i + k) * stride];
                cplx v = amps[offset + (i + k + len / 2) * stride] * w;
                amps[offset + (i + k) * stride] = u + v;
                amps[offset + (i + k + len / 2) * stride] = u - v;
                w *= wl;
            }
        }
    }
    double scale = 1.0 / std::sqrt(double(count));
    for (std::size_t i = 0; i < count; ++i) amps[offset + i * stride] *= scale;
}

} // namespace detail

// Textbook amplitude estimation: phase estimation with `phase_bits` qubits on
// the Grover operator G = (2|chi><chi| - I)(I - 2P), P projecting onto
// ancilla=1. Returns sin^2(pi M / 2^m) for the sampled phase M; the estimate
// satisfies |a - est| <= 2 pi sqrt(a(1-a))/k + pi^2/k^2 (k = 2^m) with
// probability at least 8/pi^2 per run.
//
// G and its 2^j-th powers are applied as dense matrices on the work register
// (exact; the ledger still counts the 2^j underlying applications).
inline double amplitude_estimate(const StateVector& chi, int ancilla, int phase_bits,
                                 SequentialRng& rng, AeQueryCount* count = nullptr) {
    int w = chi.n_qubits();
    require(w <= 10, "amplitude_estimate: work register too wide for dense Grover powers");
    require(phase_bits >= 1 && phase_bits + w <= kMaxQubits, "amplitude_estimate: capacity exceeded");
    std::size_t wd = chi.dim();
    std::size_t m = std::size_t(phase_bits);
    std::size_t M = std::size_t(1) << m;

    // G = (2|chi><chi| - I) (I - 2P)
    CMat g(wd);
    std::size_t anc_mask = std::size_t(1) << ancilla;
    for (std::size_t i = 0; i < wd; ++i) {
        for (std::size_t j = 0; j < wd; ++j) {
            cplx val = 2.0 * chi.amp(i) * std::conj(chi.amp(j));
            if (i == j) val -= 1.0;
            if (j & anc_mask) val = -val;
            g(i, j) = val;
        }
    }

    // combined state: work = low bits, phase = high bits
    CVec amps(wd << m, cplx(0, 0));
    for (std::size_t i = 0; i < wd; ++i) amps[i] = chi.amp(i);
    // Hadamards on the phase register: uniform over M
    {
        double s = 1.0 / std::sqrt(double(M));
        for (std::size_t p = M; p-- > 0;)
            for (std::size_t i = 0; i < wd; ++i) amps[p * wd + i] = amps[i] * s;
    }
    // controlled G^{2^j}, control = phase bit j
    CMat gp = g;
    for (std::size_t j = 0; j < m; ++j) {
        if (j > 0) gp = gp * gp;
        CVec scratch(wd);
        for (std::size_t p = 0; p < M; ++p) {
            if (!((p >> j) & 1)) continue;
            cplx* block = &amps[p * wd];
            for (std::size_t i = 0; i < wd; ++i) {
                cplx acc(0, 0);
                const cplx* row = &gp.data[i * wd];
                for (std::size_t k2 = 0; k2 < wd; ++k2) acc += row[k2] * block[k2];
                scratch[i] = acc;
            }
            std::copy(scratch.begin(), scratch.end(), block);
        }
    }
    if (count) {
        std::uint64_t apps = M - 1;    // sum_j 2^j
        count->prep_applications += 2 * apps + 1;
        count->oracle_reflections += apps;
    }
    // inverse QFT over the phase axis, then sample it
    for (std::size_t i = 0; i < wd; ++i)
        detail::fft_axis(amps, i, wd, M, -1);
    Vec probs(M, 0.0);
    for (std::size_t p = 0; p < M; ++p)
        for (std::size_t i = 0; i < wd; ++i) probs[p] += std::norm(amps[p * wd + i]);
    double u = rng.uniform(), acc = 0;
    std::size_t measured = M - 1;
    for (std::size_t p = 0; p < M; ++p) {
        acc += probs[p];
        if (u <= acc) { measured = p; break; }
    }
    double s = std::sin(M_PI * double(measured) / double(M));
    return s * s;
}

// Powering lemma: median of ceil(18 ln(1/delta)) independent runs (forced
// odd) lifts a per-run success probability > 1/2 to 1 - delta. delta >= 1/2
// degenerates to a single run.
inline std::size_t powering_reps(double delta) {
    require(delta > 0.0, "powering_reps: delta must be positive");
    if (delta >= 0.5) return 1;
    std::size_t reps = std::size_t(std::ceil(18.0 * std::log(1.0 / delta)));
    if (reps % 2 == 0) ++reps;
    return reps;
}

inline double median_power(const std::function<double()>& estimator, double delta) {
    std::size_t reps = powering_reps(delta);
    Vec runs(reps);
    for (double& r : runs) r = estimator();
    std::nth_element(runs.begin(), runs.begin() + std::ptrdiff_t(reps / 2), runs.end());
    return runs[reps / 2];
}

// ----- QAMC mean estimation (bounded-range rescaling) -----

struct QamcOptions {
    double eps = 0.01;
    double delta = 0.05;
    int max_phase_bits = 16;
};

struct QamcResult {
    double value = 0.0;
    int phase_bits = 0;
    std::size_t reps = 0;
    AeQueryCount queries;
};

inline int phase_bits_for(double eps_unit) {
    require(eps_unit > 0, "phase_bits_for: eps must be positive");
    return std::max(1, int(std::ceil(std::log2(2.0 * M_PI / eps_unit))));
}

// Estimates E[v] over a loaded distribution with additive error eps and
// failure probability delta, rescaling v to [0,1] first. `prep` must place
// the distribution register in its superposition and leave `ancilla` at |0>.
inline QamcResult qamc_mean(const std::function<StateVector()>& prep,
                            const std::function<double(std::uint64_t)>& v,
                            double lo, double hi, int reg_offset, int reg_width, int ancilla,
                            const QamcOptions& opt, SequentialRng& rng) {
    require(hi > lo, "qamc_mean: empty value range");
    double eps_unit = opt.eps / (hi - lo);
    int m = phase_bits_for(eps_unit);
    require(m <= opt.max_phase_bits, "qamc_mean: required phase bits over limit");

    QamcResult result;
    result.phase_bits = m;
    auto scaled = [&](std::uint64_t x) {
        double raw = v(x);
        if (raw < lo - 1e-12 || raw > hi + 1e-12)
            throw ContractViolation("qamc_mean: v outside declared range");
        return std::clamp((raw - lo) / (hi - lo), 0.0, 1.0);
    };
    auto one_run = [&]() {
        StateVector chi = prep();
        oracle_rotation(chi, scaled, reg_offset, reg_width, ancilla);
        return amplitude_estimate(chi, ancilla, m, rng, &result.queries);
    };
    double a = median_power(one_run, opt.delta);
    result.reps = powering_reps(opt.delta);
    result.value = lo + (hi - lo) * a;
    return result;
}

// Convenience form over a discretized distribution: loads it on a fresh
// register and estimates E[v] over its grid labels.
inline QamcResult qamc_mean(const sde::DiscretizedDistribution& dist,
                            const std::function<double(std::uint64_t)>& v,
                            double lo, double hi, const QamcOptions& opt, SequentialRng& rng) {
    int bits = dist.n_bits;
    auto prep = [&]() {
        StateVector chi(bits + 1);
        load_distribution(chi, dist, 0, bits);
        return chi;
    };
    return qamc_mean(prep, v, lo, hi, 0, bits, bits, opt, rng);
}

// ----- robust inner product estimation -----

struct RipeResult {
    double value = 0.0;
    int phase_bits = 0;
    AeQueryCount queries;
};

// Hadamard-test state (|0>(|v>+|c>) + |1>(|v>-|c>))/2; amplitude estimation
// of the flag: p1 = (1 - <v|c>)/2, then s = ||v|| ||c|| (1 - 2 p1).
inline RipeResult inner_product_estimate(const Vec& v, const Vec& c, double eps, double gamma,
                                         SequentialRng& rng) {
    require(v.size() == c.size() && !v.empty(), "inner_product_estimate: dimension mismatch");
    double nv = norm2(v), nc = norm2(c);
    require(nv > 0 && nc > 0, "inner_product_estimate: zero-norm vector");

    std::size_t dim = 1;
    int idx_bits = 0;
    while (dim < v.size()) { dim <<= 1; ++idx_bits; }
    idx_bits = std::max(idx_bits, 1);
    dim = std::size_t(1) << idx_bits;

    int flag = idx_bits;
    StateVector chi(idx_bits + 1);
    chi.amps().assign(dim << 1, cplx(0, 0));
    for (std::size_t j = 0; j < v.size(); ++j) {
        double a = v[j] / nv, b = c[j] / nc;
        chi.amps()[j] = 0.5 * (a + b);
        chi.amps()[dim + j] = 0.5 * (a - b);
    }

    double eps_p1 = eps / (2.0 * nv * nc);
    int m = phase_bits_for(eps_p1);
    RipeResult result;
    result.phase_bits = m;
    auto one_run = [&]() { return amplitude_estimate(chi, flag, m, rng, &result.queries); };
    double p1 = median_power(one_run, gamma);
    result.value = nv * nc * (1.0 - 2.0 * p1);
    return result;
}

// ----- hardware-efficient ansatz -----

// Entangled initial state exp(-iHt)|0..0>, R_X angle embedding, then `reps`
// blocks of per-qubit R_X(theta) followed by a circular CNOT ladder.
struct HeaSpec {
    int n = 1;
    int reps = 1;
    Vec input_angles;    // n entries
    Vec thetas;          // reps * n entries
    double t = 0.0;      // entangling evolution time

    static HeaSpec zeros(int n, int reps, double t = 0.0) {
        HeaSpec s;
        s.n = n;
        s.reps = reps;
        s.t = t;
        s.input_angles.assign(std::size_t(n), 0.0);
        s.thetas.assign(std::size_t(n) * std::size_t(reps), 0.0);
        return s;
    }
};

namespace detail {

// exp(-iHt)|0..0> depends only on (n, t); cache it across circuit evaluations.
inline const CVec& entangled_initial_state(int n, double t) {
    static std::map<std::pair<int, double>, CVec> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, t);
    auto it = cache.find(key);
    if (it == cache.end()) {
        StateVector s(n);
        evolve_hamiltonian(s, hea_hamiltonian(n), t);
        it = cache.emplace(key, s.amps()).first;
    }
    return it->second;
}

} // namespace detail

inline StateVector hea_state(const HeaSpec& spec) {
    require(spec.n >= 1 && spec.n <= kMaxDenseQubits, "hea_state: capacity exceeded");
    require(spec.input_angles.size() == std::size_t(spec.n), "hea_state: input angle count");
    require(spec.thetas.size() == std::size_t(spec.n) * std::size_t(spec.reps),
            "hea_state: need reps*n trainable angles");
    StateVector state(spec.n);
    if (spec.t != 0.0) state.amps() = detail::entangled_initial_state(spec.n, spec.t);
    for (int q = 0; q < spec.n; ++q)
        detail::apply_gate_unchecked(state, gate_rx(spec.input_angles[std::size_t(q)]), {q});
    CMat cnot = gate_cnot();
    for (int k = 0; k < spec.reps; ++k) {
        for (int q = 0; q < spec.n; ++q)
            detail::apply_gate_unchecked(state, gate_rx(spec.thetas[std::size_t(k * spec.n + q)]), {q});
        if (spec.n > 1)
            for (int q = 0; q < spec.n; ++q)
                detail::apply_gate_unchecked(state, cnot, {q, (q + 1) % spec.n});
    }
    return state;
}

// Exact <Z_i> per qubit (no shot noise); pass shots > 0 for sampled values.
inline Vec hea_expectations(const HeaSpec& spec, std::size_t shots = 0, SequentialRng* rng = nullptr) {
    StateVector state = hea_state(spec);
    if (shots == 0) {
        Vec z(std::size_t(spec.n));
        for (int q = 0; q < spec.n; ++q) z[std::size_t(q)] = state.expectation_z(q);
        return z;
    }
    require(rng != nullptr, "hea_expectations: shot sampling needs an rng");
    Vec ones(std::size_t(spec.n), 0.0);
    for (std::size_t s = 0; s < shots; ++s) {
        std::uint64_t outcome = state.sample_register(0, spec.n, *rng);
        for (int q = 0; q < spec.n; ++q)
            if ((outcome >> q) & 1) ones[std::size_t(q)] += 1.0;
    }
    Vec z(std::size_t(spec.n));
    for (int q = 0; q < spec.n; ++q) z[std::size_t(q)] = 1.0 - 2.0 * ones[std::size_t(q)] / double(shots);
    return z;
}

// ----- parameter-shift gradients -----

// d<B>/dtheta_j = r (<B>_{+s} - <B>_{-s}) with r = 1/2 and s = pi/2 for R_X;
// observable B = sum_i weights[i] Z_i.
inline double param_shift_theta(const HeaSpec& spec, const Vec& weights, std::size_t j) {
    require(j < spec.thetas.size(), "param_shift_theta: index out of range");
    HeaSpec plus = spec, minus = spec;
    plus.thetas[j] += M_PI / 2.0;
    minus.thetas[j] -= M_PI / 2.0;
    Vec zp = hea_expectations(plus), zm = hea_expectations(minus);
    return 0.5 * (dot(weights, zp) - dot(weights, zm));
}

inline double param_shift_input(const HeaSpec& spec, const Vec& weights, std::size_t j) {
    require(j < spec.input_angles.size(), "param_shift_input: index out of range");
    HeaSpec plus = spec, minus = spec;
    plus.input_angles[j] += M_PI / 2.0;
    minus.input_angles[j] -= M_PI / 2.0;
    Vec zp = hea_expectations(plus), zm = hea_expectations(minus);
    return 0.5 * (dot(weights, zp) - dot(weights, zm));
}

} // namespace qpde::qsim
