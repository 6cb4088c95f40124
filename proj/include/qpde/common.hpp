#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace qpde {

using Vec = std::vector<double>;

// Error taxonomy shared by all modules. Everything derives from
// std::runtime_error so callers can catch broadly or precisely.
struct InvalidArgument : std::runtime_error {
    explicit InvalidArgument(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractViolation : std::runtime_error {
    explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

// Dense row-major matrix, just enough linear algebra for this project.
struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    Vec apply(const Vec& x) const {
        Vec y(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            double acc = 0.0;
            const double* row = &data[i * cols];
            for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
            y[i] = acc;
        }
        return y;
    }

    // y = A^T x
    Vec apply_transposed(const Vec& x) const {
        Vec y(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* row = &data[i * cols];
            for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * x[i];
        }
        return y;
    }
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2_sq(const Vec& a) { return dot(a, a); }
inline double norm2(const Vec& a) { return std::sqrt(norm2_sq(a)); }

inline Vec& axpy(Vec& y, double alpha, const Vec& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
    return y;
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Least-squares slope of y against x.
inline double ls_slope(const Vec& x, const Vec& y) {
    require(x.size() == y.size() && x.size() >= 2, "ls_slope: need >= 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) { mx += x[i]; my += y[i]; }
    mx /= double(x.size());
    my /= double(x.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        den += (x[i] - mx) * (x[i] - mx);
    }
    require(den > 0, "ls_slope: degenerate abscissae");
    return num / den;
}

// Deterministic parallel map: each index writes only its own slot, so the
// result is identical for any thread count. Reductions stay with the caller.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    unsigned tc = std::min<unsigned>(threads, std::max(1u, std::thread::hardware_concurrency()));
    if (std::size_t(tc) > n) tc = unsigned(n);
    tc = std::max(1u, tc);
    std::vector<std::thread> pool;
    pool.reserve(tc);
    for (unsigned t = 0; t < tc; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += tc) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace qpde
