#pragma once

#include <cmath>
#include <cstdint>

#include "qpde/common.hpp"

namespace qpde {

// Counter-based splittable RNG. A Stream is a pure function of
// (seed, purpose, id0, id1); the k-th variate of a stream is a pure function
// of the counter k. Parallel and serial execution therefore agree bitwise,
// whatever the scheduling.
//
// Mixing is the 64-bit SplitMix64 finalizer applied to the combined key; the
// counter is folded in with a second round so nearby counters decorrelate.

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

enum class StreamPurpose : std::uint64_t {
    increments = 1,
    init = 2,
    forward_gradient = 3,
    measurement = 4,
    batch = 5,
    generic = 6,
};

class RngStream {
public:
    RngStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t id0 = 0, std::uint64_t id1 = 0) {
        std::uint64_t k = detail::mix64(seed);
        k = detail::mix64(k ^ static_cast<std::uint64_t>(purpose));
        k = detail::mix64(k ^ id0);
        k = detail::mix64(k ^ detail::mix64(id1));
        key_ = k;
    }

    // k-th raw 64-bit word of the stream.
    std::uint64_t bits(std::uint64_t counter) const {
        return detail::mix64(key_ ^ detail::mix64(counter + 0x632be59bd9b4e019ULL));
    }

    // Uniform in (0,1]; never returns 0 so it is safe under log().
    double uniform(std::uint64_t counter) const {
        return (double(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
    }

    // Box-Muller pair of independent N(0,1) draws; `pair_index` selects the pair.
    void normal_pair(std::uint64_t pair_index, double& z0, double& z1) const {
        double u1 = uniform(2 * pair_index);
        double u2 = uniform(2 * pair_index + 1);
        double r = std::sqrt(-2.0 * std::log(u1));
        double phi = 2.0 * M_PI * u2;
        z0 = r * std::cos(phi);
        z1 = r * std::sin(phi);
    }

    double normal(std::uint64_t index) const {
        double z0, z1;
        normal_pair(index / 2, z0, z1);
        return (index % 2 == 0) ? z0 : z1;
    }

private:
    std::uint64_t key_;
};

// Stateful convenience wrapper for consumers that just want a sequence.
class SequentialRng {
public:
    explicit SequentialRng(RngStream stream) : stream_(stream) {}
    SequentialRng(std::uint64_t seed, StreamPurpose purpose, std::uint64_t id0 = 0, std::uint64_t id1 = 0)
        : stream_(seed, purpose, id0, id1) {}

    double uniform() { return stream_.uniform(counter_++); }
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double z0, z1;
        stream_.normal_pair(counter_++, z0, z1);
        spare_ = z1;
        have_spare_ = true;
        return z0;
    }
    std::uint64_t bits() { return stream_.bits(counter_++); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return bits() % n; }

private:
    RngStream stream_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace qpde
