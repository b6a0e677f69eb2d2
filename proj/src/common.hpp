#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace dgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Bad input: malformed files, shape mismatches, invalid configuration.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: divergence, singular matrices past the regularization
/// policy, failed gradient checks.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

inline double inv_sigmoid(double y) {
    return std::log(y / (1.0 - y));
}

// ---------------------------------------------------------------------------
// Seeded RNG streams.
//
// All randomness in the engine flows from one master seed forked per
// subsystem by label, so that independent subsystems draw from independent
// pinned streams no matter in which order they run.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic random stream. Draws are explicit (not stdlib
/// distributions) so the stream layout is pinned by this code alone.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    static Rng fork(uint64_t master_seed, const std::string& label) {
        return Rng(splitmix64(master_seed ^ fnv1a64(label)));
    }

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny versus 2^64.
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller (pair cached).
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 engine_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// ---------------------------------------------------------------------------
// Thread pool with static chunking.
//
// Reductions elsewhere in the engine are arranged so results are
// bit-identical for any worker count: parallel phases write to disjoint or
// per-block buffers that are merged serially in a fixed order.
// ---------------------------------------------------------------------------

class ThreadPool {
public:
    explicit ThreadPool(int threads) {
        if (threads <= 0) {
            unsigned hc = std::thread::hardware_concurrency();
            threads = hc == 0 ? 1 : static_cast<int>(hc);
        }
        n_threads_ = threads;
    }

    int size() const { return n_threads_; }

    /// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per
    /// worker. fn must only write to locations owned by its chunk.
    void parallel_ranges(size_t n, const std::function<void(size_t, size_t)>& fn) const {
        if (n == 0) return;
        size_t workers = std::min<size_t>(n_threads_, n);
        if (workers <= 1) {
            fn(0, n);
            return;
        }
        size_t chunk = (n + workers - 1) / workers;
        std::vector<std::thread> ts;
        ts.reserve(workers);
        for (size_t w = 0; w < workers; ++w) {
            size_t b = w * chunk;
            size_t e = std::min(n, b + chunk);
            if (b >= e) break;
            ts.emplace_back([&fn, b, e] { fn(b, e); });
        }
        for (auto& t : ts) t.join();
    }

    /// Element-wise parallel loop.
    void parallel_for(size_t n, const std::function<void(size_t)>& fn) const {
        parallel_ranges(n, [&fn](size_t b, size_t e) {
            for (size_t i = b; i < e; ++i) fn(i);
        });
    }

private:
    int n_threads_ = 1;
};

}  // namespace dgs
