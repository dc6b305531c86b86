#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypersolve {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Thrown when an argument violates a documented precondition (dimension
// mismatch, inverted interval, bad enum value, ...).
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when a state or vector-field evaluation turns non-finite. Carries
// the time (and step index, when known) at which the blowup was detected.
struct NumericalBlowup : std::runtime_error {
    double t;
    long step;
    NumericalBlowup(const std::string& msg, double t_, long step_ = -1)
        : std::runtime_error(msg), t(t_), step(step_) {}
};

// Thrown when the adaptive solver's step size underflows.
struct StiffnessError : std::runtime_error {
    double t;
    StiffnessError(const std::string& msg, double t_) : std::runtime_error(msg), t(t_) {}
};

// Thrown when backpropagation encounters a non-finite forward value.
struct PoisonedGradient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

// Deterministic RNG. The uint64 -> double mapping is spelled out here instead
// of relying on std::uniform_real_distribution, whose output is
// implementation-defined; runs must be bit-reproducible across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // Uniform in [0, 1) with 53 random mantissa bits.
    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) {
        if (lo > hi) throw InvalidInput("Rng::uniform: inverted interval");
        return lo + (hi - lo) * unit();
    }

    // Column-wise uniform draw from a box given as rows of (lo, hi).
    Vec uniform_box(const Mat& box) {
        Vec out(box.rows());
        for (Eigen::Index i = 0; i < box.rows(); ++i) out[i] = uniform(box(i, 0), box(i, 1));
        return out;
    }

    std::uint64_t next_u64() { return gen_(); }

    // Derives an independent stream for a named sub-consumer.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        // splitmix64 finalizer over (seed, stream)
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 gen_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}

}  // namespace hypersolve
