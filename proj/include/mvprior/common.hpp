#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace mvprior {

/// Base error carrying the process exit code the CLI maps it to.
class Error : public std::runtime_error {
public:
    Error(const std::string& what, int exit_code)
        : std::runtime_error(what), exit_code_(exit_code) {}
    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

/// Bad arguments or misuse of an interface (exit 1).
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(what, 1) {}
};

/// Broken or insufficient input data (exit 2).
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(what, 2) {}
};

/// Numerical failure: indefinite covariance, singular system, non-finite loss (exit 3).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what, 3) {}
};

/// Deterministic seeded generator. All randomness in the library flows through
/// an explicit Rng; nothing touches global state. Derivation mixes a master
/// seed with a path of indices so parallel workers get independent streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);
    static Rng derive(std::uint64_t master, std::initializer_list<std::uint64_t> path);

    double normal() { return normal_(gen_); }
    double uniform() { return uniform_(gen_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Worker cap for parallel sections: MVPRIOR_THREADS if set, else hardware
/// concurrency, floored at 1.
int worker_threads();

/// Runs fn(i) for i in [0, n). Falls back to a serial loop when only one
/// worker is available. fn must not touch shared mutable state.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace mvprior
