#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctpnet {

// Error taxonomy; the CLI maps these onto exit codes 1/2/3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
void ensure_all_finite(std::span<const T> values, const char* what) {
    for (const T& v : values) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError(std::string("non-finite value produced by ") + what);
        }
    }
}

// --- deterministic RNG -------------------------------------------------
//
// splitmix64 is used to derive independent per-sample / per-epoch seeds;
// sampling maps mt19937_64 output through fixed arithmetic so streams do
// not depend on the standard library's distribution implementations.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt + 0x9e3779b97f4a7c15ULL));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() {
        // xorshift64* keeps the stream definition inside this repo.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(uniform_int(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    // standard normal via Box-Muller
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_;
};

}  // namespace ctpnet
