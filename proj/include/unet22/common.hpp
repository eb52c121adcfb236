#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace unet22 {

// Error taxonomy. Every failure mode in the library maps onto one of these:
//   ShapeError    - tensor extents do not conform
//   ConfigError   - invalid hyperparameter / construction constraint
//   ContractError - API misuse (backward twice, missing gradient, bad class id)
//   IoError       - file format / filesystem problems
//   NumericError  - NaN/Inf detected where finite values are the contract
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

// Deterministic RNG. mt19937_64 output is standardized, and the transforms
// below avoid std::distribution objects whose sequences vary across standard
// library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Box-Muller with a cached spare
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * kPi * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    // normal truncated to |z| <= clip, scaled by stddev
    double trunc_normal(double stddev, double clip = 2.0) {
        double z = normal();
        while (std::abs(z) > clip) z = normal();
        return z * stddev;
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent stream from (seed, tag). FNV-1a over the tag, then a
// splitmix64 finalizer so nearby seeds do not produce correlated streams.
inline uint64_t seed_mix(uint64_t seed, std::string_view tag) {
    uint64_t h = 1469598103934665603ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    uint64_t z = seed ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace detail {
inline std::atomic<bool>& finite_flag() {
    static std::atomic<bool> f{false};
    return f;
}
}  // namespace detail

// When enabled, every op validates that its output is finite and throws
// NumericError otherwise. Tests switch this on; the training loop polices the
// loss value instead.
inline void set_finite_checks(bool on) { detail::finite_flag().store(on); }
inline bool finite_checks_enabled() { return detail::finite_flag().load(); }

}  // namespace unet22
