#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace defend {

// Error taxonomy. The CLI maps these to exit codes:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. All sampling goes through explicit draws on a
// mersenne twister so that seeded runs reproduce byte-for-byte across
// standard library implementations (std::*_distribution are not portable).
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return (state_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, one value per call
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // integer in [0, n)
    int uniform_int(int n) {
        if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
        return static_cast<int>(uniform() * n) % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    uint64_t raw() { return state_(); }

  private:
    // mt19937_64 has a fixed output sequence for a given seed on every platform
    std::mt19937_64 state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace defend
