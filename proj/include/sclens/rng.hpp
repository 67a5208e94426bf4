#pragma once

#include <cstdint>

#include "sclens/util.hpp"

namespace sclens {

// splitmix64: used both as a stream-splitting hash and as the generator
// itself. Output sequences are reproducible bit-for-bit across platforms,
// which the determinism guarantees of the harness rely on.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x5851f42d4c957f2dull) {
        // decorrelate trivially related seeds
        splitmix64(state_);
        splitmix64(state_);
    }

    // Independent stream k derived from a master seed; workers get one each.
    static Rng stream(std::uint64_t master, std::uint64_t k) {
        std::uint64_t s = master;
        splitmix64(s);
        s ^= 0x9e3779b97f4a7c15ull * (k + 1);
        return Rng(s);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double normal() {
        // Box-Muller; one value per call keeps the stream layout simple.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
    }

    // uniform in the d-dimensional Euclidean ball of given radius
    Vec ball(int dim, double radius) {
        while (true) {
            Vec v{0.0, 0.0, 0.0};
            for (int j = 0; j < dim; ++j) v[j] = uniform(-1.0, 1.0);
            if (norm2(v) <= 1.0) return radius * v;
        }
    }

    // uniform direction on the unit sphere S^{d-1}
    Vec direction(int dim) {
        while (true) {
            Vec v{0.0, 0.0, 0.0};
            for (int j = 0; j < dim; ++j) v[j] = uniform(-1.0, 1.0);
            const double r2 = norm2(v);
            if (r2 > 1e-12 && r2 <= 1.0) return (1.0 / std::sqrt(r2)) * v;
        }
    }

  private:
    std::uint64_t state_;
};

}  // namespace sclens
