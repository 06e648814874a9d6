// Counter-based random number generator (SplitMix64). The state is a seed
// plus a call counter; the output at call t is a pure function of (seed, t),
// so identical seeds produce bit-identical streams on every platform.
// Gaussian variates come from Box-Muller with the usual spare caching.

#pragma once

#include <cstdint>
#include <vector>

namespace camo {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform01();

    double uniform(double lo, double hi);

    // Standard normal, Box-Muller.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n), rejection sampled (no modulo bias).
    std::uint64_t below(std::uint64_t n);

    // Fisher-Yates, in place.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream keyed by (seed, stream_id). Used to hand each
    // worker / sample its own generator.
    Rng derive(std::uint64_t stream_id) const;

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// SplitMix64 finalizer, also used for seed derivation and content hashing.
std::uint64_t mix64(std::uint64_t x);

} // namespace camo
