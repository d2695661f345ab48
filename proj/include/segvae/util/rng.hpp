#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace segvae {

// Deterministic random source. Gaussian draws use Box-Muller without a cached
// second value, so the engine state fully describes the stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);
    double normal();
    std::uint64_t below(std::uint64_t n);   // uniform integer in [0, n)
    bool bernoulli(double p);

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[below(i)]);
        }
    }

    std::string save_state() const;
    void restore_state(const std::string& state);

    // Independent stream keyed by (base, key); used for per-class latents.
    static Rng derive(std::uint64_t base, std::uint64_t key);

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace segvae
