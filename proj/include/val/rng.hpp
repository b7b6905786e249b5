#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace val {

// Counter-based pseudo-random generator. Every draw is a pure function of
// (key, counter), so a stream can be reconstructed from its seed and position
// alone. Streams for independent components are derived by name via fork(),
// which keeps the reproducibility contract simple: seed + stream name + draw
// index fully determine any random value in the system.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(mix(seed + 0x9e3779b97f4a7c15ull) ^ mix(stream + 0x6a09e667f3bcc909ull))) {}

    static std::uint64_t stream_id(std::string_view name) {
        // FNV-1a
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : name) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    Rng fork(std::string_view name) const { return fork(stream_id(name)); }

    Rng fork(std::string_view name, std::uint64_t b) const { return fork(stream_id(name), b); }

    Rng fork(std::uint64_t a, std::uint64_t b = 0) const {
        Rng r(0);
        r.key_ = mix(key_ ^ mix(a + 0xbf58476d1ce4e5b9ull) ^ mix(b + 0x94d049bb133111ebull));
        r.counter_ = 0;
        return r;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    int uniform_int(int n) { return n <= 1 ? 0 : static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; consumes two draws so positions stay a pure function of the counter.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

}  // namespace val
