#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace larc {

// Deterministic, serializable random stream (xoshiro256**). We avoid the
// standard <random> distributions because their output is implementation
// defined; engine + sampling here is fully pinned so identically seeded runs
// are bitwise reproducible across toolchains.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}

    // One logical stream per concern (init, dropout, shuffle, data synthesis),
    // all derived from a single user seed.
    RngStream(std::uint64_t seed, std::uint64_t stream_id) {
        std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1));
        for (auto& s : state_) s = splitmix64(x);
        // avoid the all-zero state
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
        has_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0,1), 53-bit resolution
    double u01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int range_int(int lo, int hi) { // inclusive bounds
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double normal(double mean, double stddev) {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return mean + stddev * cached_normal_;
        }
        // Box-Muller; u clamped away from 0
        double u = u01();
        if (u <= 0.0) u = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * 3.14159265358979323846 * u01();
        cached_normal_ = r * std::sin(theta);
        has_cached_normal_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // state serialization for checkpoints
    std::array<std::uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<std::uint64_t, 4>& s) {
        state_ = s;
        has_cached_normal_ = false;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::array<std::uint64_t, 4> state_{};
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

// Stream ids used by the trainer; fixed so that consuming one stream never
// perturbs another.
enum class StreamId : std::uint64_t {
    init = 1,
    dropout = 2,
    shuffle = 3,
    synth = 4,
};

inline RngStream make_stream(std::uint64_t seed, StreamId id) {
    return RngStream(seed, static_cast<std::uint64_t>(id));
}

} // namespace larc
