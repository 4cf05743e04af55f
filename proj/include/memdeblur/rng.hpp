#ifndef MEMDEBLUR_RNG_HPP
#define MEMDEBLUR_RNG_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <string>

namespace memdeblur {

// Deterministic RNG wrapper. Draw helpers avoid std::*_distribution so that
// a given seed produces the same stream on every standard library.
class Rng {
public:
    Rng() : gen_(0x9e3779b97f4a7c15ULL) {}
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        return n == 0 ? 0
                      : static_cast<std::uint64_t>(
                            (static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (one value per call, cached pair).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    bool coin() { return (gen_() & 1u) != 0; }

    // Split off an independent stream (used to decouple init / data / augment).
    Rng split() { return Rng(gen_() ^ 0xd1b54a32d192ed03ULL); }

    std::string serialize() const {
        std::ostringstream os;
        std::uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof bits);
        os << gen_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << bits;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int flag = 0;
        std::uint64_t bits = 0;
        is >> gen_ >> flag >> bits;
        std::memcpy(&spare_, &bits, sizeof bits);
        has_spare_ = flag != 0;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace memdeblur

#endif
