#include "h2m/rng.hpp"

#include <cmath>
#include <numbers>

namespace h2m {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

std::uint64_t Rng::next_u64() {
    const std::uint64_t c = counter_++;
    return mix64(mix64(c * kGolden + key_) ^ (key_ >> 17 | key_ << 47));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n <= 1) return 0;
    // Rejection keeps the result exactly uniform.
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return x % n;
}

Rng Rng::split(std::uint64_t child_id) const {
    return Rng(mix64(key_ ^ mix64(child_id * kGolden + 0x632BE59BD9B4E019ULL)), 0, true);
}

}  // namespace h2m
