#pragma once

#include <cstdint>

namespace h2m {

// Counter-based splittable generator. Output i of a stream is a pure function
// of (key, i), so substreams obtained with split() do not depend on how many
// draws the parent has made.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    // Standard normal (Box-Muller, both variates used).
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    Rng split(std::uint64_t child_id) const;

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

   private:
    Rng(std::uint64_t key, std::uint64_t counter, bool) : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace h2m
