#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "h2m/blob.hpp"
#include "h2m/image.hpp"

namespace h2m {

// Pixels that are mouth-colored in either image.
std::vector<std::uint8_t> mouth_union_mask(const Image& a, const Image& b);

// D(k): mean abs difference to the reference over pixels outside the mouth
// (mouth segmented by color in either frame), all three channels.
std::vector<double> appearance_drift(const std::vector<Image>& frames, const Image& reference);

// Mean of D over the last `tail` frames (the final segment by default).
double terminal_drift(std::span<const double> curve, std::size_t tail = 16);
// Least-squares slope of D against frame index.
double drift_slope(std::span<const double> curve);

// Pearson correlation; zero when either side is constant.
double pearson(std::span<const double> a, std::span<const double> b);

// Correlation of measured aperture with the driving signal. A constant signal
// makes the correlation undefined and throws ContractError.
double sync_correlation(const std::vector<Image>& frames, std::span<const double> signal);

// Mean abs difference between consecutive frames.
double temporal_smoothness(const std::vector<Image>& frames);

// Mean mouth curvature over frames [switch, switch + span) minus that over
// [switch - span, switch). Frames with too few mouth pixels are skipped; NaN
// if a side has none.
double expression_response(const std::vector<Image>& frames, std::size_t switch_frame, std::size_t span);

struct SignTest {
    std::size_t wins = 0;    // pairs where the first arm is strictly lower
    std::size_t losses = 0;
    std::size_t ties = 0;
    double p_value = 1.0;    // exact one-sided binomial, ties dropped
};

// Tests whether `lower` tends to be smaller than `higher` across paired seeds.
SignTest sign_test(std::span<const double> lower, std::span<const double> higher);

struct DriftReport {
    std::vector<double> drift;  // D(k)
    double terminal_drift = 0.0;
    double drift_slope = 0.0;
    double sync = 0.0;
    double smoothness = 0.0;
    double expression_response = 0.0;  // NaN when no label switch was evaluated
};

// Single-frame input reports sync 0: correlation needs two samples.
DriftReport make_drift_report(const std::vector<Image>& frames, const Image& reference,
                              std::span<const double> signal, std::size_t switch_frame = 0,
                              std::size_t response_span = 0);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};
MeanSd mean_sd(std::span<const double> values);

}  // namespace h2m
