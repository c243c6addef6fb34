#include "h2m/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "h2m/error.hpp"

namespace h2m {

std::vector<std::uint8_t> mouth_union_mask(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw DimensionError("mouth_union_mask: image sizes differ");
    std::vector<std::uint8_t> m(a.pixel_count());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const Rgb pa{a.pixels[3 * i], a.pixels[3 * i + 1], a.pixels[3 * i + 2]};
        const Rgb pb{b.pixels[3 * i], b.pixels[3 * i + 1], b.pixels[3 * i + 2]};
        m[i] = is_mouth_pixel(pa) || is_mouth_pixel(pb);
    }
    return m;
}

std::vector<double> appearance_drift(const std::vector<Image>& frames, const Image& reference) {
    if (frames.empty()) throw ContractError("appearance_drift: no frames");
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        const auto mask = mouth_union_mask(f, reference);
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) continue;
            for (int c = 0; c < 3; ++c) s += std::abs(f.pixels[3 * i + c] - reference.pixels[3 * i + c]);
            n += 3;
        }
        out.push_back(n ? s / static_cast<double>(n) : 0.0);
    }
    return out;
}

double terminal_drift(std::span<const double> curve, std::size_t tail) {
    if (curve.empty()) throw ContractError("terminal_drift: empty curve");
    const std::size_t n = std::min(std::max<std::size_t>(tail, 1), curve.size());
    return std::accumulate(curve.end() - static_cast<long>(n), curve.end(), 0.0) / static_cast<double>(n);
}

double drift_slope(std::span<const double> curve) {
    const std::size_t n = curve.size();
    if (n < 2) return 0.0;
    const double mx = static_cast<double>(n - 1) / 2.0;
    const double my = std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(n);
    double sxy = 0, sxx = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double dx = static_cast<double>(k) - mx;
        sxy += dx * (curve[k] - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw ContractError("pearson: length mismatch");
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (constant(a) || constant(b)) return 0.0;
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double sync_correlation(const std::vector<Image>& frames, std::span<const double> signal) {
    if (frames.size() != signal.size())
        throw ContractError("sync_correlation: " + std::to_string(frames.size()) + " frames vs " +
                            std::to_string(signal.size()) + " signal samples");
    const auto [lo, hi] = std::minmax_element(signal.begin(), signal.end());
    if (signal.empty() || *lo == *hi)
        throw ContractError("sync_correlation: driving signal has zero variance; correlation undefined");
    std::vector<double> measured;
    measured.reserve(frames.size());
    for (const auto& f : frames) measured.push_back(measure_aperture(f));
    return pearson(measured, signal);
}

double temporal_smoothness(const std::vector<Image>& frames) {
    if (frames.size() < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 1; i < frames.size(); ++i) s += mean_abs_diff(frames[i], frames[i - 1]);
    return s / static_cast<double>(frames.size() - 1);
}

double expression_response(const std::vector<Image>& frames, std::size_t switch_frame, std::size_t span) {
    auto side = [&](std::size_t from, std::size_t to) {
        double s = 0;
        std::size_t n = 0;
        for (std::size_t k = from; k < std::min(to, frames.size()); ++k) {
            const double c = mouth_curvature(frames[k]);
            if (std::isfinite(c)) {
                s += c;
                ++n;
            }
        }
        return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    };
    const std::size_t before = switch_frame >= span ? switch_frame - span : 0;
    return side(switch_frame, switch_frame + span) - side(before, switch_frame);
}

SignTest sign_test(std::span<const double> lower, std::span<const double> higher) {
    if (lower.size() != higher.size()) throw ContractError("sign_test: unpaired samples");
    SignTest r;
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (lower[i] < higher[i])
            ++r.wins;
        else if (lower[i] > higher[i])
            ++r.losses;
        else
            ++r.ties;
    }
    // P(X >= wins), X ~ Binomial(wins + losses, 1/2)
    const std::size_t n = r.wins + r.losses;
    double p = 0.0, c = 1.0;
    for (std::size_t k = 0; k <= n; ++k) {
        if (k > 0) c = c * static_cast<double>(n - k + 1) / static_cast<double>(k);
        if (k >= r.wins) p += c;
    }
    r.p_value = n == 0 ? 1.0 : p / std::pow(2.0, static_cast<double>(n));
    return r;
}

DriftReport make_drift_report(const std::vector<Image>& frames, const Image& reference,
                              std::span<const double> signal, std::size_t switch_frame, std::size_t response_span) {
    DriftReport r;
    r.drift = appearance_drift(frames, reference);
    r.terminal_drift = terminal_drift(r.drift);
    r.drift_slope = drift_slope(r.drift);
    r.sync = frames.size() > 1 ? sync_correlation(frames, signal.subspan(0, frames.size())) : 0.0;
    r.smoothness = temporal_smoothness(frames);
    r.expression_response = response_span > 0 ? expression_response(frames, switch_frame, response_span)
                                               : std::numeric_limits<double>::quiet_NaN();
    return r;
}

MeanSd mean_sd(std::span<const double> values) {
    if (values.empty()) return {};
    const double n = static_cast<double>(values.size());
    const double m = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0;
    for (double v : values) ss += (v - m) * (v - m);
    return {m, values.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0};
}

}  // namespace h2m
