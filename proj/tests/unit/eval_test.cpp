#include <cmath>

#include "doctest.h"
#include "h2m/blob.hpp"
#include "h2m/error.hpp"
#include "h2m/eval.hpp"
#include "h2m/rng.hpp"

using namespace h2m;

namespace {

BlobSequence neutral_sequence(std::uint64_t seed, std::size_t length) {
    BlobConfig cfg;
    cfg.neutral_only = true;
    return generate_sequence(Rng(seed), length, cfg);
}

// Binomial upper tail by direct summation of C(n, k) / 2^n, an independent oracle.
double upper_tail(int n, int wins) {
    double p = 0;
    for (int k = wins; k <= n; ++k) {
        double c = 1;
        for (int j = 1; j <= k; ++j) c = c * (n - k + j) / j;
        p += c;
    }
    return p / std::pow(2.0, n);
}

}  // namespace

TEST_SUITE("eval-harness") {
    TEST_CASE("reference frame has zero drift") {
        const auto seq = neutral_sequence(1, 8);
        const auto d = appearance_drift(seq.frames, seq.frames[0]);
        CHECK(d[0] == 0.0);
        for (double v : d) CHECK(v >= 0.0);
    }

    TEST_CASE("background shift gives drift equal to the background fraction") {
        const auto seq = neutral_sequence(2, 2);
        const Image& frame = seq.frames[0];
        Image ref = frame;
        std::size_t background = 0, outside_mouth = 0;
        for (std::size_t y = 0; y < ref.height; ++y)
            for (std::size_t x = 0; x < ref.width; ++x) {
                if (is_mouth_pixel(frame.at(x, y))) continue;
                ++outside_mouth;
                if (frame.at(x, y) == seq.identity.background_color) {
                    ++background;
                    Rgb c = frame.at(x, y);
                    for (auto& ch : c) ch += 0.2;
                    ref.set(x, y, c);
                }
            }
        const double expected = 0.2 * static_cast<double>(background) / static_cast<double>(outside_mouth);
        CHECK(appearance_drift({frame}, ref)[0] == doctest::Approx(expected).epsilon(1e-12));
    }

    TEST_CASE("ground-truth renders stay under 0.02 drift") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto seq = neutral_sequence(seed, 256);
            for (double v : appearance_drift(seq.frames, seq.frames[0])) REQUIRE(v < 0.02);
        }
    }

    TEST_CASE("aperture alone does not register as drift") {
        Rng rng(4);
        const Identity id = sample_identity(rng);
        const Image ref = render_frame(id, 0.3, Expression::neutral, {});
        for (double a : {0.0, 0.1, 0.5, 0.9, 1.0}) {
            const Image f = render_frame(id, a, Expression::neutral, {});
            CHECK(appearance_drift({f}, ref)[0] < 1e-6);
        }
    }

    TEST_CASE("sync tracks the signal on ground truth") {
        const auto seq = neutral_sequence(5, 200);
        const double r = sync_correlation(seq.frames, seq.signal.samples);
        CHECK(r > 0.95);
        std::vector<double> flipped;
        for (double v : seq.signal.samples) flipped.push_back(1.0 - v);
        CHECK(sync_correlation(seq.frames, flipped) == doctest::Approx(-r).epsilon(1e-12));
    }

    TEST_CASE("constant signal is undefined but constant frames give zero") {
        const auto seq = neutral_sequence(6, 20);
        CHECK_THROWS_AS(sync_correlation(seq.frames, std::vector<double>(20, 0.4)), ContractError);
        const std::vector<Image> still(20, seq.frames[0]);
        CHECK(sync_correlation(still, seq.signal.samples) == 0.0);
        CHECK_THROWS_AS(sync_correlation(still, std::vector<double>(19, 0.4)), ContractError);
    }

    TEST_CASE("slope and terminal drift") {
        std::vector<double> line;
        for (int k = 0; k < 40; ++k) line.push_back(0.01 + 0.002 * k);
        CHECK(drift_slope(line) == doctest::Approx(0.002).epsilon(1e-12));
        CHECK(terminal_drift(line, 16) == doctest::Approx(0.01 + 0.002 * 31.5).epsilon(1e-12));
        CHECK(terminal_drift(std::vector<double>{0.3}) == 0.3);
        CHECK(drift_slope(std::vector<double>{0.3}) == 0.0);
    }

    TEST_CASE("exact sign test") {
        const std::vector<double> low{1, 2, 3, 4, 5}, high{2, 3, 4, 5, 6};
        const auto all = sign_test(low, high);
        CHECK(all.wins == 5);
        CHECK(all.p_value == doctest::Approx(1.0 / 32).epsilon(1e-15));
        const std::vector<double> mixed{1, 2, 9, 4, 5, 0, 3};
        const std::vector<double> other{2, 3, 4, 4, 6, 1, 5};
        const auto m = sign_test(mixed, other);
        CHECK(m.wins == 5);
        CHECK(m.losses == 1);
        CHECK(m.ties == 1);
        CHECK(m.p_value == doctest::Approx(upper_tail(6, 5)).epsilon(1e-14));
        CHECK(sign_test(high, low).p_value == 1.0);
    }

    TEST_CASE("smoothness and expression response") {
        const auto seq = neutral_sequence(7, 10);
        CHECK(temporal_smoothness(std::vector<Image>(5, seq.frames[0])) == 0.0);
        Rng rng(8);
        const Identity id = sample_identity(rng);
        std::vector<Image> frames;
        for (int k = 0; k < 8; ++k) frames.push_back(render_frame(id, 0.6, Expression::neutral, {}));
        for (int k = 0; k < 8; ++k) frames.push_back(render_frame(id, 0.6, Expression::happy, {}));
        CHECK(expression_response(frames, 8, 8) > 0.5);
        CHECK(expression_response(std::vector<Image>(16, frames[0]), 8, 8) == 0.0);
    }

    TEST_CASE("drift report fields are finite and bounded") {
        const auto seq = neutral_sequence(9, 64);
        const auto rep = make_drift_report(seq.frames, seq.frames[0], seq.signal.samples);
        CHECK(rep.drift.size() == 64);
        CHECK(std::isfinite(rep.terminal_drift));
        CHECK(std::isfinite(rep.drift_slope));
        CHECK(rep.sync >= -1.0);
        CHECK(rep.sync <= 1.0);
        CHECK(std::isfinite(rep.smoothness));
        const auto ms = mean_sd(std::vector<double>{1, 2, 3, 4});
        CHECK(ms.mean == 2.5);
        CHECK(ms.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
    }
}
