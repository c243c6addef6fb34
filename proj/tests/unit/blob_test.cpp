#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "h2m/blob.hpp"
#include "h2m/error.hpp"

using namespace h2m;

namespace {

Identity fixed_identity() {
    Identity id;
    id.head_color = {200 / 255.0, 160 / 255.0, 120 / 255.0};
    id.background_color = {30 / 255.0, 90 / 255.0, 200 / 255.0};
    return id;
}

std::size_t mouth_pixels(const Image& img) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) n += is_mouth_pixel(img.at(x, y));
    return n;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_SUITE("synthetic-talking-blob") {
    TEST_CASE("closed mouth renders no mouth pixels") {
        const auto img = render_frame(fixed_identity(), 0.0, Expression::neutral, {});
        CHECK(mouth_pixels(img) == 0);
        CHECK(measure_aperture(img) == 0.0);
    }

    TEST_CASE("mouth area grows with aperture") {
        const auto id = fixed_identity();
        CHECK(mouth_pixels(render_frame(id, 1.0, Expression::neutral, {})) >
              mouth_pixels(render_frame(id, 0.5, Expression::neutral, {})));
        for (auto label : {Expression::neutral, Expression::happy, Expression::surprised}) {
            double prev = -1.0;
            for (int i = 0; i <= 50; ++i) {
                const double m = measure_aperture(render_frame(id, i / 50.0, label, {}));
                CHECK(m >= prev);
                prev = m;
            }
        }
    }

    TEST_CASE("rendering is deterministic") {
        const auto a = render_frame(fixed_identity(), 0.7, Expression::neutral, {15.3, 16.2});
        const auto b = render_frame(fixed_identity(), 0.7, Expression::neutral, {15.3, 16.2});
        CHECK(a == b);
    }

    TEST_CASE("head outside the canvas is rejected") {
        CHECK_THROWS_AS(render_frame(fixed_identity(), 0.5, Expression::neutral, {5.0, 16.0}), ContractError);
        CHECK_THROWS_AS(render_frame(fixed_identity(), 1.5, Expression::neutral, {}), ContractError);
    }

    TEST_CASE("expressions are geometric edits") {
        const auto id = fixed_identity();
        const auto neutral = render_frame(id, 0.6, Expression::neutral, {});
        const auto happy = render_frame(id, 0.6, Expression::happy, {});
        CHECK(std::abs(mouth_curvature(neutral)) < 0.3);
        CHECK(mouth_curvature(happy) > mouth_curvature(neutral) + 0.5);
        auto dark = [](const Image& img) {
            std::size_t n = 0;
            for (std::size_t i = 0; i < img.pixel_count(); ++i)
                n += max_channel_distance(img.at(i % img.width, i / img.width), kEyeColor) < 0.01;
            return n;
        };
        CHECK(dark(render_frame(id, 0.6, Expression::surprised, {})) > 2 * dark(neutral));
    }

    TEST_CASE("full mouth-colored frame saturates at one") {
        CHECK(measure_aperture(Image(32, 32, kMouthColor)) == 1.0);
        CHECK(measure_aperture(Image(64, 64, kMouthColor)) == 1.0);
    }

    TEST_CASE("sampled identities keep the palette separated") {
        Rng rng(3);
        for (int i = 0; i < 200; ++i) CHECK(palette_separated(sample_identity(rng)));
    }

    TEST_CASE("sequence generation is reproducible") {
        const auto a = generate_sequence(Rng(11), 40);
        const auto b = generate_sequence(Rng(11), 40);
        CHECK(a.frames == b.frames);
        CHECK(a.signal.samples == b.signal.samples);
        CHECK(a.labels == b.labels);
        CHECK(a.poses == b.poses);
        CHECK(generate_sequence(Rng(12), 40).frames != a.frames);
    }

    TEST_CASE("sequence invariants hold over 10^4 frames") {
        std::size_t frames = 0;
        for (std::uint64_t s = 0; frames < 10000; ++s) {
            const auto seq = generate_sequence(Rng(100 + s), 500);
            frames += seq.length();
            REQUIRE(seq.signal.samples.size() == seq.length());
            REQUIRE(seq.poses.size() == seq.length());
            for (std::size_t t = 0; t < seq.length(); ++t) {
                CHECK(seq.signal.samples[t] >= 0.0);
                CHECK(seq.signal.samples[t] <= 1.0);
                if (t > 0) CHECK(std::abs(seq.signal.samples[t] - seq.signal.samples[t - 1]) <= 0.25);
                CHECK(std::abs(seq.poses[t].x - 16.0) <= 3.0);
                CHECK(std::abs(seq.poses[t].y - 16.0) <= 3.0);
            }
            CHECK(seq.labels.size() <= 3);
            CHECK(seq.labels.front().onset_frame == 0);
            for (std::size_t i = 1; i < seq.labels.size(); ++i) {
                CHECK(seq.labels[i].onset_frame > seq.labels[i - 1].onset_frame);
                CHECK(seq.labels[i].onset_frame < seq.length());
            }
        }
    }

    TEST_CASE("measured aperture tracks the driving signal") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto seq = generate_sequence(Rng(s), 256);
            std::vector<double> measured;
            for (const auto& f : seq.frames) measured.push_back(measure_aperture(f));
            CHECK(pearson(measured, seq.signal.samples) > 0.95);
        }
    }

    TEST_CASE("rerender at 2x keeps the same content") {
        const auto seq = generate_sequence(Rng(5), 20);
        const auto hq = rerender(seq, 2);
        REQUIRE(hq.size() == seq.length());
        CHECK(hq[0].width == 64);
        double gap = 0;
        for (std::size_t t = 0; t < seq.length(); ++t) gap += std::abs(measure_aperture(hq[t]) - measure_aperture(seq.frames[t]));
        CHECK(gap / seq.length() < 0.06);
    }

    TEST_CASE("sequence directory round trip") {
        const auto dir = std::filesystem::temp_directory_path() / "h2m_blob_roundtrip";
        std::filesystem::remove_all(dir);
        const auto seq = generate_sequence(Rng(9), 12);
        write_sequence(dir, seq);
        const auto back = read_sequence(dir);
        CHECK(back.identity == seq.identity);
        CHECK(back.signal.samples == seq.signal.samples);
        CHECK(back.labels == seq.labels);
        CHECK(back.poses == seq.poses);
        REQUIRE(back.length() == seq.length());
        for (std::size_t t = 0; t < seq.length(); ++t) {
            double worst = 0;
            for (std::size_t i = 0; i < seq.frames[t].pixels.size(); ++i)
                worst = std::max(worst, std::abs(back.frames[t].pixels[i] - seq.frames[t].pixels[i]));
            CHECK(worst <= 0.5 / 255.0 + 1e-12);
        }
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("generation throughput") {
        const auto start = std::chrono::steady_clock::now();
        const auto seq = generate_sequence(Rng(1), 3000);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        CHECK(seq.length() / secs >= 1000.0);
    }
}
