#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "h2m/image.hpp"
#include "h2m/rng.hpp"

namespace h2m {

inline constexpr std::size_t kCanvas = 32;
inline constexpr Rgb kMouthColor{0.55, 0.05, 0.05};
inline constexpr Rgb kEyeColor{0.05, 0.05, 0.15};
// Geometry at scale 1; every length is multiplied by the render scale.
inline constexpr double kMouthHalfWidth = 4.5;
inline constexpr double kMouthMaxHalfHeight = 4.0;
inline constexpr double kHappyLift = 2.0;

struct Identity {
    Rgb head_color{};
    Rgb background_color{};
    double head_radius = 10.0;  // pixels at scale 1
    double eye_offset = 3.5;
    Rgb mouth_color = kMouthColor;

    bool operator==(const Identity&) const = default;
};

// True when head, background, mouth (and eye) colors are pairwise >= 0.3 apart
// in max-channel distance.
bool palette_separated(const Identity& id);

enum class Expression { neutral = 0, happy = 1, surprised = 2 };
inline constexpr int kExpressionCount = 3;

std::string expression_name(Expression e);
Expression parse_expression(const std::string& name);

struct ExpressionLabel {
    Expression expression = Expression::neutral;
    std::size_t onset_frame = 0;
    bool operator==(const ExpressionLabel&) const = default;
};

struct DrivingSignal {
    std::vector<double> samples;  // in [0, 1], one per frame
    double smoothness = 0.9;      // AR(1) coefficient of the underlying walk
};

struct PoseCenter {
    double x = kCanvas / 2.0;
    double y = kCanvas / 2.0;
    bool operator==(const PoseCenter&) const = default;
};

struct BlobSequence {
    std::vector<Image> frames;
    Identity identity;
    DrivingSignal signal;
    std::vector<ExpressionLabel> labels;  // label track: onsets ascending, first at 0
    std::vector<PoseCenter> poses;

    std::size_t length() const { return frames.size(); }
    Expression label_at(std::size_t frame) const;
};

struct BlobConfig {
    double pose_amplitude_x = 0.25;  // <= 3 px
    double pose_amplitude_y = 0.15;
    double min_period = 64.0;
    double max_period = 128.0;
    std::size_t max_label_switches = 2;
    double switch_probability = 0.6;  // per allowed switch
    double signal_smoothness = 0.9;
    bool neutral_only = false;
    std::size_t scale = 1;  // canvas = 32 * scale
};

// Deterministic rasterization; `center` is in scale-1 pixel coordinates.
Image render_frame(const Identity& id, double aperture, Expression label, PoseCenter center, std::size_t scale = 1);

Identity sample_identity(Rng& rng);
DrivingSignal sample_signal(Rng& rng, std::size_t length, double smoothness);

BlobSequence generate_sequence(Rng rng, std::size_t length, const BlobConfig& cfg = {});
// Same identity, signal, labels and poses rendered at another scale.
std::vector<Image> rerender(const BlobSequence& seq, std::size_t scale);

// Mouth-colored pixel count over the maximal (aperture 1) mouth area, clipped to 1.
double measure_aperture(const Image& frame);
bool is_mouth_pixel(const Rgb& c);

// Mouth-corner lift: mean row of mouth pixels in the central columns minus
// mean row in the outer columns, in pixels. Positive when corners curve up.
// Returns NaN when the frame has too few mouth pixels.
double mouth_curvature(const Image& frame);

// One directory per sequence: frame_%04d.ppm plus meta.json.
void write_sequence(const std::filesystem::path& dir, const BlobSequence& seq);
BlobSequence read_sequence(const std::filesystem::path& dir);

}  // namespace h2m
