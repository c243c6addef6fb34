#include "h2m/blob.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "h2m/error.hpp"
#include "json.hpp"

namespace h2m {

using nlohmann::json;

bool palette_separated(const Identity& id) {
    const Rgb colors[] = {id.head_color, id.background_color, id.mouth_color, kEyeColor};
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            if (max_channel_distance(colors[i], colors[j]) < 0.3) return false;
    return true;
}

std::string expression_name(Expression e) {
    switch (e) {
        case Expression::neutral: return "neutral";
        case Expression::happy: return "happy";
        case Expression::surprised: return "surprised";
    }
    return "neutral";
}

Expression parse_expression(const std::string& name) {
    if (name == "neutral") return Expression::neutral;
    if (name == "happy") return Expression::happy;
    if (name == "surprised") return Expression::surprised;
    throw ValidationError("unknown expression label '" + name + "' (expected neutral, happy or surprised)");
}

Expression BlobSequence::label_at(std::size_t frame) const {
    Expression e = Expression::neutral;
    for (const auto& l : labels)
        if (l.onset_frame <= frame) e = l.expression;
    return e;
}

Image render_frame(const Identity& id, double aperture, Expression label, PoseCenter center, std::size_t scale) {
    if (!(aperture >= 0.0 && aperture <= 1.0)) throw ContractError("render_frame: aperture must lie in [0,1]");
    if (scale == 0) throw ContractError("render_frame: scale must be positive");
    const double canvas = static_cast<double>(kCanvas);
    if (center.x - id.head_radius < 0.0 || center.y - id.head_radius < 0.0 || center.x + id.head_radius > canvas ||
        center.y + id.head_radius > canvas)
        throw ContractError("render_frame: head at (" + std::to_string(center.x) + "," + std::to_string(center.y) +
                            ") leaves the canvas");

    const std::size_t side = kCanvas * scale;
    Image img(side, side, id.background_color);
    const double s = static_cast<double>(scale);
    const double r2 = id.head_radius * id.head_radius;
    const double eye_r = label == Expression::surprised ? 2.0 : 1.0;
    const double eye_y = center.y - 0.3 * id.head_radius;
    const double mouth_x = center.x, mouth_y = center.y + 0.45 * id.head_radius;
    const double mouth_h = aperture * kMouthMaxHalfHeight;
    const double lift = label == Expression::happy ? kHappyLift : 0.0;

    // Head and eyes are box-filtered over a 4x4 subpixel grid so sub-pixel pose
    // changes move edges smoothly; the mouth is drawn hard on top so its pixels
    // carry the exact mouth color used for segmentation.
    constexpr int kSub = 4;
    auto base_color = [&](double x, double y) -> Rgb {
        const double dx = x - center.x, dy = y - center.y;
        if (dx * dx + dy * dy > r2) return id.background_color;
        for (double side_sign : {-1.0, 1.0}) {
            const double ex = x - (center.x + side_sign * id.eye_offset), ey = y - eye_y;
            if (ex * ex + ey * ey <= eye_r * eye_r) return kEyeColor;
        }
        return id.head_color;
    };
    const double margin = (id.head_radius + 1.5) * (id.head_radius + 1.5);
    for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px) {
            // Pixel center in scale-1 coordinates.
            const double x = (static_cast<double>(px) + 0.5) / s, y = (static_cast<double>(py) + 0.5) / s;
            const double cx = x - center.x, cy = y - center.y;
            if (cx * cx + cy * cy > margin) continue;
            Rgb c{0, 0, 0};
            for (int sy = 0; sy < kSub; ++sy)
                for (int sx = 0; sx < kSub; ++sx) {
                    const Rgb sub = base_color((static_cast<double>(px) + (sx + 0.5) / kSub) / s,
                                               (static_cast<double>(py) + (sy + 0.5) / kSub) / s);
                    for (int ch = 0; ch < 3; ++ch) c[ch] += sub[ch] / (kSub * kSub);
                }
            if (mouth_h > 0.0) {
                const double u = (x - mouth_x) / kMouthHalfWidth;
                if (std::abs(u) <= 1.0) {
                    const double v = (y - (mouth_y - lift * u * u)) / mouth_h;
                    if (u * u + v * v <= 1.0) c = id.mouth_color;
                }
            }
            img.set(px, py, c);
        }
    return img;
}

namespace {

Rgb sample_color(Rng& rng) {
    // Multiples of 1/255 so PPM storage is lossless for identity colors.
    Rgb c{};
    for (auto& ch : c) ch = static_cast<double>(25 + rng.below(221)) / 255.0;
    return c;
}

}  // namespace

Identity sample_identity(Rng& rng) {
    Identity id;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        id.head_color = sample_color(rng);
        id.background_color = sample_color(rng);
        if (palette_separated(id)) break;
    }
    if (!palette_separated(id)) throw StateError("sample_identity: could not satisfy palette separation");
    id.head_radius = 9.0 + 2.0 * rng.uniform();
    id.eye_offset = 3.0 + rng.uniform();
    return id;
}

DrivingSignal sample_signal(Rng& rng, std::size_t length, double smoothness) {
    DrivingSignal sig;
    sig.smoothness = smoothness;
    sig.samples.resize(length);
    const double rho = smoothness;
    const double innov = std::sqrt(1.0 - rho * rho);
    double u = rng.normal();
    double prev = std::clamp(0.5 + 0.35 * u, 0.0, 1.0);
    for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) u = rho * u + innov * rng.normal();
        double a = std::clamp(0.5 + 0.35 * u, 0.0, 1.0);
        if (t > 0) a = std::clamp(a, prev - 0.24, prev + 0.24);
        sig.samples[t] = a;
        prev = a;
    }
    return sig;
}

BlobSequence generate_sequence(Rng rng, std::size_t length, const BlobConfig& cfg) {
    if (length < 2) throw ContractError("generate_sequence: length must be >= 2");
    BlobSequence seq;
    auto id_rng = rng.split(0), sig_rng = rng.split(1), pose_rng = rng.split(2), label_rng = rng.split(3);
    seq.identity = sample_identity(id_rng);
    seq.signal = sample_signal(sig_rng, length, cfg.signal_smoothness);

    const double span = cfg.max_period - cfg.min_period;
    const double px = cfg.min_period + span * pose_rng.uniform(), py = cfg.min_period + span * pose_rng.uniform();
    const double phx = 2 * std::numbers::pi * pose_rng.uniform(), phy = 2 * std::numbers::pi * pose_rng.uniform();
    seq.poses.resize(length);
    for (std::size_t t = 0; t < length; ++t) {
        const double tt = static_cast<double>(t);
        seq.poses[t] = {kCanvas / 2.0 + cfg.pose_amplitude_x * std::sin(2 * std::numbers::pi * tt / px + phx),
                        kCanvas / 2.0 + cfg.pose_amplitude_y * std::sin(2 * std::numbers::pi * tt / py + phy)};
    }

    auto pick = [&] { return static_cast<Expression>(label_rng.below(kExpressionCount)); };
    seq.labels.push_back({cfg.neutral_only ? Expression::neutral : pick(), 0});
    if (!cfg.neutral_only) {
        std::vector<std::size_t> onsets;
        for (std::size_t k = 0; k < cfg.max_label_switches; ++k)
            if (label_rng.uniform() < cfg.switch_probability) onsets.push_back(1 + label_rng.below(length - 1));
        std::sort(onsets.begin(), onsets.end());
        onsets.erase(std::unique(onsets.begin(), onsets.end()), onsets.end());
        for (auto onset : onsets) {
            Expression e = pick();
            while (e == seq.labels.back().expression) e = pick();
            seq.labels.push_back({e, onset});
        }
    }

    seq.frames.reserve(length);
    for (std::size_t t = 0; t < length; ++t)
        seq.frames.push_back(render_frame(seq.identity, seq.signal.samples[t], seq.label_at(t), seq.poses[t], cfg.scale));
    return seq;
}

std::vector<Image> rerender(const BlobSequence& seq, std::size_t scale) {
    std::vector<Image> out;
    out.reserve(seq.length());
    for (std::size_t t = 0; t < seq.length(); ++t)
        out.push_back(render_frame(seq.identity, seq.signal.samples[t], seq.label_at(t), seq.poses[t], scale));
    return out;
}

bool is_mouth_pixel(const Rgb& c) { return max_channel_distance(c, kMouthColor) <= 0.15; }

double measure_aperture(const Image& frame) {
    const double scale2 = static_cast<double>(frame.width * frame.height) / static_cast<double>(kCanvas * kCanvas);
    const double max_area = std::numbers::pi * kMouthHalfWidth * kMouthMaxHalfHeight * scale2;
    std::size_t count = 0;
    for (std::size_t i = 0; i < frame.pixel_count(); ++i)
        if (is_mouth_pixel({frame.pixels[i * 3], frame.pixels[i * 3 + 1], frame.pixels[i * 3 + 2]})) ++count;
    return std::min(1.0, static_cast<double>(count) / max_area);
}

double mouth_curvature(const Image& frame) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t y = 0; y < frame.height; ++y)
        for (std::size_t x = 0; x < frame.width; ++x)
            if (is_mouth_pixel(frame.at(x, y))) pts.emplace_back(x + 0.5, y + 0.5);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (pts.size() < 4) return nan;
    double lo = pts[0].first, hi = pts[0].first;
    for (auto& p : pts) {
        lo = std::min(lo, p.first);
        hi = std::max(hi, p.first);
    }
    const double cx = 0.5 * (lo + hi), hw = 0.5 * (hi - lo);
    if (hw <= 0) return nan;
    double inner = 0, outer = 0;
    int ni = 0, no = 0;
    for (auto& [x, y] : pts) {
        const double u = std::abs(x - cx) / hw;
        if (u <= 1.0 / 3.0) {
            inner += y;
            ++ni;
        } else if (u >= 2.0 / 3.0) {
            outer += y;
            ++no;
        }
    }
    if (ni == 0 || no == 0) return nan;
    const double scale = static_cast<double>(frame.width) / static_cast<double>(kCanvas);
    return (inner / ni - outer / no) / scale;
}

namespace {

json rgb_json(const Rgb& c) { return json::array({c[0], c[1], c[2]}); }
Rgb rgb_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

void write_sequence(const std::filesystem::path& dir, const BlobSequence& seq) {
    std::filesystem::create_directories(dir);
    for (std::size_t t = 0; t < seq.length(); ++t) {
        std::ostringstream name;
        name << "frame_" << std::setw(4) << std::setfill('0') << t << ".ppm";
        write_ppm(dir / name.str(), seq.frames[t]);
    }
    json meta;
    meta["length"] = seq.length();
    meta["canvas"] = seq.frames.empty() ? kCanvas : seq.frames[0].width;
    meta["identity"] = {{"head_color", rgb_json(seq.identity.head_color)},
                        {"background_color", rgb_json(seq.identity.background_color)},
                        {"head_radius", seq.identity.head_radius},
                        {"eye_offset", seq.identity.eye_offset},
                        {"mouth_color", rgb_json(seq.identity.mouth_color)}};
    meta["signal"] = {{"smoothness", seq.signal.smoothness}, {"samples", seq.signal.samples}};
    json labels = json::array();
    for (const auto& l : seq.labels) labels.push_back({{"label", expression_name(l.expression)}, {"onset", l.onset_frame}});
    meta["labels"] = labels;
    json poses = json::array();
    for (const auto& p : seq.poses) poses.push_back(json::array({p.x, p.y}));
    meta["poses"] = poses;
    std::ofstream f(dir / "meta.json");
    f << meta.dump(1) << '\n';
}

BlobSequence read_sequence(const std::filesystem::path& dir) {
    std::ifstream f(dir / "meta.json");
    if (!f) throw ValidationError("missing " + (dir / "meta.json").string());
    json meta;
    try {
        meta = json::parse(f);
    } catch (const json::exception& e) {
        throw ValidationError((dir / "meta.json").string() + ": " + e.what());
    }
    BlobSequence seq;
    const auto& id = meta.at("identity");
    seq.identity.head_color = rgb_from(id.at("head_color"));
    seq.identity.background_color = rgb_from(id.at("background_color"));
    seq.identity.head_radius = id.at("head_radius").get<double>();
    seq.identity.eye_offset = id.at("eye_offset").get<double>();
    seq.identity.mouth_color = rgb_from(id.at("mouth_color"));
    seq.signal.smoothness = meta.at("signal").at("smoothness").get<double>();
    seq.signal.samples = meta.at("signal").at("samples").get<std::vector<double>>();
    for (const auto& l : meta.at("labels"))
        seq.labels.push_back({parse_expression(l.at("label").get<std::string>()), l.at("onset").get<std::size_t>()});
    for (const auto& p : meta.at("poses")) seq.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    const auto n = meta.at("length").get<std::size_t>();
    for (std::size_t t = 0; t < n; ++t) {
        std::ostringstream name;
        name << "frame_" << std::setw(4) << std::setfill('0') << t << ".ppm";
        seq.frames.push_back(read_ppm(dir / name.str()));
    }
    if (seq.signal.samples.size() != n || seq.poses.size() != n)
        throw ValidationError(dir.string() + ": meta.json track lengths disagree with frame count");
    return seq;
}

}  // namespace h2m
