#include "h2m/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "h2m/error.hpp"

namespace h2m {

Image::Image(std::size_t w, std::size_t h, Rgb fill) : width(w), height(h), pixels(w * h * 3) {
    for (std::size_t i = 0; i < w * h; ++i)
        for (int c = 0; c < 3; ++c) pixels[i * 3 + c] = fill[c];
}

Rgb Image::at(std::size_t x, std::size_t y) const {
    const auto* p = &pixels[(y * width + x) * 3];
    return {p[0], p[1], p[2]};
}

void Image::set(std::size_t x, std::size_t y, Rgb c) {
    auto* p = &pixels[(y * width + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
}

double max_channel_distance(const Rgb& a, const Rgb& b) {
    return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

double mean_abs_diff(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw DimensionError("mean_abs_diff: image sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
    return s / static_cast<double>(a.pixels.size());
}

double max_abs_diff(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw DimensionError("max_abs_diff: image sizes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
    return m;
}

Tensor image_to_chw(const Image& img) {
    const std::size_t plane = img.width * img.height;
    std::vector<double> out(3 * plane);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = img.pixels[i * 3 + c];
    return Tensor::from({3, img.height, img.width}, std::move(out));
}

Image chw_to_image(const Tensor& chw) {
    const auto& s = chw.shape();
    if (s.size() != 3 || s[0] != 3) throw DimensionError("chw_to_image expects [3,H,W], got " + shape_str(s));
    Image img(s[2], s[1]);
    const std::size_t plane = s[1] * s[2];
    const auto v = chw.data();
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = std::clamp(v[c * plane + i], 0.0, 1.0);
    return img;
}

Tensor images_to_batch(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw ContractError("images_to_batch: empty list");
    const std::size_t w = imgs[0].width, h = imgs[0].height, plane = w * h;
    std::vector<double> out(imgs.size() * 3 * plane);
    for (std::size_t n = 0; n < imgs.size(); ++n) {
        if (imgs[n].width != w || imgs[n].height != h) throw DimensionError("images_to_batch: mixed sizes");
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t c = 0; c < 3; ++c) out[(n * 3 + c) * plane + i] = imgs[n].pixels[i * 3 + c];
    }
    return Tensor::from({imgs.size(), 3, h, w}, std::move(out));
}

Image upsample_bilinear(const Image& img, std::size_t factor) {
    Image out(img.width * factor, img.height * factor);
    const double f = static_cast<double>(factor);
    for (std::size_t y = 0; y < out.height; ++y)
        for (std::size_t x = 0; x < out.width; ++x) {
            // Half-pixel aligned sampling, edge clamped.
            const double sx = std::clamp((x + 0.5) / f - 0.5, 0.0, static_cast<double>(img.width - 1));
            const double sy = std::clamp((y + 0.5) / f - 0.5, 0.0, static_cast<double>(img.height - 1));
            const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
            const auto x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
            const double fx = sx - x0, fy = sy - y0;
            Rgb c{};
            for (int k = 0; k < 3; ++k)
                c[k] = (1 - fy) * ((1 - fx) * img.at(x0, y0)[k] + fx * img.at(x1, y0)[k]) +
                       fy * ((1 - fx) * img.at(x0, y1)[k] + fx * img.at(x1, y1)[k]);
            out.set(x, y, c);
        }
    return out;
}

Image shift_colors(const Image& img, const Rgb& delta) {
    Image out = img;
    for (std::size_t i = 0; i < out.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = std::clamp(out.pixels[i * 3 + c] + delta[c], 0.0, 1.0);
    return out;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path.string());
    f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {
std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        const int c = in.peek();
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    in >> tok;
    return tok;
}
}  // namespace

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read " + path.string());
    if (next_token(f) != "P6") throw ValidationError(path.string() + ": not a binary PPM");
    const auto w = std::stoul(next_token(f)), h = std::stoul(next_token(f));
    if (std::stoul(next_token(f)) != 255) throw ValidationError(path.string() + ": maxval must be 255");
    f.get();
    std::vector<unsigned char> bytes(w * h * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ValidationError(path.string() + ": truncated pixel data");
    Image img(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
    return img;
}

void write_pgm_heatmap(const std::filesystem::path& path, const std::vector<double>& values, std::size_t rows,
                       std::size_t cols) {
    if (values.size() != rows * cols) throw DimensionError("write_pgm_heatmap: size mismatch");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double span = *hi - *lo > 0 ? *hi - *lo : 1.0;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write " + path.string());
    f << "P5\n" << cols << ' ' << rows << "\n255\n";
    for (double v : values) f.put(static_cast<char>(std::lround((v - *lo) / span * 255.0)));
}

}  // namespace h2m
