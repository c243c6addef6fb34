#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "h2m/tensor.hpp"

namespace h2m {

using Rgb = std::array<double, 3>;

// Interleaved RGB raster, values nominally in [0, 1].
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;  // (y * width + x) * 3 + c

    Image() = default;
    Image(std::size_t w, std::size_t h, Rgb fill = {0, 0, 0});

    Rgb at(std::size_t x, std::size_t y) const;
    void set(std::size_t x, std::size_t y, Rgb c);
    std::size_t pixel_count() const { return width * height; }
    bool operator==(const Image&) const = default;
};

double max_channel_distance(const Rgb& a, const Rgb& b);
double mean_abs_diff(const Image& a, const Image& b);
double max_abs_diff(const Image& a, const Image& b);

// [3, H, W] tensor view of an image and back (back clamps to [0, 1]).
Tensor image_to_chw(const Image& img);
Image chw_to_image(const Tensor& chw);
// Stacks images into [N, 3, H, W].
Tensor images_to_batch(const std::vector<Image>& imgs);

Image upsample_bilinear(const Image& img, std::size_t factor);
Image shift_colors(const Image& img, const Rgb& delta);

// Binary PPM (P6, maxval 255). Values are rounded to the nearest 1/255.
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
// Grayscale PGM (P5) of a row-major matrix, min-max normalized.
void write_pgm_heatmap(const std::filesystem::path& path, const std::vector<double>& values, std::size_t rows,
                       std::size_t cols);

}  // namespace h2m
