#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rrrn {

/// Interleaved 8-bit image, 1 (gray), 3 (RGB) or 4 (RGBA) channels.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int h, int w, int c, std::uint8_t fill = 0)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    std::uint8_t& at(int y, int x, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool empty() const { return pixels.empty(); }
    friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel float raster (row-major).
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Grid() = default;
    Grid(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    friend bool operator==(const Grid&, const Grid&) = default;
};

/// Luma in [0, 255]; alpha ignored.
Grid to_gray(const Image& image);
Image to_image(const Grid& grid);  // clamps and rounds to 8-bit gray

/// Bilinear lookup with replicated borders.
float sample_bilinear(const Grid& grid, double y, double x);

/// Pixel-center aligned bilinear resize; same-size resize is the identity.
Grid resize_bilinear(const Grid& grid, int out_height, int out_width);
Grid crop(const Grid& grid, int top, int left, int height, int width);

/// Rotates about the image center by `degrees` (counter-clockwise as
/// displayed). Bilinear, border replicated; 0 degrees returns the input.
Image rotate_image(const Image& image, double degrees);
Grid rotate_grid(const Grid& grid, double degrees);

Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

/// Image files in `dir`, ordered by the integer embedded in the stem (falling
/// back to name order). Frame index i refers to the i-th entry.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

}  // namespace rrrn
