#include "rrrn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <string>

#include "rrrn/error.hpp"

namespace rrrn {

Grid to_gray(const Image& image) {
    Grid g(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (image.channels < 3) {
                g.at(y, x) = image.at(y, x, 0);
            } else {
                g.at(y, x) = static_cast<float>(0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                                                0.114 * image.at(y, x, 2));
            }
        }
    }
    return g;
}

Image to_image(const Grid& grid) {
    Image img(grid.height, grid.width, 1);
    for (std::size_t i = 0; i < grid.data.size(); ++i) {
        const float v = std::clamp(grid.data[i], 0.0f, 255.0f);
        img.pixels[i] = static_cast<std::uint8_t>(std::floor(v + 0.5f));
    }
    return img;
}

float sample_bilinear(const Grid& grid, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(grid.height - 1));
    x = std::clamp(x, 0.0, static_cast<double>(grid.width - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, grid.height - 1);
    const int x1 = std::min(x0 + 1, grid.width - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    const double top = (1.0 - fx) * grid.at(y0, x0) + fx * grid.at(y0, x1);
    const double bottom = (1.0 - fx) * grid.at(y1, x0) + fx * grid.at(y1, x1);
    return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Grid resize_bilinear(const Grid& grid, int out_height, int out_width) {
    if (out_height == grid.height && out_width == grid.width) return grid;
    Grid out(out_height, out_width);
    const double sy = static_cast<double>(grid.height) / out_height;
    const double sx = static_cast<double>(grid.width) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < out_width; ++x) {
            out.at(y, x) = sample_bilinear(grid, src_y, (x + 0.5) * sx - 0.5);
        }
    }
    return out;
}

Grid crop(const Grid& grid, int top, int left, int height, int width) {
    if (top < 0 || left < 0 || top + height > grid.height || left + width > grid.width) {
        throw Error(ErrorCode::ShapeMismatch, "crop window outside grid");
    }
    Grid out(height, width);
    for (int y = 0; y < height; ++y) {
        std::copy_n(&grid.data[static_cast<std::size_t>(top + y) * grid.width + left], width,
                    &out.data[static_cast<std::size_t>(y) * width]);
    }
    return out;
}

namespace {

// Inverse map: output pixel (x, y) reads the source at the position rotated
// back by `degrees` around the center.
template <typename Fn>
void for_each_rotated(int height, int width, double degrees, Fn&& fn) {
    const double rad = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - cx, dy = y - cy;
            // Counter-clockwise on screen (y down) is clockwise in math axes.
            const double src_x = cx + c * dx - s * dy;
            const double src_y = cy + s * dx + c * dy;
            fn(y, x, src_y, src_x);
        }
    }
}

}  // namespace

Grid rotate_grid(const Grid& grid, double degrees) {
    if (degrees == 0.0) return grid;
    Grid out(grid.height, grid.width);
    for_each_rotated(grid.height, grid.width, degrees, [&](int y, int x, double sy, double sx) {
        out.at(y, x) = sample_bilinear(grid, sy, sx);
    });
    return out;
}

Image rotate_image(const Image& image, double degrees) {
    if (degrees == 0.0) return image;
    Image out(image.height, image.width, image.channels);
    std::vector<Grid> planes(image.channels, Grid(image.height, image.width));
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) planes[c].at(y, x) = image.at(y, x, c);
        }
    }
    for_each_rotated(image.height, image.width, degrees, [&](int y, int x, double sy, double sx) {
        for (int c = 0; c < image.channels; ++c) {
            const float v = std::clamp(sample_bilinear(planes[c], sy, sx), 0.0f, 255.0f);
            out.at(y, x, c) = static_cast<std::uint8_t>(std::floor(v + 0.5f));
        }
    });
    return out;
}

Image read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw Error(ErrorCode::IoError, "cannot decode image " + path.string());
    if (mat.depth() != CV_8U) mat.convertTo(mat, CV_8U);
    Image img(mat.rows, mat.cols, mat.channels());
    for (int y = 0; y < mat.rows; ++y) {
        const std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                // OpenCV stores BGR(A).
                int src = c;
                if (img.channels >= 3 && c < 3) src = 2 - c;
                img.at(y, x, c) = row[x * img.channels + src];
            }
        }
    }
    return img;
}

void write_image(const Image& image, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    cv::Mat mat(image.height, image.width, CV_8UC(image.channels));
    for (int y = 0; y < image.height; ++y) {
        std::uint8_t* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                int dst = c;
                if (image.channels >= 3 && c < 3) dst = 2 - c;
                row[x * image.channels + dst] = image.at(y, x, c);
            }
        }
    }
    if (!cv::imwrite(path.string(), mat)) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::MissingFile, "no frame directory " + dir.string());
    static const std::vector<std::string> kExtensions = {".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".tif", ".tiff"};
    struct Entry {
        long long number;
        std::string name;
        std::filesystem::path path;
    };
    std::vector<Entry> entries;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (std::find(kExtensions.begin(), kExtensions.end(), ext) == kExtensions.end()) continue;
        const std::string stem = e.path().stem().string();
        // Last run of digits in the stem, e.g. img46 -> 46.
        long long number = -1;
        auto end = stem.find_last_of("0123456789");
        if (end != std::string::npos) {
            auto begin = end;
            while (begin > 0 && std::isdigit(static_cast<unsigned char>(stem[begin - 1]))) --begin;
            number = std::stoll(stem.substr(begin, end - begin + 1));
        }
        entries.push_back({number, e.path().filename().string(), e.path()});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.number != b.number) return a.number < b.number;
        return a.name < b.name;
    });
    std::vector<std::filesystem::path> out;
    out.reserve(entries.size());
    for (auto& e : entries) out.push_back(std::move(e.path));
    return out;
}

}  // namespace rrrn
