#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rrrn/image.hpp"

namespace rrrn {

/// Dense displacement between two frames: apex(x + u, y + v) ~ onset(x, y).
struct FlowField {
    Grid u;  // horizontal, pixels
    Grid v;  // vertical, pixels

    int height() const { return u.height; }
    int width() const { return u.width; }
};

/// Dense-flow contract: two same-sized gray rasters in, (u, v) out.
class FlowEstimator {
public:
    virtual ~FlowEstimator() = default;
    virtual FlowField estimate(const Grid& onset, const Grid& apex) const = 0;
};

struct TvL1Options {
    double tau = 0.25;
    double lambda = 0.15;
    double theta = 0.3;
    int scales = 4;
    double zoom = 0.5;
    int warps = 5;
    double epsilon = 0.01;
    int max_iterations = 50;
    double presmooth_sigma = 0.8;
};

/// Coarse-to-fine duality-based TV-L1 solver (primal thresholding step plus
/// Chambolle projection on the dual variable), bilinear warping.
class TvL1FlowEstimator final : public FlowEstimator {
public:
    TvL1FlowEstimator() = default;
    explicit TvL1FlowEstimator(TvL1Options options) : options_(options) {}

    FlowField estimate(const Grid& onset, const Grid& apex) const override;
    const TvL1Options& options() const { return options_; }

private:
    TvL1Options options_;
};

FlowField compute_flow(const Image& onset, const Image& apex, const FlowEstimator& estimator);
FlowField compute_flow(const Grid& onset, const Grid& apex, const FlowEstimator& estimator);

enum class CropAnchor { Full, TopLeft, TopRight, CenterDown, Center };

struct RegionCrop {
    CropAnchor anchor;
    double ratio;
};

struct CropWindow {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
    friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

struct RegionCropSpec {
    std::vector<RegionCrop> regions = {{CropAnchor::Full, 1.0},      {CropAnchor::TopLeft, 0.75},
                                       {CropAnchor::TopRight, 0.75}, {CropAnchor::CenterDown, 0.75},
                                       {CropAnchor::Center, 0.9},    {CropAnchor::Center, 0.85}};
    int output_size = 224;

    int region_count() const { return static_cast<int>(regions.size()); }
    void validate() const;
};

inline constexpr int kRegionCount = 6;  // original face + 5 crops

/// Window geometry: floor(ratio * H) x floor(ratio * W) anchored as named.
CropWindow crop_window(const RegionCrop& region, int height, int width);

/// K+1 vertical and K+1 horizontal S x S grids; index 0 is the full region.
struct RegionStack {
    std::vector<Grid> vertical;
    std::vector<Grid> horizontal;

    int region_count() const { return static_cast<int>(vertical.size()); }
    int size() const { return vertical.empty() ? 0 : vertical.front().height; }
    void validate() const;
    friend bool operator==(const RegionStack&, const RegionStack&) = default;
};

RegionStack crop_regions(const FlowField& flow, const RegionCropSpec& spec);

/// Per-component standardization statistics (mean/std of v and h).
struct FlowNormalization {
    float vertical_mean = 0.0f;
    float vertical_std = 1.0f;
    float horizontal_mean = 0.0f;
    float horizontal_std = 1.0f;

    void apply(RegionStack& stack) const;
};

FlowNormalization fit_normalization(const std::vector<const RegionStack*>& stacks);

/// Binary cache record: 16-byte header ("RRN1", S, K+1, reserved as
/// little-endian u32), then K+1 vertical and K+1 horizontal S x S float32 grids.
std::vector<std::uint8_t> encode_region_stack(const RegionStack& stack);
RegionStack decode_region_stack(const std::vector<std::uint8_t>& bytes);
void write_region_stack(const RegionStack& stack, const std::filesystem::path& path);
RegionStack read_region_stack(const std::filesystem::path& path);

}  // namespace rrrn
