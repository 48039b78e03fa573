#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rrrn/dataset.hpp"
#include "rrrn/image.hpp"
#include "rrrn/random.hpp"

namespace rrrn {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

inline constexpr int kLandmarkCount = 68;

/// 68-point layout: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47, mouth 48-67.
using FaceLandmarks = std::array<Point2, kLandmarkCount>;

struct LandmarkSet {
    std::vector<FaceLandmarks> frames;
};

namespace landmark {
inline constexpr int kJawLeft = 0;
inline constexpr int kChin = 8;
inline constexpr int kJawRight = 16;
inline constexpr int kNoseBridgeTop = 27;
inline constexpr int kNoseTip = 30;
inline constexpr int kLeftEyeOuter = 36;   // image-left eye, outer corner
inline constexpr int kRightEyeOuter = 45;  // image-right eye, outer corner
}  // namespace landmark

/// Plausible frontal 68-point layout filling `box` (used for fixtures/demos).
FaceLandmarks template_landmarks(double left, double top, double width, double height);

/// One line per frame, 68 "x,y" pairs separated by spaces.
LandmarkSet parse_landmarks(const std::filesystem::path& path);
void write_landmarks(const LandmarkSet& set, const std::filesystem::path& path);

enum class AssetKind { Mask, Glasses };

/// RGBA accessory with two anchor points in asset pixel coordinates:
/// Glasses: outer corners of the left and right lens.
/// Mask: top-center (sits on the nose bridge) and bottom-center (chin).
struct OcclusionAsset {
    Image rgba;
    AssetKind kind = AssetKind::Mask;
    Point2 anchor_a;
    Point2 anchor_b;

    void validate() const;
};

/// Deterministic synthetic accessories for tests and demos.
OcclusionAsset procedural_asset(AssetKind kind, int variant = 0);

/// Loads <prefix>_NN.png plus <prefix>_NN.txt ("ax ay bx by") pairs, where
/// prefix is "mask" or "glass", ordered by NN.
std::vector<OcclusionAsset> load_assets(const std::filesystem::path& dir, AssetKind kind);
void save_asset(const OcclusionAsset& asset, const std::filesystem::path& dir, int index);

/// Affine map from asset coordinates to frame coordinates:
/// frame = origin + linear * (asset - asset_origin).
struct AccessoryTransform {
    Point2 origin;         // landmark anchor the asset anchor lands on
    Point2 asset_origin;   // asset anchor
    std::array<double, 4> linear{};  // row-major 2x2

    double rotation_deg() const;  // direction of the asset's first axis
    Point2 apply(Point2 asset_point) const;
};

AccessoryTransform accessory_transform(const FaceLandmarks& landmarks, const OcclusionAsset& asset);

/// Alpha-composites the asset placed by accessory_transform. Pixels where the
/// resampled alpha is zero are left untouched.
Image overlay_accessory(const Image& frame, const FaceLandmarks& landmarks, const OcclusionAsset& asset);

struct Rect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;

    long long area() const { return static_cast<long long>(width) * height; }
    friend bool operator==(const Rect&, const Rect&) = default;
};

inline constexpr std::uint8_t kBlockFill = 128;

/// Solid block of area ratio * area(face_box) (within half a percent where
/// integer sides allow), placed uniformly inside the face box.
Rect choose_random_block(const Rect& face_box, double ratio, Rng& rng);
Image fill_block(const Image& frame, const Rect& block);
Image overlay_random_block(const Image& frame, const Rect& face_box, double ratio, Rng& rng);

Rect landmark_bounds(const FaceLandmarks& landmarks, int frame_height, int frame_width);

struct OcclusionSpec {
    enum class Kind { Mask, Glass, Random };
    Kind kind = Kind::Mask;
    std::optional<double> ratio;  // Random only
    std::uint64_t seed = 0;
    int asset_index = -1;         // Mask/Glass; negative picks per sample from the seed

    void validate() const;
    OcclusionTag tag() const;
};

class LandmarkSource {
public:
    virtual ~LandmarkSource() = default;
    virtual std::optional<LandmarkSet> landmarks(const AnnotationRecord& record) const = 0;
};

/// <dir>/<sample_id>.txt per sample.
class DirectoryLandmarkSource final : public LandmarkSource {
public:
    explicit DirectoryLandmarkSource(std::filesystem::path dir) : dir_(std::move(dir)) {}
    std::optional<LandmarkSet> landmarks(const AnnotationRecord& record) const override;

private:
    std::filesystem::path dir_;
};

struct SynthesisPaths {
    std::filesystem::path data_root;   // base for relative frames_dir entries
    std::filesystem::path output_dir;  // receives frames/<sample_id>/ and manifest.tsv
};

/// Writes occluded copies of every record's frames and returns the derived
/// manifest (frames_dir relative to output_dir, occlusion_tag set).
DatasetManifest synthesize_database(const DatasetManifest& manifest, const OcclusionSpec& spec,
                                    const LandmarkSource& landmarks, const std::vector<OcclusionAsset>& assets,
                                    const SynthesisPaths& paths);

}  // namespace rrrn
