#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "rrrn/dataset.hpp"
#include "rrrn/image.hpp"

namespace rrrn {

/// Random access to the frames of one clip by 0-based index.
class FrameSequence {
public:
    virtual ~FrameSequence() = default;
    virtual int size() const = 0;
    virtual Image frame(int index) const = 0;
};

class InMemoryFrameSequence final : public FrameSequence {
public:
    explicit InMemoryFrameSequence(std::vector<Image> frames) : frames_(std::move(frames)) {}
    int size() const override { return static_cast<int>(frames_.size()); }
    Image frame(int index) const override;

private:
    std::vector<Image> frames_;
};

class DirectoryFrameSequence final : public FrameSequence {
public:
    explicit DirectoryFrameSequence(const std::filesystem::path& dir) : files_(list_frames(dir)) {}
    int size() const override { return static_cast<int>(files_.size()); }
    Image frame(int index) const override;

private:
    std::vector<std::filesystem::path> files_;
};

struct AugmentationPlan {
    std::vector<int> apex_positions;
    std::vector<double> rotation_angles_deg;

    std::size_t pair_count() const { return apex_positions.size() * rotation_angles_deg.size(); }
};

/// Original apex plus the enriched positions at 0.6..0.9 of onset->apex and
/// 0.1..0.5 of apex->offset, rounded half-up, sorted and de-duplicated.
std::vector<int> enrich_apex_positions(int onset, int apex, int offset);

/// -15..15 degrees in 5 degree steps.
std::vector<double> rotation_angles();

AugmentationPlan make_augmentation_plan(const AnnotationRecord& record);

struct AugmentedPair {
    Image onset;
    Image apex;
    int apex_index = 0;
    double angle_deg = 0.0;
};

/// Cartesian product apex_positions x rotation_angles. Both frames of a pair
/// are rotated by the same angle about the image center.
std::vector<AugmentedPair> augment_sample(const AnnotationRecord& record, const FrameSequence& frames);

/// The single un-augmented (onset, apex) pair used for evaluation.
AugmentedPair original_pair(const AnnotationRecord& record, const FrameSequence& frames);

}  // namespace rrrn
