#include "rrrn/augment.hpp"

#include <algorithm>

#include "rrrn/error.hpp"

namespace rrrn {

namespace {

void check_index(const AnnotationRecord& record, const FrameSequence& frames, int index) {
    if (index < 0 || index >= frames.size()) {
        throw Error(ErrorCode::FrameIndexOutOfRange,
                    record.sample_id + ": frame " + std::to_string(index) + " outside sequence of " +
                        std::to_string(frames.size()));
    }
}

// round-half-up of base + span * tenths / 10 in exact integer arithmetic
int position_at(int base, int span, int tenths) {
    const long long scaled = 10LL * base + static_cast<long long>(span) * tenths + 5;
    // floor division for possibly negative numerators
    return static_cast<int>(scaled >= 0 ? scaled / 10 : -((-scaled + 9) / 10));
}

}  // namespace

Image InMemoryFrameSequence::frame(int index) const {
    if (index < 0 || index >= size()) {
        throw Error(ErrorCode::FrameIndexOutOfRange, "frame " + std::to_string(index));
    }
    return frames_[static_cast<std::size_t>(index)];
}

Image DirectoryFrameSequence::frame(int index) const {
    if (index < 0 || index >= size()) {
        throw Error(ErrorCode::FrameIndexOutOfRange, "frame " + std::to_string(index));
    }
    return read_image(files_[static_cast<std::size_t>(index)]);
}

std::vector<int> enrich_apex_positions(int onset, int apex, int offset) {
    if (!(onset <= apex && apex <= offset)) {
        throw Error(ErrorCode::InvalidOrdering, "expected onset <= apex <= offset, got " + std::to_string(onset) +
                                                    ", " + std::to_string(apex) + ", " + std::to_string(offset));
    }
    std::vector<int> positions{apex};
    for (int c : {6, 7, 8, 9}) positions.push_back(position_at(onset, apex - onset, c));
    for (int c : {1, 2, 3, 4, 5}) positions.push_back(position_at(apex, offset - apex, c));
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    return positions;
}

std::vector<double> rotation_angles() {
    std::vector<double> angles;
    for (int a = -15; a <= 15; a += 5) angles.push_back(a);
    return angles;
}

AugmentationPlan make_augmentation_plan(const AnnotationRecord& record) {
    return {enrich_apex_positions(record.onset_idx, record.apex_idx, record.offset_idx), rotation_angles()};
}

std::vector<AugmentedPair> augment_sample(const AnnotationRecord& record, const FrameSequence& frames) {
    const AugmentationPlan plan = make_augmentation_plan(record);
    for (int idx : {record.onset_idx, record.apex_idx, record.offset_idx}) check_index(record, frames, idx);
    for (int pos : plan.apex_positions) check_index(record, frames, pos);

    const Image onset = frames.frame(record.onset_idx);
    std::vector<AugmentedPair> pairs;
    pairs.reserve(plan.pair_count());
    for (int pos : plan.apex_positions) {
        const Image apex = frames.frame(pos);
        for (double angle : plan.rotation_angles_deg) {
            pairs.push_back({rotate_image(onset, angle), rotate_image(apex, angle), pos, angle});
        }
    }
    return pairs;
}

AugmentedPair original_pair(const AnnotationRecord& record, const FrameSequence& frames) {
    check_index(record, frames, record.onset_idx);
    check_index(record, frames, record.apex_idx);
    return {frames.frame(record.onset_idx), frames.frame(record.apex_idx), record.apex_idx, 0.0};
}

}  // namespace rrrn
