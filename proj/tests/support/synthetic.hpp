#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "rrrn/augment.hpp"
#include "rrrn/dataset.hpp"
#include "rrrn/protocol.hpp"
#include "rrrn/random.hpp"

namespace rrrn::testing {

/// Two-class clips whose only label cue is the direction of a smooth global
/// motion: class I drifts right, class V drifts up. Each clip has its own
/// random texture, amplitude and sensor noise.
struct MotionDataset {
    DatasetManifest manifest;
    std::map<std::string, std::vector<Image>> frames;
};

inline MotionDataset make_motion_dataset(int samples, std::uint64_t seed, int size = 32, int subjects = 10) {
    constexpr int kFrames = 31, kOnset = 0, kApex = 15, kOffset = 30;
    MotionDataset ds;
    for (int i = 0; i < samples; ++i) {
        const bool right = i % 2 == 0;
        AnnotationRecord r;
        r.sample_id = fmt::format("syn_{:03d}", i);
        r.database_id = Database::SYNTHETIC;
        r.subject_id = fmt::format("s{:02d}", i % subjects);
        r.frames_dir = "frames/" + r.sample_id;
        r.onset_idx = kOnset;
        r.apex_idx = kApex;
        r.offset_idx = kOffset;
        r.au_code = right ? "AU6+AU12" : "AU1";
        r.objective_class = map_aus_to_objective_class(r.au_code);

        Rng rng(stable_hash(seed, r.sample_id));
        struct Wave {
            double kx, ky, phase, amp;
        };
        std::vector<Wave> waves;
        for (int w = 0; w < 5; ++w) {
            const double freq = rng.uniform(0.25, 0.6), theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            waves.push_back({freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0.0, 2.0 * std::numbers::pi),
                             rng.uniform(12.0, 28.0)});
        }
        const double amplitude = rng.uniform(1.5, 2.5);
        const double dx = right ? 1.0 : 0.0, dy = right ? 0.0 : -1.0;

        std::vector<Image> frames;
        for (int t = 0; t < kFrames; ++t) {
            const double profile = t <= kApex ? static_cast<double>(t - kOnset) / (kApex - kOnset)
                                              : static_cast<double>(kOffset - t) / (kOffset - kApex);
            const double sx = amplitude * profile * dx, sy = amplitude * profile * dy;
            Image img(size, size, 1);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    double v = 128.0;
                    for (const auto& w : waves) v += w.amp * std::sin(w.kx * (x - sx) + w.ky * (y - sy) + w.phase);
                    v += 1.5 * rng.normal();
                    img.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
                }
            }
            frames.push_back(std::move(img));
        }
        ds.frames[r.sample_id] = std::move(frames);
        ds.manifest.records.push_back(std::move(r));
    }
    return ds;
}

inline InMemoryStackCache build_memory_cache(const MotionDataset& ds, int output_size, bool augment) {
    InMemoryStackCache cache;
    RegionCropSpec crops;
    crops.output_size = output_size;
    const TvL1FlowEstimator estimator;
    for (const auto& r : ds.manifest.records) {
        const InMemoryFrameSequence seq(ds.frames.at(r.sample_id));
        cache.put(r.sample_id, preprocess_sample(r, seq, estimator, crops, augment));
    }
    return cache;
}

/// Holds out the last `test_subjects` subjects (by sorted id).
inline Fold subject_split(const DatasetManifest& m, int test_subjects) {
    const auto subjects = m.subjects();
    const std::vector<std::string> held(subjects.end() - test_subjects, subjects.end());
    Fold f;
    f.name = "holdout";
    for (const auto& r : m.records) {
        const bool test = std::find(held.begin(), held.end(), r.subject_id) != held.end();
        (test ? f.test_ids : f.train_ids).push_back(r.sample_id);
    }
    return f;
}

inline RunConfig toy_run_config(std::uint64_t seed, int input_size = 16) {
    RunConfig cfg;
    cfg.backbone.variant = BackboneVariant::ToyCnn;
    cfg.backbone.stream_channels = 8;
    cfg.backbone.input_size = input_size;
    cfg.seed = seed;
    return cfg;
}

}  // namespace rrrn::testing
