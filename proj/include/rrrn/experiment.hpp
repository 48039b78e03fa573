#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "rrrn/occlusion.hpp"
#include "rrrn/protocol.hpp"

namespace rrrn {

/// "NONE" (or "none") gives no spec; otherwise MASK, GLASS or RANDOM_NN.
std::optional<OcclusionSpec> occlusion_spec_from_tag(const OcclusionTag& tag, std::uint64_t seed);

/// Frames directory of a record, resolved against `data_root` when relative.
std::filesystem::path resolve_frames_dir(const AnnotationRecord& record, const std::filesystem::path& data_root);

/// Occluded copy of the dataset under `output_dir`. Uses the assets in
/// `assets_dir` when given, else the built-in procedural accessories.
DatasetManifest apply_occlusion(const DatasetManifest& manifest, const OcclusionSpec& spec,
                                const std::filesystem::path& data_root, const std::filesystem::path& output_dir,
                                const std::optional<std::filesystem::path>& landmarks_dir,
                                const std::optional<std::filesystem::path>& assets_dir);

struct CacheBuildOptions {
    int output_size = 224;
    bool originals = true;
    bool augmented = false;
    /// Keep existing cache files instead of recomputing them.
    bool reuse = true;
};

/// Fills a directory cache for every record in the manifest with the
/// built-in TV-L1 estimator.
void build_cache(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                 const DirectoryStackCache& cache, const CacheBuildOptions& options, std::ostream* log = nullptr);

struct ExperimentRequest {
    Task task = Task::Cde;
    OcclusionTag occlusion;
    RunConfig config;
    std::filesystem::path manifest;
    std::filesystem::path data_root;
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> landmarks_dir;
    std::optional<std::filesystem::path> assets_dir;
    std::ostream* log = nullptr;
};

/// occlusion synthesis (optional) -> flow caches -> per-fold train and
/// evaluate -> <output_dir>/report.json, with checkpoints in
/// <output_dir>/checkpoints/<fold>.ckpt.
EvalReport run_experiment(const ExperimentRequest& request);

}  // namespace rrrn
