#include "rrrn/experiment.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rrrn/error.hpp"

namespace rrrn {

namespace {

class NoLandmarks final : public LandmarkSource {
public:
    std::optional<LandmarkSet> landmarks(const AnnotationRecord&) const override { return std::nullopt; }
};

void say(std::ostream* log, const std::string& line) {
    if (log) *log << line << '\n' << std::flush;
}

}  // namespace

std::optional<OcclusionSpec> occlusion_spec_from_tag(const OcclusionTag& tag, std::uint64_t seed) {
    OcclusionSpec spec;
    spec.seed = seed;
    switch (tag.kind) {
        case OcclusionTag::Kind::None: return std::nullopt;
        case OcclusionTag::Kind::Mask: spec.kind = OcclusionSpec::Kind::Mask; break;
        case OcclusionTag::Kind::Glass: spec.kind = OcclusionSpec::Kind::Glass; break;
        case OcclusionTag::Kind::Random:
            spec.kind = OcclusionSpec::Kind::Random;
            spec.ratio = tag.percent / 100.0;
            break;
    }
    return spec;
}

std::filesystem::path resolve_frames_dir(const AnnotationRecord& record, const std::filesystem::path& data_root) {
    return record.frames_dir.is_absolute() ? record.frames_dir : data_root / record.frames_dir;
}

DatasetManifest apply_occlusion(const DatasetManifest& manifest, const OcclusionSpec& spec,
                                const std::filesystem::path& data_root, const std::filesystem::path& output_dir,
                                const std::optional<std::filesystem::path>& landmarks_dir,
                                const std::optional<std::filesystem::path>& assets_dir) {
    std::vector<OcclusionAsset> assets;
    if (spec.kind != OcclusionSpec::Kind::Random) {
        const AssetKind kind = spec.kind == OcclusionSpec::Kind::Mask ? AssetKind::Mask : AssetKind::Glasses;
        if (assets_dir) {
            assets = load_assets(*assets_dir, kind);
        } else {
            for (int v = 0; v < 3; ++v) assets.push_back(procedural_asset(kind, v));
        }
    }
    const SynthesisPaths paths{data_root, output_dir};
    if (landmarks_dir) return synthesize_database(manifest, spec, DirectoryLandmarkSource(*landmarks_dir), assets, paths);
    return synthesize_database(manifest, spec, NoLandmarks{}, assets, paths);
}

void build_cache(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                 const DirectoryStackCache& cache, const CacheBuildOptions& options, std::ostream* log) {
    RegionCropSpec crops;
    crops.output_size = options.output_size;
    const TvL1FlowEstimator estimator;
    std::size_t done = 0;
    for (const auto& record : manifest.records) {
        const bool need_original = options.originals && !(options.reuse && cache.has_original(record.sample_id));
        const bool need_aug = options.augmented && !(options.reuse && cache.has_augmented(record.sample_id));
        if (need_original || need_aug) {
            const DirectoryFrameSequence frames(resolve_frames_dir(record, data_root));
            const auto sample = preprocess_sample(record, frames, estimator, crops, need_aug);
            if (need_original) cache.write_original(record.sample_id, sample.original);
            if (need_aug) cache.write_augmented(record.sample_id, sample.augmented);
        }
        ++done;
        if (done % 10 == 0 || done == manifest.size()) say(log, fmt::format("cache: {}/{} samples", done, manifest.size()));
    }
}

EvalReport run_experiment(const ExperimentRequest& req) {
    req.config.validate();
    DatasetManifest manifest = mapped_only(load_manifest(req.manifest));
    if (manifest.empty()) throw Error(ErrorCode::EmptyManifest, "no class-mapped samples in " + req.manifest.string());
    std::filesystem::create_directories(req.output_dir);

    std::filesystem::path data_root = req.data_root;
    if (const auto spec = occlusion_spec_from_tag(req.occlusion, stable_hash(req.config.seed, "occlusion"))) {
        const auto occluded_dir = req.output_dir / "occluded";
        say(req.log, "synthesizing " + to_string(req.occlusion) + " occlusion into " + occluded_dir.string());
        manifest = apply_occlusion(manifest, *spec, data_root, occluded_dir, req.landmarks_dir, req.assets_dir);
        data_root = occluded_dir;
    }

    const auto folds = make_folds(req.task, manifest);
    const DirectoryStackCache cache(req.output_dir / "cache");
    CacheBuildOptions cache_opts;
    cache_opts.output_size = req.config.backbone.input_size;
    cache_opts.augmented = req.config.augmentation_enabled;
    build_cache(manifest, data_root, cache, cache_opts, req.log);

    EvalReport report;
    report.task = req.task;
    report.occlusion = to_string(req.occlusion);
    report.config_fingerprint = config_fingerprint(req.config);
    const auto ckpt_dir = req.output_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    for (const auto& fold : folds) {
        TrainOptions opts;
        opts.checkpoint_path = ckpt_dir / (fold.name + ".ckpt");
        opts.on_epoch = [&](const EpochStats& s) {
            say(req.log, fmt::format("{} epoch {:3d}  cls {:.4f}  rb {:.4f}  cor {:.4f}  acc {:.3f}", fold.name, s.epoch,
                                     s.cls, s.rb, s.cor, s.train_accuracy));
        };
        const Checkpoint ckpt = train(fold, manifest, req.config, cache, opts);
        report.folds.push_back(evaluate(ckpt, fold, manifest, cache));
        const auto& m = report.folds.back().metrics;
        say(req.log, fmt::format("{}: WAR {:.4f} UAR {:.4f} F1 {:.4f} WF1 {:.4f}", fold.name, m.war, m.uar, m.f1, m.wf1));
    }
    report.aggregate = compute_aggregate(req.task, report.folds);
    write_report(report, req.output_dir / "report.json");
    return report;
}

}  // namespace rrrn
