#include "rrrn/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "rrrn/error.hpp"
#include "rrrn/experiment.hpp"

namespace rrrn {

namespace {

namespace fs = std::filesystem;

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

OcclusionTag occlusion_arg(const std::string& text) {
    const auto tag = parse_occlusion_tag(upper(text));
    if (!tag) throw CLI::ValidationError("--occlusion", "expected none, mask, glass or random_05..random_50");
    return *tag;
}

Task task_arg(const std::string& text) {
    const auto task = parse_task(text);
    if (!task) throw CLI::ValidationError("--task", "expected hde or cde");
    return *task;
}

Fold find_fold(Task task, const DatasetManifest& manifest, const std::string& name) {
    const auto folds = make_folds(task, manifest);
    for (const auto& f : folds) {
        if (f.name == name) return f;
    }
    std::string names;
    for (const auto& f : folds) names += (names.empty() ? "" : ", ") + f.name;
    throw Error(ErrorCode::InvalidConfig, "unknown fold '" + name + "'; available: " + names);
}

void print_metrics_row(std::ostream& out, const std::string& name, const Metrics& m) {
    fmt::print(out, "{:<32} WAR {:.4f}  UAR {:.4f}  F1 {:.4f}  WF1 {:.4f}\n", name, m.war, m.uar, m.f1, m.wf1);
}

struct Args {
    std::string manifest, data_root = ".", output, cache, config, checkpoint, task = "cde", fold,
                occlusion = "none", landmarks, assets;
    std::vector<std::string> inputs;
    std::string kind;
    std::optional<double> ratio;
    std::uint64_t seed = 0;
    int size = 224;
    int asset_index = -1;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Micro-expression recognition under occlusion: data, flow, training and evaluation tool", "rrrn"};
    app.require_subcommand(1);
    Args a;

    auto* ingest = app.add_subcommand("ingest", "Validate an annotation manifest and print its class distribution");
    ingest->add_option("--manifest", a.manifest, "Manifest TSV")->required();
    ingest->add_option("--output", a.output, "Write the normalized manifest here");

    auto* synth = app.add_subcommand("synth", "Write an occluded copy of a dataset");
    synth->add_option("--in", a.manifest, "Manifest TSV")->required();
    synth->add_option("--data-root", a.data_root, "Base directory of relative frames_dir entries");
    synth->add_option("--kind", a.kind, "mask, glass or random")
        ->required()
        ->check(CLI::IsMember({"mask", "glass", "random"}, CLI::ignore_case));
    synth->add_option("--ratio", a.ratio, "Occluded fraction of the face box (random only)");
    synth->add_option("--asset-index", a.asset_index, "Fixed accessory index (default: per-sample choice)");
    synth->add_option("--out", a.output, "Output directory")->required();
    synth->add_option("--seed", a.seed, "Occlusion seed");
    synth->add_option("--landmarks", a.landmarks, "Directory of <sample_id>.txt landmark files");
    synth->add_option("--assets", a.assets, "Directory of mask_NN/glass_NN assets");

    auto* preprocess = app.add_subcommand("preprocess", "Compute flow region stacks for the annotated pairs");
    auto* augment = app.add_subcommand("augment", "Compute flow region stacks for the augmented pairs");
    for (auto* sub : {preprocess, augment}) {
        sub->add_option("--manifest", a.manifest, "Manifest TSV")->required();
        sub->add_option("--data-root", a.data_root, "Base directory of relative frames_dir entries");
        sub->add_option("--cache", a.cache, "Cache directory")->required();
        sub->add_option("--size", a.size, "Region output size S")->check(CLI::PositiveNumber);
    }

    auto* train_cmd = app.add_subcommand("train", "Train one fold from a flow cache");
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one fold");
    for (auto* sub : {train_cmd, eval_cmd}) {
        sub->add_option("--manifest", a.manifest, "Manifest TSV")->required();
        sub->add_option("--cache", a.cache, "Cache directory")->required();
        sub->add_option("--task", a.task, "hde or cde");
        sub->add_option("--fold", a.fold, "Fold name")->required();
        sub->add_option("--output", a.output, "Checkpoint (train) or report JSON (eval)")->required();
    }
    train_cmd->add_option("--config", a.config, "Run config file")->required();
    eval_cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--occlusion", a.occlusion, "Occlusion label recorded in the report");

    auto* run = app.add_subcommand("run", "Full pipeline for one task and occlusion variant");
    run->add_option("--task", a.task, "hde or cde")->required();
    run->add_option("--occlusion", a.occlusion, "none, mask, glass or random_NN");
    run->add_option("--config", a.config, "Run config file")->required();
    run->add_option("--manifest", a.manifest, "Manifest TSV")->required();
    run->add_option("--data-root", a.data_root, "Base directory of relative frames_dir entries");
    run->add_option("--output", a.output, "Output directory")->required();
    run->add_option("--landmarks", a.landmarks, "Directory of <sample_id>.txt landmark files");
    run->add_option("--assets", a.assets, "Directory of mask_NN/glass_NN assets");

    auto* report = app.add_subcommand("report", "Check, merge and summarize report JSON files");
    report->add_option("--input", a.inputs, "One or more report JSON files")->required();
    report->add_option("--task", a.task, "Task used when merging several reports");
    report->add_option("--output", a.output, "Write the merged report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (*ingest) {
            const auto parsed = parse_manifest(a.manifest);
            for (const auto& issue : parsed.errors) fmt::print(err, "line {}: {}\n", issue.line_no, issue.reason);
            const auto& m = parsed.manifest;
            const auto mapped = mapped_only(m);
            const auto dist = class_distribution(mapped);
            fmt::print(out, "records {}  mapped {}  subjects {}\n", m.size(), mapped.size(), dist.subjects);
            static constexpr const char* names[] = {"I", "II", "III", "IV", "V"};
            for (int c = 0; c < kNumClasses; ++c) fmt::print(out, "class {:<3} {}\n", names[c], dist.counts[static_cast<std::size_t>(c)]);
            if (!a.output.empty()) write_manifest(m, a.output);
            return parsed.ok() ? 0 : 1;
        }
        if (*synth) {
            OcclusionSpec spec;
            const auto kind = upper(a.kind);
            spec.kind = kind == "MASK" ? OcclusionSpec::Kind::Mask
                        : kind == "GLASS" ? OcclusionSpec::Kind::Glass
                                          : OcclusionSpec::Kind::Random;
            spec.ratio = a.ratio;
            spec.seed = a.seed;
            spec.asset_index = a.asset_index;
            try {
                spec.validate();
            } catch (const Error& e) {
                throw CLI::ValidationError("--ratio", e.what());
            }
            const auto manifest = load_manifest(a.manifest);
            const auto outm = apply_occlusion(manifest, spec, a.data_root, a.output,
                                              a.landmarks.empty() ? std::nullopt : std::optional<fs::path>(a.landmarks),
                                              a.assets.empty() ? std::nullopt : std::optional<fs::path>(a.assets));
            fmt::print(out, "wrote {} occluded samples to {}\n", outm.size(), a.output);
            return 0;
        }
        if (*preprocess || *augment) {
            CacheBuildOptions opts;
            opts.output_size = a.size;
            opts.originals = preprocess->parsed();
            opts.augmented = augment->parsed();
            build_cache(mapped_only(load_manifest(a.manifest)), a.data_root, DirectoryStackCache(a.cache), opts, &out);
            return 0;
        }
        if (*train_cmd) {
            const auto manifest = mapped_only(load_manifest(a.manifest));
            const auto config = load_config(a.config);
            const auto fold = find_fold(task_arg(a.task), manifest, a.fold);
            TrainOptions opts;
            opts.checkpoint_path = fs::path(a.output);
            opts.on_epoch = [&](const EpochStats& s) {
                fmt::print(out, "epoch {:3d}  cls {:.4f}  rb {:.4f}  cor {:.4f}  acc {:.3f}\n", s.epoch, s.cls, s.rb,
                           s.cor, s.train_accuracy);
            };
            train(fold, manifest, config, DirectoryStackCache(a.cache), opts);
            return 0;
        }
        if (*eval_cmd) {
            const Task task = task_arg(a.task);
            const auto manifest = mapped_only(load_manifest(a.manifest));
            const auto ckpt = read_checkpoint(a.checkpoint);
            const auto fold = find_fold(task, manifest, a.fold);
            EvalReport r;
            r.task = task;
            r.occlusion = to_string(occlusion_arg(a.occlusion));
            r.config_fingerprint = config_fingerprint(ckpt.config);
            r.folds.push_back(evaluate(ckpt, fold, manifest, DirectoryStackCache(a.cache)));
            r.aggregate = compute_aggregate(task, r.folds);
            write_report(r, a.output);
            print_metrics_row(out, fold.name, r.folds.front().metrics);
            return 0;
        }
        if (*run) {
            ExperimentRequest req;
            req.task = task_arg(a.task);
            req.occlusion = occlusion_arg(a.occlusion);
            req.config = load_config(a.config);
            req.manifest = a.manifest;
            req.data_root = a.data_root;
            req.output_dir = a.output;
            if (!a.landmarks.empty()) req.landmarks_dir = a.landmarks;
            if (!a.assets.empty()) req.assets_dir = a.assets;
            req.log = &out;
            const auto r = run_experiment(req);
            fmt::print(out, "aggregate ({}): WAR {:.4f}  UAR {:.4f}  F1 {:.4f}  WF1 {:.4f}\n", r.aggregate.method,
                       r.aggregate.war, r.aggregate.uar, r.aggregate.f1, r.aggregate.wf1);
            return 0;
        }
        if (*report) {
            std::vector<EvalReport> reports;
            for (const auto& p : a.inputs) reports.push_back(read_report(p));
            bool consistent = true;
            for (std::size_t i = 0; i < reports.size(); ++i) {
                const auto again = compute_aggregate(reports[i].task, reports[i].folds);
                const auto& stored = reports[i].aggregate;
                const double diff = std::max({std::abs(again.war - stored.war), std::abs(again.uar - stored.uar),
                                              std::abs(again.f1 - stored.f1), std::abs(again.wf1 - stored.wf1)});
                if (diff > 1e-12) {
                    consistent = false;
                    fmt::print(err, "{}: stored aggregate differs from recomputation by {}\n", a.inputs[i], diff);
                }
            }
            EvalReport merged = reports.front();
            if (reports.size() > 1) {
                merged.task = task_arg(a.task);
                for (std::size_t i = 1; i < reports.size(); ++i) {
                    merged.folds.insert(merged.folds.end(), reports[i].folds.begin(), reports[i].folds.end());
                }
                merged.aggregate = compute_aggregate(merged.task, merged.folds);
            }
            fmt::print(out, "task {}  occlusion {}  config {}\n", to_string(merged.task), merged.occlusion,
                       merged.config_fingerprint);
            for (const auto& f : merged.folds) print_metrics_row(out, f.name, f.metrics);
            fmt::print(out, "aggregate ({}): WAR {:.4f}  UAR {:.4f}  F1 {:.4f}  WF1 {:.4f}\n", merged.aggregate.method,
                       merged.aggregate.war, merged.aggregate.uar, merged.aggregate.f1, merged.aggregate.wf1);
            if (!a.output.empty()) write_report(merged, a.output);
            return consistent ? 0 : 1;
        }
    } catch (const CLI::ValidationError& e) {
        fmt::print(err, "usage error: {}\n", e.what());
        return 2;
    } catch (const Error& e) {
        fmt::print(err, "error: {}\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return 1;
    }
    return 2;
}

}  // namespace rrrn
