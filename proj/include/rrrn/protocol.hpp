#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrrn/augment.hpp"
#include "rrrn/checkpoint.hpp"
#include "rrrn/config.hpp"
#include "rrrn/dataset.hpp"
#include "rrrn/flow.hpp"
#include "rrrn/metrics.hpp"
#include "rrrn/network.hpp"

namespace rrrn {

enum class Task { Hde, Cde };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view text);

struct Fold {
    std::string name;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

/// Fold 1 trains on CASME II and tests on SAMM; fold 2 the reverse.
std::vector<Fold> hde_folds(const DatasetManifest& casme2, const DatasetManifest& samm);
/// One fold per subject (sorted by subject id), holding that subject out.
std::vector<Fold> loso_folds(const DatasetManifest& composite);
/// HDE splits the composite manifest by database; CDE is leave-one-subject-out.
std::vector<Fold> make_folds(Task task, const DatasetManifest& composite);

// ---------------------------------------------------------------------------
// Preprocessed flow caches

struct CachedSample {
    RegionStack original;
    std::vector<RegionStack> augmented;
};

RegionStack preprocess_pair(const Image& onset, const Image& apex, const FlowEstimator& estimator,
                            const RegionCropSpec& crops);
/// Flow stack for the annotated pair, plus the augmented stacks when `augment`.
CachedSample preprocess_sample(const AnnotationRecord& record, const FrameSequence& frames,
                               const FlowEstimator& estimator, const RegionCropSpec& crops, bool augment);

class StackCache {
public:
    virtual ~StackCache() = default;
    /// The single un-augmented stack. Raises CacheMiss.
    virtual RegionStack evaluation_stack(const std::string& sample_id) const = 0;
    /// Augmented stacks, or just the original one when `augmented` is false.
    virtual std::vector<RegionStack> training_stacks(const std::string& sample_id, bool augmented) const = 0;
};

class InMemoryStackCache final : public StackCache {
public:
    void put(const std::string& sample_id, CachedSample sample);
    RegionStack evaluation_stack(const std::string& sample_id) const override;
    std::vector<RegionStack> training_stacks(const std::string& sample_id, bool augmented) const override;
    std::size_t size() const { return samples_.size(); }

private:
    const CachedSample& get(const std::string& sample_id) const;
    std::map<std::string, CachedSample, std::less<>> samples_;
};

/// <root>/<sample_id>/original.rrn and <root>/<sample_id>/aug_NNN.rrn.
class DirectoryStackCache final : public StackCache {
public:
    explicit DirectoryStackCache(std::filesystem::path root) : root_(std::move(root)) {}

    void write_original(const std::string& sample_id, const RegionStack& stack) const;
    void write_augmented(const std::string& sample_id, const std::vector<RegionStack>& stacks) const;
    bool has_original(const std::string& sample_id) const;
    bool has_augmented(const std::string& sample_id) const;

    RegionStack evaluation_stack(const std::string& sample_id) const override;
    std::vector<RegionStack> training_stacks(const std::string& sample_id, bool augmented) const override;

private:
    std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Training and evaluation

struct TrainOptions {
    /// When set, the checkpoint is rewritten here at the end of every epoch.
    std::optional<std::filesystem::path> checkpoint_path;
    std::function<void(const EpochStats&)> on_epoch;
};

Checkpoint train(const Fold& fold, const DatasetManifest& manifest, const RunConfig& config,
                 const StackCache& cache, const TrainOptions& options = {});

struct Prediction {
    std::string sample_id;
    int truth = 0;
    int predicted = 0;
    friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct FoldResult {
    std::string name;
    ConfusionMatrix confusion;
    Metrics metrics;
    std::vector<Prediction> predictions;
};

using Predictor = std::function<int(const std::string& sample_id)>;

/// Scores any predictor over the fold's test ids.
FoldResult evaluate_predictor(const Fold& fold, const DatasetManifest& manifest, const Predictor& predictor);

/// Argmax of the main logits on each test sample's un-augmented stack.
FoldResult evaluate(const Checkpoint& checkpoint, const Fold& fold, const DatasetManifest& manifest,
                    const StackCache& cache);

/// Mean attention weight per region over the given samples' evaluation stacks.
std::vector<double> mean_attention(const Checkpoint& checkpoint, const std::vector<std::string>& sample_ids,
                                   const StackCache& cache);

struct Aggregate {
    std::string method;  // "mean_of_folds" (HDE) or "pooled_confusion" (CDE)
    double war = 0.0;
    double uar = 0.0;
    double f1 = 0.0;
    double wf1 = 0.0;
    std::optional<ConfusionMatrix> pooled;
};

Aggregate compute_aggregate(Task task, const std::vector<FoldResult>& folds);

struct EvalReport {
    Task task = Task::Cde;
    std::string occlusion = "NONE";
    std::vector<FoldResult> folds;
    Aggregate aggregate;
    std::string config_fingerprint;
};

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace rrrn
