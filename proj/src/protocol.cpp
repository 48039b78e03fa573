#include "rrrn/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "rrrn/binary_io.hpp"
#include "rrrn/error.hpp"
#include "rrrn/optimizer.hpp"
#include "rrrn/random.hpp"

namespace rrrn {

namespace {

using json = nlohmann::ordered_json;

std::vector<std::string> ids_of(const DatasetManifest& m) {
    std::vector<std::string> ids;
    ids.reserve(m.size());
    for (const auto& r : m.records) ids.push_back(r.sample_id);
    return ids;
}

std::string database_label(const DatasetManifest& m) {
    return m.records.empty() ? std::string("EMPTY") : std::string(to_string(m.records.front().database_id));
}

int label_of(const DatasetManifest& manifest, const std::string& id) {
    const auto* rec = manifest.find(id);
    if (!rec) throw Error(ErrorCode::InvalidConfig, "sample " + id + " is not in the manifest");
    if (!rec->is_mapped()) throw Error(ErrorCode::UnmappedRecordPresent, "sample " + id + " has no objective class");
    return class_index(rec->objective_class);
}

}  // namespace

std::string_view to_string(Task task) { return task == Task::Hde ? "hde" : "cde"; }

std::optional<Task> parse_task(std::string_view text) {
    if (text == "hde" || text == "HDE") return Task::Hde;
    if (text == "cde" || text == "CDE") return Task::Cde;
    return std::nullopt;
}

std::vector<Fold> hde_folds(const DatasetManifest& casme2, const DatasetManifest& samm) {
    if (casme2.empty() || samm.empty()) throw Error(ErrorCode::EmptyManifest, "both HDE databases need samples");
    const auto a = database_label(casme2), b = database_label(samm);
    return {Fold{"train_" + a + "_test_" + b, ids_of(casme2), ids_of(samm)},
            Fold{"train_" + b + "_test_" + a, ids_of(samm), ids_of(casme2)}};
}

std::vector<Fold> loso_folds(const DatasetManifest& composite) {
    const auto subjects = composite.subjects();
    if (subjects.size() < 2) throw Error(ErrorCode::SingleSubject, "leave-one-subject-out needs two or more subjects");
    std::vector<Fold> folds;
    for (const auto& s : subjects) {
        Fold f;
        f.name = "loso_" + s;
        for (const auto& r : composite.records) (r.subject_id == s ? f.test_ids : f.train_ids).push_back(r.sample_id);
        folds.push_back(std::move(f));
    }
    return folds;
}

std::vector<Fold> make_folds(Task task, const DatasetManifest& composite) {
    if (task == Task::Cde) return loso_folds(composite);
    DatasetManifest casme2, samm;
    for (const auto& r : composite.records) {
        if (r.database_id == Database::CASME2) casme2.records.push_back(r);
        if (r.database_id == Database::SAMM) samm.records.push_back(r);
    }
    return hde_folds(casme2, samm);
}

RegionStack preprocess_pair(const Image& onset, const Image& apex, const FlowEstimator& estimator,
                            const RegionCropSpec& crops) {
    return crop_regions(compute_flow(onset, apex, estimator), crops);
}

CachedSample preprocess_sample(const AnnotationRecord& record, const FrameSequence& frames,
                               const FlowEstimator& estimator, const RegionCropSpec& crops, bool augment) {
    CachedSample out;
    const auto pair = original_pair(record, frames);
    out.original = preprocess_pair(pair.onset, pair.apex, estimator, crops);
    if (augment) {
        for (const auto& p : augment_sample(record, frames)) {
            out.augmented.push_back(preprocess_pair(p.onset, p.apex, estimator, crops));
        }
    }
    return out;
}

void InMemoryStackCache::put(const std::string& sample_id, CachedSample sample) {
    samples_[sample_id] = std::move(sample);
}

const CachedSample& InMemoryStackCache::get(const std::string& sample_id) const {
    const auto it = samples_.find(sample_id);
    if (it == samples_.end()) throw Error(ErrorCode::CacheMiss, sample_id);
    return it->second;
}

RegionStack InMemoryStackCache::evaluation_stack(const std::string& sample_id) const {
    return get(sample_id).original;
}

std::vector<RegionStack> InMemoryStackCache::training_stacks(const std::string& sample_id, bool augmented) const {
    const auto& s = get(sample_id);
    if (!augmented) return {s.original};
    if (s.augmented.empty()) throw Error(ErrorCode::CacheMiss, sample_id + " (augmented)");
    return s.augmented;
}

void DirectoryStackCache::write_original(const std::string& sample_id, const RegionStack& stack) const {
    std::filesystem::create_directories(root_ / sample_id);
    write_region_stack(stack, root_ / sample_id / "original.rrn");
}

void DirectoryStackCache::write_augmented(const std::string& sample_id, const std::vector<RegionStack>& stacks) const {
    std::filesystem::create_directories(root_ / sample_id);
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        write_region_stack(stacks[i], root_ / sample_id / fmt::format("aug_{:03d}.rrn", i));
    }
}

bool DirectoryStackCache::has_original(const std::string& sample_id) const {
    return std::filesystem::is_regular_file(root_ / sample_id / "original.rrn");
}

bool DirectoryStackCache::has_augmented(const std::string& sample_id) const {
    return std::filesystem::is_regular_file(root_ / sample_id / "aug_000.rrn");
}

RegionStack DirectoryStackCache::evaluation_stack(const std::string& sample_id) const {
    if (!has_original(sample_id)) throw Error(ErrorCode::CacheMiss, sample_id);
    return read_region_stack(root_ / sample_id / "original.rrn");
}

std::vector<RegionStack> DirectoryStackCache::training_stacks(const std::string& sample_id, bool augmented) const {
    if (!augmented) return {evaluation_stack(sample_id)};
    if (!has_augmented(sample_id)) throw Error(ErrorCode::CacheMiss, sample_id + " (augmented)");
    std::vector<RegionStack> out;
    for (std::size_t i = 0;; ++i) {
        const auto path = root_ / sample_id / fmt::format("aug_{:03d}.rrn", i);
        if (!std::filesystem::is_regular_file(path)) break;
        out.push_back(read_region_stack(path));
    }
    return out;
}

Checkpoint train(const Fold& fold, const DatasetManifest& manifest, const RunConfig& config, const StackCache& cache,
                 const TrainOptions& options) {
    config.validate();
    if (fold.train_ids.empty()) throw Error(ErrorCode::EmptyManifest, "fold " + fold.name + " has no training ids");

    struct Item {
        RegionStack stack;
        int label;
        const std::string* id;
    };
    std::vector<Item> items;
    for (const auto& id : fold.train_ids) {
        const int label = label_of(manifest, id);
        for (auto& s : cache.training_stacks(id, config.augmentation_enabled)) items.push_back({std::move(s), label, &id});
    }
    std::vector<const RegionStack*> views;
    views.reserve(items.size());
    for (const auto& it : items) views.push_back(&it.stack);

    Checkpoint ckpt;
    ckpt.config = config;
    ckpt.normalization = fit_normalization(views);
    for (auto& it : items) ckpt.normalization.apply(it.stack);

    const RrrnModel model(config.model());
    ParameterSet params = model.initialize(stable_hash(config.seed, "init"));
    Adam adam(params, config.optimizer);
    ParameterSet grads = params.zeros_like();
    Rng shuffle_rng(stable_hash(config.seed, "shuffle/" + fold.name));

    std::vector<std::size_t> order(items.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        EpochStats stats;
        stats.epoch = epoch;
        long long correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const double scale = 1.0 / static_cast<double>(end - start);
            grads.fill(0.0);
            for (std::size_t b = start; b < end; ++b) {
                const Item& it = items[order[b]];
                const auto r = sample_loss(model, params, it.stack, it.label, config.loss_weights, &grads, scale);
                if (!std::isfinite(r.total)) {
                    throw Error(ErrorCode::DivergedLoss,
                                fmt::format("non-finite loss at epoch {} on sample {} (cls={}, rb={}, cor={})", epoch,
                                            *it.id, r.components.cls, r.components.rb, r.components.cor));
                }
                stats.cls += r.components.cls;
                stats.rb += r.components.rb;
                stats.cor += r.components.cor;
                stats.total += r.total;
                if (r.output.predicted_class() == it.label) ++correct;
            }
            adam.step(params, grads, config.learning_rate);
        }
        const double n = static_cast<double>(items.size());
        stats.cls /= n;
        stats.rb /= n;
        stats.cor /= n;
        stats.total /= n;
        stats.train_accuracy = static_cast<double>(correct) / n;
        ckpt.log.push_back(stats);
        ckpt.epoch = epoch;
        // The checkpoint holds what the file holds, so in-memory and on-disk
        // evaluation agree.
        ckpt.params = params;
        ckpt.adam_m = adam.first_moment();
        ckpt.adam_v = adam.second_moment();
        round_to_storage(ckpt.params);
        round_to_storage(ckpt.adam_m);
        round_to_storage(ckpt.adam_v);
        ckpt.adam_steps = adam.steps();
        if (options.checkpoint_path) write_checkpoint(ckpt, *options.checkpoint_path);
        if (options.on_epoch) options.on_epoch(stats);
    }
    return ckpt;
}

FoldResult evaluate_predictor(const Fold& fold, const DatasetManifest& manifest, const Predictor& predictor) {
    FoldResult out;
    out.name = fold.name;
    out.confusion = ConfusionMatrix(kNumClasses);
    for (const auto& id : fold.test_ids) {
        const int truth = label_of(manifest, id);
        const int predicted = predictor(id);
        out.confusion.add(truth, predicted);
        out.predictions.push_back({id, truth, predicted});
    }
    out.metrics = compute_metrics(out.confusion);
    return out;
}

FoldResult evaluate(const Checkpoint& checkpoint, const Fold& fold, const DatasetManifest& manifest,
                    const StackCache& cache) {
    const RrrnModel model(checkpoint.config.model());
    return evaluate_predictor(fold, manifest, [&](const std::string& id) {
        RegionStack stack = cache.evaluation_stack(id);
        checkpoint.normalization.apply(stack);
        return model.forward(checkpoint.params, stack).predicted_class();
    });
}

std::vector<double> mean_attention(const Checkpoint& checkpoint, const std::vector<std::string>& sample_ids,
                                   const StackCache& cache) {
    const RrrnModel model(checkpoint.config.model());
    std::vector<double> sum(static_cast<std::size_t>(model.config().regions), 0.0);
    if (sample_ids.empty()) return sum;
    for (const auto& id : sample_ids) {
        RegionStack stack = cache.evaluation_stack(id);
        checkpoint.normalization.apply(stack);
        const auto r = model.forward(checkpoint.params, stack);
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += r.alpha[k];
    }
    for (auto& v : sum) v /= static_cast<double>(sample_ids.size());
    return sum;
}

Aggregate compute_aggregate(Task task, const std::vector<FoldResult>& folds) {
    if (folds.empty()) throw Error(ErrorCode::EmptyMatrix, "no folds to aggregate");
    Aggregate a;
    if (task == Task::Hde) {
        a.method = "mean_of_folds";
        for (const auto& f : folds) {
            a.war += f.metrics.war;
            a.uar += f.metrics.uar;
            a.f1 += f.metrics.f1;
            a.wf1 += f.metrics.wf1;
        }
        const double n = static_cast<double>(folds.size());
        a.war /= n;
        a.uar /= n;
        a.f1 /= n;
        a.wf1 /= n;
        return a;
    }
    a.method = "pooled_confusion";
    ConfusionMatrix pooled(folds.front().confusion.classes());
    for (const auto& f : folds) pooled += f.confusion;
    const Metrics m = compute_metrics(pooled);
    a.war = m.war;
    a.uar = m.uar;
    a.f1 = m.f1;
    a.wf1 = m.wf1;
    a.pooled = pooled;
    return a;
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["task"] = std::string(to_string(report.task));
    j["occlusion"] = report.occlusion;
    json folds = json::array();
    for (const auto& f : report.folds) {
        json jf;
        jf["name"] = f.name;
        jf["confusion"] = f.confusion.rows();
        jf["war"] = f.metrics.war;
        jf["uar"] = f.metrics.uar;
        jf["f1"] = f.metrics.f1;
        jf["wf1"] = f.metrics.wf1;
        jf["excluded_classes"] = f.metrics.excluded_classes;
        json preds = json::array();
        for (const auto& p : f.predictions) {
            preds.push_back({{"sample_id", p.sample_id}, {"truth", p.truth}, {"predicted", p.predicted}});
        }
        jf["predictions"] = std::move(preds);
        folds.push_back(std::move(jf));
    }
    j["folds"] = std::move(folds);
    json agg;
    agg["method"] = report.aggregate.method;
    agg["war"] = report.aggregate.war;
    agg["uar"] = report.aggregate.uar;
    agg["f1"] = report.aggregate.f1;
    agg["wf1"] = report.aggregate.wf1;
    if (report.aggregate.pooled) agg["pooled_confusion"] = report.aggregate.pooled->rows();
    j["aggregate"] = std::move(agg);
    j["config_fingerprint"] = report.config_fingerprint;
    return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
    EvalReport r;
    try {
        const json j = json::parse(text);
        const auto task = parse_task(j.at("task").get<std::string>());
        if (!task) throw Error(ErrorCode::IoError, "report has an unknown task");
        r.task = *task;
        r.occlusion = j.at("occlusion").get<std::string>();
        for (const auto& jf : j.at("folds")) {
            FoldResult f;
            f.name = jf.at("name").get<std::string>();
            f.confusion = ConfusionMatrix::from_rows(jf.at("confusion").get<std::vector<std::vector<long long>>>());
            f.metrics.war = jf.at("war").get<double>();
            f.metrics.uar = jf.at("uar").get<double>();
            f.metrics.f1 = jf.at("f1").get<double>();
            f.metrics.wf1 = jf.at("wf1").get<double>();
            f.metrics.excluded_classes = jf.value("excluded_classes", std::vector<int>{});
            if (jf.contains("predictions")) {
                for (const auto& p : jf.at("predictions")) {
                    f.predictions.push_back({p.at("sample_id").get<std::string>(), p.at("truth").get<int>(),
                                             p.at("predicted").get<int>()});
                }
            }
            r.folds.push_back(std::move(f));
        }
        const auto& agg = j.at("aggregate");
        r.aggregate.method = agg.at("method").get<std::string>();
        r.aggregate.war = agg.at("war").get<double>();
        r.aggregate.uar = agg.at("uar").get<double>();
        r.aggregate.f1 = agg.at("f1").get<double>();
        r.aggregate.wf1 = agg.at("wf1").get<double>();
        if (agg.contains("pooled_confusion")) {
            r.aggregate.pooled =
                ConfusionMatrix::from_rows(agg.at("pooled_confusion").get<std::vector<std::vector<long long>>>());
        }
        r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("malformed report: ") + e.what());
    }
    return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    const auto text = report_to_json(report);
    binary::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

EvalReport read_report(const std::filesystem::path& path) {
    const auto bytes = binary::read_file(path);
    return report_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace rrrn
