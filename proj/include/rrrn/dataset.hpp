#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rrrn {

enum class Database { CASME2, SAMM, SYNTHETIC };

/// Objective classes I..V, stored as 0..4. Unmapped is a value, not an error.
enum class ObjectiveClass { I = 0, II, III, IV, V, Unmapped };

inline constexpr int kNumClasses = 5;

struct OcclusionTag {
    enum class Kind { None, Mask, Glass, Random };
    Kind kind = Kind::None;
    int percent = 0;  // Random only: 5, 10, ..., 50

    friend bool operator==(const OcclusionTag&, const OcclusionTag&) = default;
};

std::string_view to_string(Database db);
std::string_view to_string(ObjectiveClass cls);
std::string to_string(const OcclusionTag& tag);

std::optional<Database> parse_database(std::string_view text);
std::optional<ObjectiveClass> parse_objective_class(std::string_view text);
std::optional<OcclusionTag> parse_occlusion_tag(std::string_view text);

inline int class_index(ObjectiveClass cls) { return static_cast<int>(cls); }

struct AnnotationRecord {
    std::string sample_id;
    Database database_id = Database::SYNTHETIC;
    std::string subject_id;
    std::filesystem::path frames_dir;
    int onset_idx = 0;
    int apex_idx = 0;
    int offset_idx = 0;
    std::string au_code;
    ObjectiveClass objective_class = ObjectiveClass::Unmapped;
    OcclusionTag occlusion_tag;

    bool is_mapped() const { return objective_class != ObjectiveClass::Unmapped; }
    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct DatasetManifest {
    std::vector<AnnotationRecord> records;
    std::string source_note;

    const AnnotationRecord* find(std::string_view sample_id) const;
    std::vector<std::string> subjects() const;  // sorted, distinct
    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

struct ManifestIssue {
    int line_no = 0;
    std::string reason;
    bool duplicate_id = false;
};

struct ManifestParseResult {
    DatasetManifest manifest;
    std::vector<ManifestIssue> errors;

    bool ok() const { return errors.empty(); }
};

/// Parses every line; bad lines are reported in `errors` and left out of the
/// manifest. Throws only when the file itself cannot be opened.
ManifestParseResult parse_manifest(const std::filesystem::path& path);
ManifestParseResult parse_manifest_text(std::string_view text);

/// Like parse_manifest but throws the first collected error.
DatasetManifest load_manifest(const std::filesystem::path& path);

std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Uppercases, strips whitespace and laterality marks, repairs bare-number and
/// single-"A" prefixes, de-duplicates and sorts tokens by AU number.
std::string normalize_au_code(std::string_view au_code);

ObjectiveClass map_aus_to_objective_class(std::string_view au_code);

/// The 34 AU combinations of the objective-class table, already normalized.
const std::vector<std::pair<std::string, ObjectiveClass>>& objective_class_table();

struct ClassDistribution {
    std::array<int, kNumClasses> counts{};
    int total = 0;
    int subjects = 0;
};

ClassDistribution class_distribution(const DatasetManifest& manifest);

/// Records with a mapped class only, order preserved.
DatasetManifest mapped_only(const DatasetManifest& manifest);

/// Frame-less manifests reproducing the published per-class counts and
/// subject totals of CASME II (185/26) and SAMM (68/21). Used as fixtures.
DatasetManifest reference_manifest(Database db);
DatasetManifest reference_composite_manifest();
DatasetManifest concat_manifests(const DatasetManifest& a, const DatasetManifest& b);

}  // namespace rrrn
