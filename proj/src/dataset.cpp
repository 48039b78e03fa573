#include "rrrn/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rrrn/error.hpp"

namespace rrrn {

namespace {

constexpr std::array<std::string_view, 10> kFieldNames = {
    "sample_id", "database_id", "subject_id", "frames_dir", "onset_idx",
    "apex_idx",  "offset_idx",  "au_code",    "objective_class", "occlusion_tag"};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::optional<int> parse_int(std::string_view s) {
    s = trim(s);
    int value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

// Canonical form of one AU token: "AU<number>" or the uppercased token
// verbatim when it does not look like an AU at all.
std::string normalize_token(std::string_view raw) {
    std::string token;
    for (char c : raw) {
        if (!std::isspace(static_cast<unsigned char>(c))) {
            token.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        }
    }
    // Laterality / intensity annotations in parentheses, e.g. AU10(R).
    if (auto paren = token.find('('); paren != std::string::npos) token.erase(paren);

    std::string_view rest = token;
    if (rest.starts_with("AU")) {
        rest.remove_prefix(2);
    } else if (!rest.empty() && (rest.front() == 'A' || rest.front() == 'L' || rest.front() == 'R')) {
        rest.remove_prefix(1);
    }
    std::size_t digits = 0;
    while (digits < rest.size() && std::isdigit(static_cast<unsigned char>(rest[digits]))) ++digits;
    if (digits == 0) return token;
    for (std::size_t i = digits; i < rest.size(); ++i) {
        if (!std::isalpha(static_cast<unsigned char>(rest[i]))) return token;
    }
    int number = 0;
    std::from_chars(rest.data(), rest.data() + digits, number);
    return "AU" + std::to_string(number);
}

int au_number(const std::string& token) {
    if (token.size() > 2 && token.starts_with("AU")) {
        int n = 0;
        auto [ptr, ec] = std::from_chars(token.data() + 2, token.data() + token.size(), n);
        if (ec == std::errc{} && ptr == token.data() + token.size()) return n;
    }
    return -1;
}

const std::unordered_map<std::string, ObjectiveClass>& class_lookup() {
    static const auto table = [] {
        std::unordered_map<std::string, ObjectiveClass> m;
        for (const auto& [code, cls] : objective_class_table()) m.emplace(code, cls);
        return m;
    }();
    return table;
}

std::string record_to_line(const AnnotationRecord& r) {
    std::ostringstream os;
    os << r.sample_id << '\t' << to_string(r.database_id) << '\t' << r.subject_id << '\t'
       << r.frames_dir.generic_string() << '\t' << r.onset_idx << '\t' << r.apex_idx << '\t'
       << r.offset_idx << '\t' << r.au_code << '\t' << to_string(r.objective_class) << '\t'
       << to_string(r.occlusion_tag);
    return os.str();
}

}  // namespace

std::string_view to_string(Database db) {
    switch (db) {
        case Database::CASME2: return "CASME2";
        case Database::SAMM: return "SAMM";
        case Database::SYNTHETIC: return "SYNTHETIC";
    }
    return "SYNTHETIC";
}

std::string_view to_string(ObjectiveClass cls) {
    switch (cls) {
        case ObjectiveClass::I: return "I";
        case ObjectiveClass::II: return "II";
        case ObjectiveClass::III: return "III";
        case ObjectiveClass::IV: return "IV";
        case ObjectiveClass::V: return "V";
        case ObjectiveClass::Unmapped: return "UNMAPPED";
    }
    return "UNMAPPED";
}

std::string to_string(const OcclusionTag& tag) {
    switch (tag.kind) {
        case OcclusionTag::Kind::None: return "NONE";
        case OcclusionTag::Kind::Mask: return "MASK";
        case OcclusionTag::Kind::Glass: return "GLASS";
        case OcclusionTag::Kind::Random: {
            std::string digits = std::to_string(tag.percent);
            if (digits.size() < 2) digits.insert(0, "0");
            return "RANDOM_" + digits;
        }
    }
    return "NONE";
}

std::optional<Database> parse_database(std::string_view text) {
    text = trim(text);
    if (text == "CASME2") return Database::CASME2;
    if (text == "SAMM") return Database::SAMM;
    if (text == "SYNTHETIC") return Database::SYNTHETIC;
    return std::nullopt;
}

std::optional<ObjectiveClass> parse_objective_class(std::string_view text) {
    text = trim(text);
    if (text == "I") return ObjectiveClass::I;
    if (text == "II") return ObjectiveClass::II;
    if (text == "III") return ObjectiveClass::III;
    if (text == "IV") return ObjectiveClass::IV;
    if (text == "V") return ObjectiveClass::V;
    if (text == "UNMAPPED") return ObjectiveClass::Unmapped;
    return std::nullopt;
}

std::optional<OcclusionTag> parse_occlusion_tag(std::string_view text) {
    text = trim(text);
    if (text == "NONE") return OcclusionTag{};
    if (text == "MASK") return OcclusionTag{OcclusionTag::Kind::Mask, 0};
    if (text == "GLASS") return OcclusionTag{OcclusionTag::Kind::Glass, 0};
    if (text.starts_with("RANDOM_") && text.size() == 9) {
        auto pct = parse_int(text.substr(7));
        if (pct && *pct >= 5 && *pct <= 50 && *pct % 5 == 0) {
            return OcclusionTag{OcclusionTag::Kind::Random, *pct};
        }
    }
    return std::nullopt;
}

const AnnotationRecord* DatasetManifest::find(std::string_view sample_id) const {
    for (const auto& r : records) {
        if (r.sample_id == sample_id) return &r;
    }
    return nullptr;
}

std::vector<std::string> DatasetManifest::subjects() const {
    std::set<std::string> unique;
    for (const auto& r : records) unique.insert(r.subject_id);
    return {unique.begin(), unique.end()};
}

std::string normalize_au_code(std::string_view au_code) {
    std::vector<std::string> tokens;
    for (auto part : split(au_code, '+')) {
        std::string token = normalize_token(part);
        if (!token.empty()) tokens.push_back(std::move(token));
    }
    std::sort(tokens.begin(), tokens.end(), [](const std::string& a, const std::string& b) {
        const int na = au_number(a), nb = au_number(b);
        if (na != nb) return na < nb;
        return a < b;
    });
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back('+');
        out += t;
    }
    return out;
}

const std::vector<std::pair<std::string, ObjectiveClass>>& objective_class_table() {
    static const std::vector<std::pair<std::string, ObjectiveClass>> table = [] {
        using C = ObjectiveClass;
        // "A23" in the published table is read as AU23.
        const std::vector<std::pair<std::string_view, C>> raw = {
            {"AU6", C::I}, {"AU12", C::I}, {"AU6+AU12", C::I}, {"AU6+AU7+AU12", C::I},
            {"AU7+AU12", C::I},
            {"AU1+AU2", C::II}, {"AU5", C::II}, {"AU25", C::II}, {"AU1+AU2+AU25", C::II},
            {"AU25+AU26", C::II}, {"AU5+AU24", C::II},
            {"A23", C::III}, {"AU4", C::III}, {"AU4+AU7", C::III}, {"AU4+AU5", C::III},
            {"AU4+AU5+AU7", C::III}, {"AU17+AU24", C::III}, {"AU4+AU6+AU7", C::III},
            {"AU4+AU38", C::III},
            {"AU10", C::IV}, {"AU9", C::IV}, {"AU4+AU9", C::IV}, {"AU4+AU40", C::IV},
            {"AU4+AU5+AU40", C::IV}, {"AU4+AU7+AU9", C::IV}, {"AU4 +AU9+AU17", C::IV},
            {"AU4+AU7+AU10", C::IV}, {"AU4+AU5+AU7+AU9", C::IV}, {"AU7+AU10", C::IV},
            {"AU1", C::V}, {"AU15", C::V}, {"AU1+AU4", C::V}, {"AU6+AU15", C::V},
            {"AU15+AU17", C::V},
        };
        std::vector<std::pair<std::string, ObjectiveClass>> out;
        out.reserve(raw.size());
        for (const auto& [code, cls] : raw) out.emplace_back(normalize_au_code(code), cls);
        return out;
    }();
    return table;
}

ObjectiveClass map_aus_to_objective_class(std::string_view au_code) {
    const auto& lookup = class_lookup();
    auto it = lookup.find(normalize_au_code(au_code));
    return it == lookup.end() ? ObjectiveClass::Unmapped : it->second;
}

ManifestParseResult parse_manifest_text(std::string_view text) {
    ManifestParseResult result;
    std::unordered_set<std::string> seen;
    int line_no = 0;
    for (auto raw_line : split(text, '\n')) {
        ++line_no;
        if (!raw_line.empty() && raw_line.back() == '\r') raw_line.remove_suffix(1);
        if (trim(raw_line).empty()) continue;
        if (raw_line.front() == '#') {
            if (raw_line.starts_with("#source:")) {
                result.manifest.source_note = std::string(trim(raw_line.substr(8)));
            }
            continue;
        }
        auto fields = split(raw_line, '\t');
        auto fail = [&](std::string reason) {
            result.errors.push_back({line_no, std::move(reason), false});
        };
        if (fields.size() != kFieldNames.size()) {
            fail("expected " + std::to_string(kFieldNames.size()) + " tab-separated fields, got " +
                 std::to_string(fields.size()));
            continue;
        }
        AnnotationRecord r;
        r.sample_id = std::string(trim(fields[0]));
        r.subject_id = std::string(trim(fields[2]));
        r.frames_dir = std::filesystem::path(std::string(trim(fields[3])));
        r.au_code = std::string(trim(fields[7]));
        if (r.sample_id.empty()) { fail("empty sample_id"); continue; }
        if (r.subject_id.empty()) { fail("empty subject_id"); continue; }
        auto db = parse_database(fields[1]);
        if (!db) { fail("unknown database_id '" + std::string(fields[1]) + "'"); continue; }
        r.database_id = *db;
        auto onset = parse_int(fields[4]), apex = parse_int(fields[5]), offset = parse_int(fields[6]);
        if (!onset || !apex || !offset) { fail("frame indices must be integers"); continue; }
        r.onset_idx = *onset;
        r.apex_idx = *apex;
        r.offset_idx = *offset;
        if (r.onset_idx < 0 || !(r.onset_idx <= r.apex_idx && r.apex_idx <= r.offset_idx)) {
            fail("frame indices violate 0 <= onset <= apex <= offset");
            continue;
        }
        const ObjectiveClass from_aus = map_aus_to_objective_class(r.au_code);
        const std::string_view cls_field = trim(fields[8]);
        if (cls_field == "-" || cls_field.empty()) {
            r.objective_class = from_aus;
        } else {
            auto cls = parse_objective_class(cls_field);
            if (!cls) { fail("unknown objective_class '" + std::string(cls_field) + "'"); continue; }
            if (*cls != ObjectiveClass::Unmapped && from_aus != ObjectiveClass::Unmapped &&
                *cls != from_aus) {
                fail("objective_class " + std::string(cls_field) + " contradicts au_code '" +
                     r.au_code + "' (maps to " + std::string(to_string(from_aus)) + ")");
                continue;
            }
            r.objective_class = *cls;
        }
        auto tag = parse_occlusion_tag(fields[9]);
        if (!tag) { fail("unknown occlusion_tag '" + std::string(fields[9]) + "'"); continue; }
        r.occlusion_tag = *tag;
        if (!seen.insert(r.sample_id).second) {
            result.errors.push_back({line_no, "duplicate sample_id '" + r.sample_id + "'", true});
            continue;
        }
        result.manifest.records.push_back(std::move(r));
    }
    return result;
}

ManifestParseResult parse_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open manifest " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_manifest_text(buffer.str());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    auto result = parse_manifest(path);
    if (!result.errors.empty()) {
        const auto& first = result.errors.front();
        throw Error(first.duplicate_id ? ErrorCode::DuplicateSampleId : ErrorCode::MalformedLine,
                    path.string() + ":" + std::to_string(first.line_no) + ": " + first.reason +
                        (result.errors.size() > 1
                             ? " (+" + std::to_string(result.errors.size() - 1) + " more)"
                             : ""));
    }
    return std::move(result.manifest);
}

std::string format_manifest(const DatasetManifest& manifest) {
    std::ostringstream os;
    os << '#';
    for (std::size_t i = 0; i < kFieldNames.size(); ++i) os << (i ? "\t" : "") << kFieldNames[i];
    os << '\n';
    if (!manifest.source_note.empty()) os << "#source: " << manifest.source_note << '\n';
    for (const auto& r : manifest.records) os << record_to_line(r) << '\n';
    return os.str();
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
    out << format_manifest(manifest);
}

ClassDistribution class_distribution(const DatasetManifest& manifest) {
    ClassDistribution dist;
    for (const auto& r : manifest.records) {
        if (!r.is_mapped()) {
            throw Error(ErrorCode::UnmappedRecordPresent, "sample " + r.sample_id + " ('" + r.au_code +
                                                              "') has no objective class");
        }
        ++dist.counts[class_index(r.objective_class)];
        ++dist.total;
    }
    dist.subjects = static_cast<int>(manifest.subjects().size());
    return dist;
}

DatasetManifest mapped_only(const DatasetManifest& manifest) {
    DatasetManifest out;
    out.source_note = manifest.source_note;
    for (const auto& r : manifest.records) {
        if (r.is_mapped()) out.records.push_back(r);
    }
    return out;
}

DatasetManifest reference_manifest(Database db) {
    std::array<int, kNumClasses> counts{};
    int subjects = 0;
    std::string prefix;
    switch (db) {
        case Database::CASME2:
            counts = {25, 15, 99, 26, 20};
            subjects = 26;
            prefix = "casme2";
            break;
        case Database::SAMM:
            counts = {24, 13, 20, 8, 3};
            subjects = 21;
            prefix = "samm";
            break;
        case Database::SYNTHETIC:
            throw Error(ErrorCode::InvalidConfig, "no reference counts for SYNTHETIC");
    }
    // One representative AU combination per class.
    std::array<std::string, kNumClasses> codes;
    for (const auto& [code, cls] : objective_class_table()) {
        auto& slot = codes[class_index(cls)];
        if (slot.empty()) slot = code;
    }
    DatasetManifest m;
    m.source_note = "reference counts for " + std::string(to_string(db));
    int index = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        for (int i = 0; i < counts[c]; ++i, ++index) {
            AnnotationRecord r;
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%04d", prefix.c_str(), index + 1);
            r.sample_id = id;
            r.database_id = db;
            std::snprintf(id, sizeof(id), "%s_s%02d", prefix.c_str(), index % subjects + 1);
            r.subject_id = id;
            r.frames_dir = std::filesystem::path("frames") / r.sample_id;
            r.onset_idx = 0;
            r.apex_idx = 10;
            r.offset_idx = 20;
            r.au_code = codes[c];
            r.objective_class = static_cast<ObjectiveClass>(c);
            m.records.push_back(std::move(r));
        }
    }
    return m;
}

DatasetManifest concat_manifests(const DatasetManifest& a, const DatasetManifest& b) {
    DatasetManifest out;
    out.source_note = a.source_note.empty() ? b.source_note
                                            : (b.source_note.empty() ? a.source_note
                                                                     : a.source_note + " + " + b.source_note);
    out.records = a.records;
    out.records.insert(out.records.end(), b.records.begin(), b.records.end());
    return out;
}

DatasetManifest reference_composite_manifest() {
    return concat_manifests(reference_manifest(Database::CASME2), reference_manifest(Database::SAMM));
}

}  // namespace rrrn
