#include "rrrn/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <regex>
#include <sstream>

#include "rrrn/augment.hpp"
#include "rrrn/error.hpp"

namespace rrrn {

namespace {

constexpr double kMaskWidthToJaw = 1.15;

Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
Point2 midpoint(Point2 a, Point2 b) { return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0}; }
double norm(Point2 a) { return std::hypot(a.x, a.y); }

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, std::array<std::uint8_t, 4> rgba) {
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double dx = (x - cx) / rx, dy = (y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
                for (int c = 0; c < 4; ++c) img.at(y, x, c) = rgba[c];
            }
        }
    }
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, std::array<std::uint8_t, 4> rgba) {
    for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y) {
        for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x) {
            for (int c = 0; c < 4; ++c) img.at(y, x, c) = rgba[c];
        }
    }
}

// Bilinear RGBA lookup treating everything outside the asset as transparent.
std::array<double, 4> sample_rgba(const Image& img, double y, double x) {
    std::array<double, 4> out{};
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
            const int xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || yy < 0 || xx >= img.width || yy >= img.height) continue;
            const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
            if (w == 0.0) continue;
            const double a = img.at(yy, xx, 3) / 255.0;
            // premultiplied so transparent texels do not bleed color
            for (int c = 0; c < 3; ++c) out[c] += w * a * img.at(yy, xx, c);
            out[3] += w * a;
        }
    }
    return out;
}

}  // namespace

FaceLandmarks template_landmarks(double left, double top, double width, double height) {
    FaceLandmarks lm{};
    auto put = [&](int i, double u, double v) { lm[i] = {left + u * width, top + v * height}; };
    const double pi = std::numbers::pi;
    for (int i = 0; i <= 16; ++i) {
        const double t = pi - pi * i / 16.0;
        put(i, 0.5 + 0.48 * std::cos(t), 0.35 + 0.63 * std::sin(pi * i / 16.0));
    }
    for (int i = 0; i < 5; ++i) {
        const double arc = 0.03 * std::sin(pi * i / 4.0);
        put(17 + i, 0.12 + 0.075 * i, 0.26 - arc);
        put(22 + i, 0.58 + 0.075 * i, 0.26 - arc);
    }
    for (int i = 0; i < 4; ++i) put(27 + i, 0.5, 0.33 + 0.09 * i);
    for (int i = 0; i < 5; ++i) put(31 + i, 0.40 + 0.05 * i, 0.66 + (i == 2 ? 0.01 : 0.0));
    const std::array<std::pair<double, double>, 6> eye = {
        {{-0.10, 0.0}, {-0.04, -0.03}, {0.04, -0.03}, {0.10, 0.0}, {0.04, 0.03}, {-0.04, 0.03}}};
    for (int i = 0; i < 6; ++i) {
        // 36 and 45 end up as the outer corners, 39 and 42 as the inner ones
        put(36 + i, 0.30 + eye[i].first, 0.38 + eye[i].second);
        put(42 + i, 0.70 + eye[i].first, 0.38 + eye[i].second);
    }
    for (int j = 0; j < 12; ++j) {
        const double t = pi + 2.0 * pi * j / 12.0;
        put(48 + j, 0.5 + 0.15 * std::cos(t), 0.80 + 0.06 * std::sin(t));
    }
    for (int j = 0; j < 8; ++j) {
        const double t = pi + 2.0 * pi * j / 8.0;
        put(60 + j, 0.5 + 0.10 * std::cos(t), 0.80 + 0.03 * std::sin(t));
    }
    return lm;
}

LandmarkSet parse_landmarks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, "landmark file " + path.string());
    LandmarkSet set;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string token;
        FaceLandmarks lm{};
        int count = 0;
        while (ls >> token) {
            const auto comma = token.find(',');
            if (comma == std::string::npos || count >= kLandmarkCount) {
                count = -1;
                break;
            }
            try {
                lm[count] = {std::stod(token.substr(0, comma)), std::stod(token.substr(comma + 1))};
            } catch (const std::exception&) {
                count = -1;
                break;
            }
            ++count;
        }
        if (count != kLandmarkCount) {
            throw Error(ErrorCode::MalformedLine,
                        path.string() + ":" + std::to_string(line_no) + ": expected 68 x,y pairs");
        }
        set.frames.push_back(lm);
    }
    return set;
}

void write_landmarks(const LandmarkSet& set, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.precision(17);
    for (const auto& lm : set.frames) {
        for (int i = 0; i < kLandmarkCount; ++i) out << (i ? " " : "") << lm[i].x << ',' << lm[i].y;
        out << '\n';
    }
}

void OcclusionAsset::validate() const {
    if (rgba.channels != 4) throw Error(ErrorCode::InvalidConfig, "occlusion asset needs an alpha channel");
    auto inside = [&](Point2 p) { return p.x >= 0 && p.y >= 0 && p.x <= rgba.width - 1 && p.y <= rgba.height - 1; };
    if (!inside(anchor_a) || !inside(anchor_b)) {
        throw Error(ErrorCode::InvalidConfig, "asset anchors must lie inside the asset");
    }
    if (norm(anchor_b - anchor_a) < 1e-6) throw Error(ErrorCode::InvalidConfig, "asset anchors coincide");
}

OcclusionAsset procedural_asset(AssetKind kind, int variant) {
    OcclusionAsset asset;
    asset.kind = kind;
    const int v = std::abs(variant) % 10;
    if (kind == AssetKind::Glasses) {
        asset.rgba = Image(40, 120, 4, 0);
        const double rx = 24.0 + v % 3, ry = 14.0 + v % 4;
        const std::uint8_t shade = static_cast<std::uint8_t>(15 + 8 * v);
        fill_ellipse(asset.rgba, 31, 20, rx, ry, {shade, shade, shade, 235});
        fill_ellipse(asset.rgba, 89, 20, rx, ry, {shade, shade, shade, 235});
        fill_rect(asset.rgba, 52, 16, 68, 20, {shade, shade, shade, 255});
        asset.anchor_a = {31.0 - rx, 20.0};
        asset.anchor_b = {89.0 + rx, 20.0};
    } else {
        asset.rgba = Image(80, 100, 4, 0);
        const std::array<std::uint8_t, 4> color = {static_cast<std::uint8_t>(150 + 10 * v), 200,
                                                   static_cast<std::uint8_t>(235 - 8 * v), 255};
        fill_rect(asset.rgba, 6, 4, 94, 60, color);
        fill_ellipse(asset.rgba, 50, 58, 44, 20, color);
        asset.anchor_a = {50.0, 4.0};
        asset.anchor_b = {50.0, 78.0};
    }
    return asset;
}

std::vector<OcclusionAsset> load_assets(const std::filesystem::path& dir, AssetKind kind) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::MissingFile, "asset directory " + dir.string());
    const std::string prefix = kind == AssetKind::Mask ? "mask" : "glass";
    const std::regex pattern(prefix + "_(\\d+)\\.png");
    std::vector<std::pair<int, std::filesystem::path>> found;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoi(m[1].str()), e.path());
    }
    std::sort(found.begin(), found.end());
    std::vector<OcclusionAsset> assets;
    for (const auto& [index, png] : found) {
        OcclusionAsset asset;
        asset.kind = kind;
        asset.rgba = read_image(png);
        auto sidecar = png;
        sidecar.replace_extension(".txt");
        std::ifstream in(sidecar);
        if (!in || !(in >> asset.anchor_a.x >> asset.anchor_a.y >> asset.anchor_b.x >> asset.anchor_b.y)) {
            throw Error(ErrorCode::MalformedLine, "asset anchor sidecar " + sidecar.string());
        }
        asset.validate();
        assets.push_back(std::move(asset));
    }
    return assets;
}

void save_asset(const OcclusionAsset& asset, const std::filesystem::path& dir, int index) {
    char name[32];
    std::snprintf(name, sizeof(name), "%s_%02d", asset.kind == AssetKind::Mask ? "mask" : "glass", index);
    write_image(asset.rgba, dir / (std::string(name) + ".png"));
    std::ofstream out(dir / (std::string(name) + ".txt"));
    out.precision(17);
    out << asset.anchor_a.x << ' ' << asset.anchor_a.y << ' ' << asset.anchor_b.x << ' ' << asset.anchor_b.y << '\n';
}

double AccessoryTransform::rotation_deg() const {
    return std::atan2(linear[2], linear[0]) * 180.0 / std::numbers::pi;
}

Point2 AccessoryTransform::apply(Point2 p) const {
    const Point2 q = p - asset_origin;
    return {origin.x + linear[0] * q.x + linear[1] * q.y, origin.y + linear[2] * q.x + linear[3] * q.y};
}

AccessoryTransform accessory_transform(const FaceLandmarks& lm, const OcclusionAsset& asset) {
    asset.validate();
    Point2 target_a, target_b;
    if (asset.kind == AssetKind::Glasses) {
        target_a = lm[landmark::kLeftEyeOuter];
        target_b = lm[landmark::kRightEyeOuter];
    } else {
        target_a = midpoint(lm[landmark::kNoseBridgeTop], lm[landmark::kNoseTip]);
        target_b = lm[landmark::kChin];
    }
    const Point2 da = asset.anchor_b - asset.anchor_a;
    const Point2 dl = target_b - target_a;
    const double la = norm(da), ll = norm(dl);
    if (ll < 1e-6) throw Error(ErrorCode::DegenerateLandmarks, "accessory anchor landmarks coincide");

    AccessoryTransform t;
    t.origin = target_a;
    t.asset_origin = asset.anchor_a;
    // Orthonormal frames along the anchor axis in asset and frame space.
    const Point2 ea{da.x / la, da.y / la}, el{dl.x / ll, dl.y / ll};
    const Point2 pa{-ea.y, ea.x}, pl{-el.y, el.x};
    const double along = ll / la;
    double across = along;
    if (asset.kind == AssetKind::Mask) {
        const double jaw = norm(lm[landmark::kJawRight] - lm[landmark::kJawLeft]);
        if (jaw < 1e-6) throw Error(ErrorCode::DegenerateLandmarks, "jaw width is zero");
        across = kMaskWidthToJaw * jaw / asset.rgba.width;
    }
    // linear = along * el * ea^T + across * pl * pa^T
    t.linear = {along * el.x * ea.x + across * pl.x * pa.x, along * el.x * ea.y + across * pl.x * pa.y,
                along * el.y * ea.x + across * pl.y * pa.x, along * el.y * ea.y + across * pl.y * pa.y};
    return t;
}

Image overlay_accessory(const Image& frame, const FaceLandmarks& landmarks, const OcclusionAsset& asset) {
    const AccessoryTransform t = accessory_transform(landmarks, asset);
    const auto& m = t.linear;
    const double det = m[0] * m[3] - m[1] * m[2];
    if (std::abs(det) < 1e-12) throw Error(ErrorCode::DegenerateLandmarks, "accessory transform is singular");
    const std::array<double, 4> inv = {m[3] / det, -m[1] / det, -m[2] / det, m[0] / det};

    // Work relative to an integer pixel origin so that shifting every landmark
    // by whole pixels reproduces the same arithmetic, shifted.
    const int ox = static_cast<int>(std::floor(t.origin.x));
    const int oy = static_cast<int>(std::floor(t.origin.y));
    const Point2 local_origin{t.origin.x - ox, t.origin.y - oy};

    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    const double w = asset.rgba.width, h = asset.rgba.height;
    for (Point2 corner : {Point2{-1, -1}, Point2{w, -1}, Point2{-1, h}, Point2{w, h}}) {
        const Point2 q = corner - t.asset_origin;
        const double x = local_origin.x + m[0] * q.x + m[1] * q.y;
        const double y = local_origin.y + m[2] * q.x + m[3] * q.y;
        min_x = std::min(min_x, x), max_x = std::max(max_x, x);
        min_y = std::min(min_y, y), max_y = std::max(max_y, y);
    }
    const int x_begin = std::max(0, static_cast<int>(std::floor(min_x)) + ox);
    const int x_end = std::min(frame.width, static_cast<int>(std::ceil(max_x)) + ox + 1);
    const int y_begin = std::max(0, static_cast<int>(std::floor(min_y)) + oy);
    const int y_end = std::min(frame.height, static_cast<int>(std::ceil(max_y)) + oy + 1);

    Image out = frame;
    for (int y = y_begin; y < y_end; ++y) {
        for (int x = x_begin; x < x_end; ++x) {
            const double lx = (x - ox) - local_origin.x, ly = (y - oy) - local_origin.y;
            const double ax = t.asset_origin.x + inv[0] * lx + inv[1] * ly;
            const double ay = t.asset_origin.y + inv[2] * lx + inv[3] * ly;
            const auto px = sample_rgba(asset.rgba, ay, ax);
            const double alpha = px[3];
            if (alpha <= 0.0) continue;
            if (frame.channels >= 3) {
                for (int c = 0; c < 3; ++c) {
                    const double blended = px[c] + (1.0 - alpha) * frame.at(y, x, c);
                    out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::floor(blended + 0.5), 0.0, 255.0));
                }
            } else {
                const double luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                const double blended = luma + (1.0 - alpha) * frame.at(y, x, 0);
                out.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(std::floor(blended + 0.5), 0.0, 255.0));
            }
        }
    }
    return out;
}

Rect choose_random_block(const Rect& face_box, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio <= 0.5)) {
        throw Error(ErrorCode::RatioOutOfRange, "random block ratio must be in (0, 0.5], got " + std::to_string(ratio));
    }
    if (face_box.width < 1 || face_box.height < 1) throw Error(ErrorCode::ShapeMismatch, "empty face box");
    const double target = ratio * static_cast<double>(face_box.area());

    struct Candidate {
        int w, h;
        double err;
    };
    std::vector<Candidate> candidates;
    double best = 1e300;
    // Aspect ratios between 1:2 and 2:1.
    const int w_lo = std::max(1, static_cast<int>(std::ceil(std::sqrt(target / 2.0))));
    const int w_hi = std::min(face_box.width, static_cast<int>(std::floor(std::sqrt(target * 2.0))) + 1);
    for (int w = w_lo; w <= w_hi; ++w) {
        const int h = static_cast<int>(std::lround(target / w));
        if (h < 1 || h > face_box.height) continue;
        const double err = std::abs(static_cast<double>(w) * h - target);
        candidates.push_back({w, h, err});
        best = std::min(best, err);
    }
    if (candidates.empty()) {
        // Extremely elongated boxes: fall back to full-width strips.
        const int w = face_box.width;
        const int h = std::clamp(static_cast<int>(std::lround(target / w)), 1, face_box.height);
        candidates.push_back({w, h, 0.0});
        best = 0.0;
    }
    const double tolerance = std::max(best, 0.005 * target);
    std::vector<Candidate> good;
    for (const auto& c : candidates) {
        if (c.err <= tolerance) good.push_back(c);
    }
    const Candidate pick = good[static_cast<std::size_t>(rng.below(good.size()))];
    Rect block;
    block.width = pick.w;
    block.height = pick.h;
    block.x = face_box.x + static_cast<int>(rng.below(static_cast<std::uint64_t>(face_box.width - pick.w + 1)));
    block.y = face_box.y + static_cast<int>(rng.below(static_cast<std::uint64_t>(face_box.height - pick.h + 1)));
    return block;
}

Image fill_block(const Image& frame, const Rect& block) {
    Image out = frame;
    for (int y = std::max(0, block.y); y < std::min(frame.height, block.y + block.height); ++y) {
        for (int x = std::max(0, block.x); x < std::min(frame.width, block.x + block.width); ++x) {
            for (int c = 0; c < frame.channels; ++c) {
                out.at(y, x, c) = (frame.channels == 4 && c == 3) ? frame.at(y, x, c) : kBlockFill;
            }
        }
    }
    return out;
}

Image overlay_random_block(const Image& frame, const Rect& face_box, double ratio, Rng& rng) {
    if (face_box.x < 0 || face_box.y < 0 || face_box.x + face_box.width > frame.width ||
        face_box.y + face_box.height > frame.height) {
        throw Error(ErrorCode::ShapeMismatch, "face box extends outside the frame");
    }
    return fill_block(frame, choose_random_block(face_box, ratio, rng));
}

Rect landmark_bounds(const FaceLandmarks& lm, int frame_height, int frame_width) {
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    for (const auto& p : lm) {
        min_x = std::min(min_x, p.x), max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y), max_y = std::max(max_y, p.y);
    }
    const int x0 = std::clamp(static_cast<int>(std::floor(min_x)), 0, frame_width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(min_y)), 0, frame_height - 1);
    const int x1 = std::clamp(static_cast<int>(std::ceil(max_x)) + 1, x0 + 1, frame_width);
    const int y1 = std::clamp(static_cast<int>(std::ceil(max_y)) + 1, y0 + 1, frame_height);
    return {x0, y0, x1 - x0, y1 - y0};
}

void OcclusionSpec::validate() const {
    if (kind == Kind::Random) {
        if (!ratio) throw Error(ErrorCode::RatioOutOfRange, "random occlusion needs a ratio");
        if (!(*ratio > 0.0 && *ratio <= 0.5)) throw Error(ErrorCode::RatioOutOfRange, "ratio must be in (0, 0.5]");
    } else if (ratio) {
        throw Error(ErrorCode::InvalidConfig, "ratio is only meaningful for random occlusion");
    }
}

OcclusionTag OcclusionSpec::tag() const {
    switch (kind) {
        case Kind::Mask: return {OcclusionTag::Kind::Mask, 0};
        case Kind::Glass: return {OcclusionTag::Kind::Glass, 0};
        case Kind::Random: return {OcclusionTag::Kind::Random, static_cast<int>(std::lround(ratio.value_or(0) * 100))};
    }
    return {};
}

std::optional<LandmarkSet> DirectoryLandmarkSource::landmarks(const AnnotationRecord& record) const {
    const auto path = dir_ / (record.sample_id + ".txt");
    if (!std::filesystem::exists(path)) return std::nullopt;
    return parse_landmarks(path);
}

DatasetManifest synthesize_database(const DatasetManifest& manifest, const OcclusionSpec& spec,
                                    const LandmarkSource& landmark_source, const std::vector<OcclusionAsset>& assets,
                                    const SynthesisPaths& paths) {
    spec.validate();
    const bool accessory = spec.kind != OcclusionSpec::Kind::Random;
    if (accessory) {
        if (assets.empty()) throw Error(ErrorCode::MissingFile, "no occlusion assets available");
        if (spec.asset_index >= static_cast<int>(assets.size())) {
            throw Error(ErrorCode::InvalidConfig, "asset index " + std::to_string(spec.asset_index) + " out of range");
        }
    }
    DatasetManifest out;
    out.source_note = manifest.source_note.empty() ? to_string(spec.tag()) : manifest.source_note + " / " + to_string(spec.tag());
    for (const auto& record : manifest.records) {
        const auto frames_dir = record.frames_dir.is_absolute() ? record.frames_dir : paths.data_root / record.frames_dir;
        const auto files = list_frames(frames_dir);
        const auto lms = landmark_source.landmarks(record);
        if (accessory && (!lms || lms->frames.size() < files.size())) {
            throw Error(ErrorCode::MissingLandmarks, record.sample_id);
        }
        Rng rng(stable_hash(spec.seed, record.sample_id));
        const auto rel_dir = std::filesystem::path("frames") / record.sample_id;
        const auto target_dir = paths.output_dir / rel_dir;
        std::filesystem::create_directories(target_dir);

        std::optional<Rect> block;
        const OcclusionAsset* asset = nullptr;
        if (accessory) {
            const auto index = spec.asset_index >= 0 ? static_cast<std::size_t>(spec.asset_index)
                                                     : static_cast<std::size_t>(rng.below(assets.size()));
            asset = &assets[index];
        }
        for (std::size_t i = 0; i < files.size(); ++i) {
            const Image frame = read_image(files[i]);
            Image occluded;
            if (accessory) {
                occluded = overlay_accessory(frame, lms->frames[i], *asset);
            } else {
                if (!block) {
                    const Rect face_box = (lms && !lms->frames.empty())
                                              ? landmark_bounds(lms->frames.front(), frame.height, frame.width)
                                              : Rect{0, 0, frame.width, frame.height};
                    block = choose_random_block(face_box, *spec.ratio, rng);
                }
                occluded = fill_block(frame, *block);
            }
            write_image(occluded, target_dir / (files[i].stem().string() + ".png"));
        }
        AnnotationRecord derived = record;
        derived.frames_dir = rel_dir;
        derived.occlusion_tag = spec.tag();
        out.records.push_back(std::move(derived));
    }
    write_manifest(out, paths.output_dir / "manifest.tsv");
    return out;
}

}  // namespace rrrn
