#include "rrrn/flow.hpp"

#include <algorithm>
#include <cmath>

#include "rrrn/binary_io.hpp"
#include "rrrn/error.hpp"

namespace rrrn {

namespace {

constexpr int kMinPyramidSize = 8;

Grid gaussian_blur(const Grid& in, double sigma) {
    if (sigma <= 0.0) return in;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= sum;

    Grid tmp(in.height, in.width), out(in.height, in.width);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int xx = std::clamp(x + i, 0, in.width - 1);
                acc += kernel[i + radius] * in.at(y, xx);
            }
            tmp.at(y, x) = static_cast<float>(acc);
        }
    }
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = std::clamp(y + i, 0, in.height - 1);
                acc += kernel[i + radius] * tmp.at(yy, x);
            }
            out.at(y, x) = static_cast<float>(acc);
        }
    }
    return out;
}

Grid zoom_out(const Grid& in, int out_h, int out_w, double zoom) {
    const double sigma = 0.6 * std::sqrt(1.0 / (zoom * zoom) - 1.0);
    return resize_bilinear(gaussian_blur(in, sigma), out_h, out_w);
}

void centered_gradient(const Grid& f, Grid& fx, Grid& fy) {
    fx = Grid(f.height, f.width);
    fy = Grid(f.height, f.width);
    for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
            const int xm = std::max(x - 1, 0), xp = std::min(x + 1, f.width - 1);
            const int ym = std::max(y - 1, 0), yp = std::min(y + 1, f.height - 1);
            fx.at(y, x) = (f.at(y, xp) - f.at(y, xm)) / static_cast<float>(std::max(xp - xm, 1));
            fy.at(y, x) = (f.at(yp, x) - f.at(ym, x)) / static_cast<float>(std::max(yp - ym, 1));
        }
    }
}

void forward_gradient(const Grid& f, Grid& fx, Grid& fy) {
    for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
            fx.at(y, x) = x + 1 < f.width ? f.at(y, x + 1) - f.at(y, x) : 0.0f;
            fy.at(y, x) = y + 1 < f.height ? f.at(y + 1, x) - f.at(y, x) : 0.0f;
        }
    }
}

// Adjoint of forward_gradient (negated).
void divergence(const Grid& p1, const Grid& p2, Grid& div) {
    const int h = p1.height, w = p1.width;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float dx, dy;
            if (w == 1) dx = 0.0f;
            else if (x == 0) dx = p1.at(y, x);
            else if (x == w - 1) dx = -p1.at(y, x - 1);
            else dx = p1.at(y, x) - p1.at(y, x - 1);
            if (h == 1) dy = 0.0f;
            else if (y == 0) dy = p2.at(y, x);
            else if (y == h - 1) dy = -p2.at(y - 1, x);
            else dy = p2.at(y, x) - p2.at(y - 1, x);
            div.at(y, x) = dx + dy;
        }
    }
}

Grid warp(const Grid& f, const Grid& u, const Grid& v) {
    Grid out(f.height, f.width);
    for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
            out.at(y, x) = sample_bilinear(f, y + v.at(y, x), x + u.at(y, x));
        }
    }
    return out;
}

void solve_level(const Grid& i0, const Grid& i1, Grid& u1, Grid& u2, const TvL1Options& o) {
    const int h = i0.height, w = i0.width;
    const std::size_t n = i0.size();
    Grid i1x, i1y;
    centered_gradient(i1, i1x, i1y);

    Grid p11(h, w), p12(h, w), p21(h, w), p22(h, w);
    Grid div1(h, w), div2(h, w), u1x(h, w), u1y(h, w), u2x(h, w), u2y(h, w);
    std::vector<float> v1(n), v2(n), rho_c(n), grad(n);
    const float lt = static_cast<float>(o.lambda * o.theta);
    const float taut = static_cast<float>(o.tau / o.theta);
    const float theta = static_cast<float>(o.theta);

    for (int w_i = 0; w_i < o.warps; ++w_i) {
        const Grid i1w = warp(i1, u1, u2);
        const Grid i1wx = warp(i1x, u1, u2);
        const Grid i1wy = warp(i1y, u1, u2);
        for (std::size_t k = 0; k < n; ++k) {
            grad[k] = i1wx.data[k] * i1wx.data[k] + i1wy.data[k] * i1wy.data[k];
            rho_c[k] = i1w.data[k] - i1wx.data[k] * u1.data[k] - i1wy.data[k] * u2.data[k] - i0.data[k];
        }
        double error = 1e30;
        for (int iter = 0; iter < o.max_iterations && error > o.epsilon * o.epsilon; ++iter) {
            for (std::size_t k = 0; k < n; ++k) {
                const float gx = i1wx.data[k], gy = i1wy.data[k];
                const float rho = rho_c[k] + gx * u1.data[k] + gy * u2.data[k];
                float d1 = 0.0f, d2 = 0.0f;
                if (rho < -lt * grad[k]) {
                    d1 = lt * gx;
                    d2 = lt * gy;
                } else if (rho > lt * grad[k]) {
                    d1 = -lt * gx;
                    d2 = -lt * gy;
                } else if (grad[k] > 1e-10f) {
                    const float fi = -rho / grad[k];
                    d1 = fi * gx;
                    d2 = fi * gy;
                }
                v1[k] = u1.data[k] + d1;
                v2[k] = u2.data[k] + d2;
            }
            divergence(p11, p12, div1);
            divergence(p21, p22, div2);
            error = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const float a = v1[k] + theta * div1.data[k];
                const float b = v2[k] + theta * div2.data[k];
                error += static_cast<double>(a - u1.data[k]) * (a - u1.data[k]) +
                         static_cast<double>(b - u2.data[k]) * (b - u2.data[k]);
                u1.data[k] = a;
                u2.data[k] = b;
            }
            error /= static_cast<double>(n);
            forward_gradient(u1, u1x, u1y);
            forward_gradient(u2, u2x, u2y);
            for (std::size_t k = 0; k < n; ++k) {
                const float g1 = 1.0f + taut * std::hypot(u1x.data[k], u1y.data[k]);
                const float g2 = 1.0f + taut * std::hypot(u2x.data[k], u2y.data[k]);
                p11.data[k] = (p11.data[k] + taut * u1x.data[k]) / g1;
                p12.data[k] = (p12.data[k] + taut * u1y.data[k]) / g1;
                p21.data[k] = (p21.data[k] + taut * u2x.data[k]) / g2;
                p22.data[k] = (p22.data[k] + taut * u2y.data[k]) / g2;
            }
        }
    }
}

}  // namespace

FlowField TvL1FlowEstimator::estimate(const Grid& onset, const Grid& apex) const {
    if (onset.height != apex.height || onset.width != apex.width) {
        throw Error(ErrorCode::SizeMismatch, "onset and apex frames differ in size");
    }
    const auto& o = options_;
    // Joint rescale to [0, 255] so lambda means the same for every input.
    float lo = 1e30f, hi = -1e30f;
    for (float x : onset.data) lo = std::min(lo, x), hi = std::max(hi, x);
    for (float x : apex.data) lo = std::min(lo, x), hi = std::max(hi, x);
    auto normalize = [&](const Grid& g) {
        Grid out = g;
        const float range = hi - lo;
        for (auto& x : out.data) x = range > 0.0f ? 255.0f * (x - lo) / range : 0.0f;
        return gaussian_blur(out, o.presmooth_sigma);
    };

    std::vector<Grid> pyr0{normalize(onset)}, pyr1{normalize(apex)};
    for (int s = 1; s < o.scales; ++s) {
        const int nh = static_cast<int>(pyr0.back().height * o.zoom);
        const int nw = static_cast<int>(pyr0.back().width * o.zoom);
        if (nh < kMinPyramidSize || nw < kMinPyramidSize) break;
        pyr0.push_back(zoom_out(pyr0.back(), nh, nw, o.zoom));
        pyr1.push_back(zoom_out(pyr1.back(), nh, nw, o.zoom));
    }

    const int levels = static_cast<int>(pyr0.size());
    Grid u(pyr0.back().height, pyr0.back().width), v(pyr0.back().height, pyr0.back().width);
    for (int s = levels - 1; s >= 0; --s) {
        solve_level(pyr0[s], pyr1[s], u, v, o);
        if (s > 0) {
            const int nh = pyr0[s - 1].height, nw = pyr0[s - 1].width;
            const float sx = static_cast<float>(nw) / u.width;
            const float sy = static_cast<float>(nh) / u.height;
            u = resize_bilinear(u, nh, nw);
            v = resize_bilinear(v, nh, nw);
            for (auto& x : u.data) x *= sx;
            for (auto& x : v.data) x *= sy;
        }
    }
    for (std::size_t k = 0; k < u.size(); ++k) {
        if (!std::isfinite(u.data[k]) || !std::isfinite(v.data[k])) {
            throw Error(ErrorCode::EstimatorFailure, "TV-L1 produced non-finite flow");
        }
    }
    return {std::move(u), std::move(v)};
}

FlowField compute_flow(const Grid& onset, const Grid& apex, const FlowEstimator& estimator) {
    if (onset.height != apex.height || onset.width != apex.width) {
        throw Error(ErrorCode::SizeMismatch, "onset " + std::to_string(onset.height) + "x" +
                                                 std::to_string(onset.width) + " vs apex " +
                                                 std::to_string(apex.height) + "x" + std::to_string(apex.width));
    }
    FlowField flow;
    try {
        flow = estimator.estimate(onset, apex);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::EstimatorFailure) throw;
        throw Error(ErrorCode::EstimatorFailure, e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorCode::EstimatorFailure, e.what());
    }
    if (flow.u.height != onset.height || flow.u.width != onset.width || flow.v.height != onset.height ||
        flow.v.width != onset.width) {
        throw Error(ErrorCode::EstimatorFailure, "estimator returned flow of the wrong size");
    }
    return flow;
}

FlowField compute_flow(const Image& onset, const Image& apex, const FlowEstimator& estimator) {
    return compute_flow(to_gray(onset), to_gray(apex), estimator);
}

void RegionCropSpec::validate() const {
    if (regions.empty()) throw Error(ErrorCode::InvalidConfig, "region spec has no regions");
    if (output_size < 1) throw Error(ErrorCode::InvalidConfig, "region output size must be positive");
    for (const auto& r : regions) {
        if (!(r.ratio > 0.0 && r.ratio <= 1.0)) throw Error(ErrorCode::InvalidConfig, "crop ratio must be in (0, 1]");
    }
}

CropWindow crop_window(const RegionCrop& region, int height, int width) {
    // The epsilon keeps exact products such as 0.85 * 200 from flooring down.
    const int h = std::max(1, static_cast<int>(std::floor(region.ratio * height + 1e-9)));
    const int w = std::max(1, static_cast<int>(std::floor(region.ratio * width + 1e-9)));
    switch (region.anchor) {
        case CropAnchor::Full:
        case CropAnchor::TopLeft: return {0, 0, h, w};
        case CropAnchor::TopRight: return {0, width - w, h, w};
        case CropAnchor::CenterDown: return {height - h, (width - w) / 2, h, w};
        case CropAnchor::Center: return {(height - h) / 2, (width - w) / 2, h, w};
    }
    return {0, 0, h, w};
}

void RegionStack::validate() const {
    if (vertical.size() != horizontal.size() || vertical.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "region stack needs equal, non-empty vertical/horizontal lists");
    }
    const int s = vertical.front().height;
    auto check = [s](const Grid& g) {
        if (g.height != s || g.width != s || g.data.size() != static_cast<std::size_t>(s) * s) {
            throw Error(ErrorCode::ShapeMismatch, "region grids must all be S x S");
        }
    };
    for (const auto& g : vertical) check(g);
    for (const auto& g : horizontal) check(g);
}

RegionStack crop_regions(const FlowField& flow, const RegionCropSpec& spec) {
    spec.validate();
    if (flow.height() < 8 || flow.width() < 8) {
        throw Error(ErrorCode::FlowTooSmall, "flow must be at least 8x8");
    }
    if (flow.v.height != flow.height() || flow.v.width != flow.width()) {
        throw Error(ErrorCode::ShapeMismatch, "u and v differ in size");
    }
    RegionStack stack;
    const int s = spec.output_size;
    for (const auto& region : spec.regions) {
        const CropWindow win = crop_window(region, flow.height(), flow.width());
        stack.vertical.push_back(resize_bilinear(crop(flow.v, win.top, win.left, win.height, win.width), s, s));
        stack.horizontal.push_back(resize_bilinear(crop(flow.u, win.top, win.left, win.height, win.width), s, s));
    }
    return stack;
}

void FlowNormalization::apply(RegionStack& stack) const {
    for (auto& g : stack.vertical) {
        for (auto& x : g.data) x = (x - vertical_mean) / vertical_std;
    }
    for (auto& g : stack.horizontal) {
        for (auto& x : g.data) x = (x - horizontal_mean) / horizontal_std;
    }
}

FlowNormalization fit_normalization(const std::vector<const RegionStack*>& stacks) {
    double vs = 0, vss = 0, hs = 0, hss = 0;
    std::size_t vn = 0, hn = 0;
    for (const auto* st : stacks) {
        for (const auto& g : st->vertical) {
            for (float x : g.data) vs += x, vss += static_cast<double>(x) * x, ++vn;
        }
        for (const auto& g : st->horizontal) {
            for (float x : g.data) hs += x, hss += static_cast<double>(x) * x, ++hn;
        }
    }
    FlowNormalization n;
    auto finish = [](double sum, double sq, std::size_t count, float& mean, float& stddev) {
        if (count == 0) return;
        const double m = sum / count;
        const double var = std::max(0.0, sq / count - m * m);
        mean = static_cast<float>(m);
        stddev = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
    };
    finish(vs, vss, vn, n.vertical_mean, n.vertical_std);
    finish(hs, hss, hn, n.horizontal_mean, n.horizontal_std);
    return n;
}

std::vector<std::uint8_t> encode_region_stack(const RegionStack& stack) {
    stack.validate();
    binary::Writer w;
    w.raw("RRN1");
    w.u32(static_cast<std::uint32_t>(stack.size()));
    w.u32(static_cast<std::uint32_t>(stack.region_count()));
    w.u32(0);
    for (const auto& g : stack.vertical) {
        for (float x : g.data) w.f32(x);
    }
    for (const auto& g : stack.horizontal) {
        for (float x : g.data) w.f32(x);
    }
    return w.take();
}

RegionStack decode_region_stack(const std::vector<std::uint8_t>& bytes) {
    binary::Reader r(bytes);
    if (r.raw(4) != "RRN1") throw Error(ErrorCode::IoError, "bad region-stack magic");
    const int s = static_cast<int>(r.u32());
    const int regions = static_cast<int>(r.u32());
    r.u32();
    if (s < 1 || regions < 1) throw Error(ErrorCode::IoError, "bad region-stack header");
    RegionStack stack;
    for (auto* list : {&stack.vertical, &stack.horizontal}) {
        for (int k = 0; k < regions; ++k) {
            Grid g(s, s);
            for (auto& x : g.data) x = r.f32();
            list->push_back(std::move(g));
        }
    }
    if (!r.at_end()) throw Error(ErrorCode::IoError, "trailing bytes after region stack");
    return stack;
}

void write_region_stack(const RegionStack& stack, const std::filesystem::path& path) {
    binary::write_file(path, encode_region_stack(stack));
}

RegionStack read_region_stack(const std::filesystem::path& path) {
    return decode_region_stack(binary::read_file(path));
}

}  // namespace rrrn
