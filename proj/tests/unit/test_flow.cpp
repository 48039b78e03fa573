#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rrrn/error.hpp"
#include "rrrn/flow.hpp"
#include "rrrn/random.hpp"

using namespace rrrn;

namespace {

// Smooth texture sampled at (x - dx, y - dy): a rigid translation by (dx, dy).
Grid texture(int size, double dx, double dy) {
    Grid g(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double X = x - dx, Y = y - dy;
            g.at(y, x) = static_cast<float>(128.0 + 40.0 * std::sin(0.45 * X + 0.2 * Y) +
                                            30.0 * std::cos(0.3 * Y - 0.15 * X + 1.0) +
                                            20.0 * std::sin(0.6 * X * 0.5 + 0.55 * Y + 2.0));
        }
    }
    return g;
}

struct InteriorMean {
    double u = 0.0, v = 0.0;
};

InteriorMean interior_mean(const FlowField& f, int margin) {
    InteriorMean m;
    int n = 0;
    for (int y = margin; y < f.height() - margin; ++y) {
        for (int x = margin; x < f.width() - margin; ++x) {
            m.u += f.u.at(y, x);
            m.v += f.v.at(y, x);
            ++n;
        }
    }
    m.u /= n;
    m.v /= n;
    return m;
}

Grid random_grid(Rng& rng, int h, int w) {
    Grid g(h, w);
    for (auto& x : g.data) x = static_cast<float>(rng.normal());
    return g;
}

}  // namespace

TEST(TvL1, IdenticalFramesGiveZeroFlow) {
    const Grid a = texture(48, 0, 0);
    const FlowField f = compute_flow(a, a, TvL1FlowEstimator{});
    ASSERT_EQ(f.u.height, 48);
    ASSERT_EQ(f.v.width, 48);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
        EXPECT_LT(std::abs(f.u.data[i]), 0.05f);
        EXPECT_LT(std::abs(f.v.data[i]), 0.05f);
    }
}

TEST(TvL1, OnePixelRightShift) {
    const FlowField f = compute_flow(texture(64, 0, 0), texture(64, 1, 0), TvL1FlowEstimator{});
    const auto m = interior_mean(f, 8);
    EXPECT_NEAR(m.u, 1.0, 0.1);
    EXPECT_NEAR(m.v, 0.0, 0.1);
}

TEST(TvL1, OnePixelDownShift) {
    const FlowField f = compute_flow(texture(64, 0, 0), texture(64, 0, 1), TvL1FlowEstimator{});
    const auto m = interior_mean(f, 8);
    EXPECT_NEAR(m.u, 0.0, 0.1);
    EXPECT_NEAR(m.v, 1.0, 0.1);
}

TEST(TvL1, SizeMismatchRaises) {
    try {
        compute_flow(Grid(16, 16), Grid(16, 17), TvL1FlowEstimator{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SizeMismatch);
    }
}

TEST(CropWindow, SizesOn224) {
    const RegionCropSpec spec;
    const int expected[] = {224, 168, 168, 168, 201, 190};
    for (int k = 0; k < spec.region_count(); ++k) {
        const auto w = crop_window(spec.regions[static_cast<std::size_t>(k)], 224, 224);
        // floor(ratio * 224) computed with exact integer arithmetic on the ratio's percent value
        const int pct = static_cast<int>(std::lround(spec.regions[static_cast<std::size_t>(k)].ratio * 100));
        EXPECT_EQ(w.height, pct * 224 / 100);
        EXPECT_EQ(w.height, expected[k]);
        EXPECT_EQ(w.width, expected[k]);
        EXPECT_GE(w.top, 0);
        EXPECT_GE(w.left, 0);
        EXPECT_LE(w.top + w.height, 224);
        EXPECT_LE(w.left + w.width, 224);
    }
}

TEST(CropWindow, Anchors) {
    EXPECT_EQ(crop_window({CropAnchor::TopLeft, 0.75}, 100, 100), (CropWindow{0, 0, 75, 75}));
    EXPECT_EQ(crop_window({CropAnchor::TopRight, 0.75}, 100, 100), (CropWindow{0, 25, 75, 75}));
    EXPECT_EQ(crop_window({CropAnchor::CenterDown, 0.75}, 100, 100), (CropWindow{25, 12, 75, 75}));
    EXPECT_EQ(crop_window({CropAnchor::Center, 0.9}, 100, 100), (CropWindow{5, 5, 90, 90}));
}

TEST(CropRegions, FullRegionIsIdentityAtOutputSize) {
    Rng rng(3);
    FlowField f{random_grid(rng, 32, 32), random_grid(rng, 32, 32)};
    RegionCropSpec spec;
    spec.output_size = 32;
    const auto s = crop_regions(f, spec);
    ASSERT_EQ(s.region_count(), 6);
    EXPECT_EQ(s.horizontal[0], f.u);
    EXPECT_EQ(s.vertical[0], f.v);
    for (int k = 0; k < 6; ++k) {
        EXPECT_EQ(s.vertical[static_cast<std::size_t>(k)].height, 32);
        EXPECT_EQ(s.horizontal[static_cast<std::size_t>(k)].width, 32);
    }
}

TEST(CropRegions, TopLeftOriginPixelPreserved) {
    Rng rng(4);
    FlowField f{random_grid(rng, 40, 40), random_grid(rng, 40, 40)};
    RegionCropSpec spec;
    spec.output_size = 30;  // 0.75 * 40: the top-left crop is not resampled
    const auto s = crop_regions(f, spec);
    EXPECT_EQ(s.horizontal[1].at(0, 0), f.u.at(0, 0));
    EXPECT_EQ(s.vertical[1].at(0, 0), f.v.at(0, 0));
    for (int y = 0; y < 30; ++y) {
        for (int x = 0; x < 30; ++x) ASSERT_EQ(s.horizontal[1].at(y, x), f.u.at(y, x));
    }
}

TEST(CropRegions, LinearInTheFlow) {
    Rng rng(5);
    FlowField a{random_grid(rng, 36, 36), random_grid(rng, 36, 36)};
    FlowField b{random_grid(rng, 36, 36), random_grid(rng, 36, 36)};
    FlowField sum = a;
    for (std::size_t i = 0; i < sum.u.size(); ++i) {
        sum.u.data[i] = a.u.data[i] + 2.0f * b.u.data[i];
        sum.v.data[i] = a.v.data[i] + 2.0f * b.v.data[i];
    }
    RegionCropSpec spec;
    spec.output_size = 16;
    const auto sa = crop_regions(a, spec), sb = crop_regions(b, spec), ss = crop_regions(sum, spec);
    for (int k = 0; k < 6; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        for (std::size_t i = 0; i < ss.vertical[kk].size(); ++i) {
            EXPECT_NEAR(ss.vertical[kk].data[i], sa.vertical[kk].data[i] + 2.0f * sb.vertical[kk].data[i], 1e-4);
            EXPECT_NEAR(ss.horizontal[kk].data[i], sa.horizontal[kk].data[i] + 2.0f * sb.horizontal[kk].data[i],
                        1e-4);
        }
    }
}

TEST(CropRegions, TooSmallFlowRaises) {
    FlowField f{Grid(4, 4), Grid(4, 4)};
    try {
        crop_regions(f, RegionCropSpec{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::FlowTooSmall);
    }
}

TEST(RegionStackCodec, RoundTripIsBitExact) {
    Rng rng(6);
    RegionStack s;
    for (int k = 0; k < 6; ++k) {
        s.vertical.push_back(random_grid(rng, 12, 12));
        s.horizontal.push_back(random_grid(rng, 12, 12));
    }
    const auto bytes = encode_region_stack(s);
    EXPECT_EQ(bytes.size(), 16u + 12u * 12u * 4u * 12u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "RRN1");
    EXPECT_EQ(decode_region_stack(bytes), s);

    const auto path = std::filesystem::temp_directory_path() / "rrrn_stack_test.rrn";
    write_region_stack(s, path);
    EXPECT_EQ(read_region_stack(path), s);
    std::filesystem::remove(path);
}

TEST(RegionStackCodec, TruncatedRaises) {
    Rng rng(7);
    RegionStack s;
    s.vertical.push_back(random_grid(rng, 8, 8));
    s.horizontal.push_back(random_grid(rng, 8, 8));
    auto bytes = encode_region_stack(s);
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(decode_region_stack(bytes), Error);
}

TEST(Normalization, StandardizesAndIsIdempotentAfterRefit) {
    Rng rng(8);
    RegionStack s;
    for (int k = 0; k < 6; ++k) {
        Grid v = random_grid(rng, 8, 8), h = random_grid(rng, 8, 8);
        for (auto& x : v.data) x = 3.0f * x + 2.0f;
        for (auto& x : h.data) x = 0.5f * x - 1.0f;
        s.vertical.push_back(v);
        s.horizontal.push_back(h);
    }
    const auto n = fit_normalization({&s});
    n.apply(s);
    const auto again = fit_normalization({&s});
    EXPECT_NEAR(again.vertical_mean, 0.0f, 1e-5);
    EXPECT_NEAR(again.vertical_std, 1.0f, 1e-5);
    EXPECT_NEAR(again.horizontal_mean, 0.0f, 1e-5);
    EXPECT_NEAR(again.horizontal_std, 1.0f, 1e-5);
}
