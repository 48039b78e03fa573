#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "rrrn/augment.hpp"
#include "rrrn/error.hpp"
#include "rrrn/random.hpp"

using namespace rrrn;

namespace {

// Integer-only oracle for round-half-up of a + c/10 * d, d >= 0.
std::set<int> positions_oracle(int onset, int apex, int offset) {
    std::set<int> s{apex};
    for (int c = 6; c <= 9; ++c) s.insert(onset + (c * (apex - onset) + 5) / 10);
    for (int c = 1; c <= 5; ++c) s.insert(apex + (c * (offset - apex) + 5) / 10);
    return s;
}

std::vector<Image> numbered_frames(int n, int size = 12) {
    std::vector<Image> frames;
    for (int i = 0; i < n; ++i) {
        Image img(size, size, 1);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) img.at(y, x) = static_cast<std::uint8_t>((i * 7 + x * 13 + y * 5) % 256);
        }
        frames.push_back(img);
    }
    return frames;
}

AnnotationRecord record(int on, int ap, int off) {
    AnnotationRecord r;
    r.sample_id = "r";
    r.onset_idx = on;
    r.apex_idx = ap;
    r.offset_idx = off;
    return r;
}

}  // namespace

TEST(EnrichApex, WorkedExample) {
    EXPECT_EQ(enrich_apex_positions(0, 10, 20), (std::vector<int>{6, 7, 8, 9, 10, 11, 12, 13, 14, 15}));
}

TEST(EnrichApex, Degenerate) { EXPECT_EQ(enrich_apex_positions(5, 5, 5), (std::vector<int>{5})); }

TEST(EnrichApex, BadOrderingRaises) {
    try {
        enrich_apex_positions(3, 2, 9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidOrdering);
    }
}

TEST(EnrichApex, MatchesIntegerOracle) {
    Rng rng(21);
    for (int t = 0; t < 500; ++t) {
        const int on = static_cast<int>(rng.below(50));
        const int ap = on + static_cast<int>(rng.below(40));
        const int off = ap + static_cast<int>(rng.below(40));
        const auto got = enrich_apex_positions(on, ap, off);
        const auto want = positions_oracle(on, ap, off);
        EXPECT_EQ(got, std::vector<int>(want.begin(), want.end())) << on << ' ' << ap << ' ' << off;
        EXPECT_TRUE(std::is_sorted(got.begin(), got.end()));
        EXPECT_GE(got.front(), on);
        EXPECT_LE(got.back(), off);
        if (ap - on >= 10 && off - ap >= 10) EXPECT_EQ(got.size(), 10u);
    }
}

TEST(RotationAngles, SevenSymmetricAngles) {
    const auto a = rotation_angles();
    ASSERT_EQ(a.size(), 7u);
    EXPECT_EQ(std::accumulate(a.begin(), a.end(), 0.0), 0.0);
    EXPECT_EQ(a.back() - a.front(), 30.0);
    EXPECT_NE(std::find(a.begin(), a.end(), 0.0), a.end());
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(a[i] - a[i - 1], 5.0);
}

TEST(AugmentSample, SeventyPairs) {
    const InMemoryFrameSequence seq(numbered_frames(40));
    const auto pairs = augment_sample(record(2, 14, 30), seq);
    ASSERT_EQ(pairs.size(), 70u);
    std::set<std::pair<int, double>> combos;
    for (const auto& p : pairs) combos.insert({p.apex_index, p.angle_deg});
    EXPECT_EQ(combos.size(), 70u);
}

TEST(AugmentSample, ZeroAngleLeavesFramesUnmodified) {
    const auto frames = numbered_frames(40);
    const InMemoryFrameSequence seq(frames);
    for (const auto& p : augment_sample(record(2, 14, 30), seq)) {
        if (p.angle_deg != 0.0) continue;
        EXPECT_EQ(p.onset, frames[2]);
        EXPECT_EQ(p.apex, frames[static_cast<std::size_t>(p.apex_index)]);
    }
}

TEST(AugmentSample, DegenerateGivesSevenPairs) {
    const InMemoryFrameSequence seq(numbered_frames(10));
    EXPECT_EQ(augment_sample(record(4, 4, 4), seq).size(), 7u);
}

TEST(AugmentSample, OutOfRangeFrameRaises) {
    const InMemoryFrameSequence seq(numbered_frames(10));
    try {
        augment_sample(record(0, 5, 12), seq);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::FrameIndexOutOfRange);
    }
}

TEST(AugmentSample, BothFramesShareTheRotation) {
    // With identical onset and apex content, the rotated pair stays identical.
    std::vector<Image> frames(20, numbered_frames(1, 16)[0]);
    const InMemoryFrameSequence seq(frames);
    for (const auto& p : augment_sample(record(0, 10, 19), seq)) EXPECT_EQ(p.onset, p.apex);
}

TEST(RotateGrid, QuarterTurnsAreExactPermutations) {
    Grid g(9, 9);
    for (int i = 0; i < 81; ++i) g.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
    const Grid back = rotate_grid(rotate_grid(g, 90.0), -90.0);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(back.data[i], g.data[i], 1e-3);
    EXPECT_EQ(rotate_grid(g, 0.0), g);
}

TEST(RotateGrid, SmallRotationRoundTripInInterior) {
    Grid g(32, 32);
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) g.at(y, x) = static_cast<float>(std::sin(0.3 * x) + std::cos(0.25 * y));
    }
    const Grid back = rotate_grid(rotate_grid(g, 15.0), -15.0);
    for (int y = 10; y < 22; ++y) {
        for (int x = 10; x < 22; ++x) EXPECT_NEAR(back.at(y, x), g.at(y, x), 0.05);
    }
}
