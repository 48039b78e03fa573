#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "rrrn/error.hpp"
#include "rrrn/losses.hpp"
#include "rrrn/metrics.hpp"
#include "rrrn/random.hpp"

using namespace rrrn;

namespace {

struct BruteMetrics {
    double war, uar, f1, wf1;
};

// Expands the matrix into individual (truth, predicted) samples and counts.
BruteMetrics brute_force(const ConfusionMatrix& cm) {
    std::vector<std::pair<int, int>> samples;
    for (int t = 0; t < cm.classes(); ++t) {
        for (int p = 0; p < cm.classes(); ++p) {
            for (long long i = 0; i < cm.at(t, p); ++i) samples.emplace_back(t, p);
        }
    }
    const double n = static_cast<double>(samples.size());
    double correct = 0, uar = 0, f1 = 0, wf1 = 0;
    int present = 0;
    for (int c = 0; c < cm.classes(); ++c) {
        double tp = 0, fp = 0, fn = 0, nc = 0;
        for (auto [t, p] : samples) {
            if (t == c) ++nc;
            if (t == c && p == c) ++tp;
            if (t != c && p == c) ++fp;
            if (t == c && p != c) ++fn;
        }
        correct += tp;
        if (nc == 0) continue;
        ++present;
        const double f = 2 * tp / (2 * tp + fp + fn);
        uar += tp / nc;
        f1 += f;
        wf1 += nc / n * f;
    }
    return {correct / n, uar / present, f1 / present, wf1};
}

ConfusionMatrix random_cm(Rng& rng, int classes) {
    ConfusionMatrix cm(classes);
    const int cells = static_cast<int>(rng.below(40)) + 1;
    for (int i = 0; i < cells; ++i) {
        cm.add(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))),
               static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))),
               static_cast<long long>(rng.below(9)) + 1);
    }
    return cm;
}

}  // namespace

TEST(CrossEntropy, UniformLogits) {
    const std::vector<double> z(5, 0.3);
    EXPECT_NEAR(cross_entropy(z, 2), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, Saturation) {
    const std::vector<double> z = {0, 0, 1000, 0, 0};
    EXPECT_NEAR(cross_entropy(z, 2), 0.0, 1e-12);
    EXPECT_TRUE(std::isfinite(cross_entropy(z, 0)));
}

TEST(CrossEntropy, ScalarOracle) {
    const std::vector<double> z = {1, 0, 0, 0, 0};
    const long double lse = std::log(std::exp(1.0L) + 4.0L);
    EXPECT_NEAR(cross_entropy(z, 0), static_cast<double>(lse - 1.0L), 1e-9);
}

TEST(CrossEntropy, BatchMeanAndLabelRange) {
    const std::vector<std::vector<double>> z = {{1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}};
    const std::vector<int> y = {4, 1};
    EXPECT_NEAR(cross_entropy(z, y), 0.5 * (cross_entropy(z[0], 4) + cross_entropy(z[1], 1)), 1e-15);
    try {
        cross_entropy(z[0], 5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
    }
}

TEST(CrossEntropy, ShiftInvarianceAndGradient) {
    Rng rng(31);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> z(5);
        for (auto& x : z) x = rng.uniform(-10, 10);
        const int y = static_cast<int>(rng.below(5));
        auto shifted = z;
        const double s = rng.uniform(-500, 500);
        for (auto& x : shifted) x += s;
        EXPECT_NEAR(cross_entropy(z, y), cross_entropy(shifted, y), 1e-9);
        const auto g = cross_entropy_grad(z, y);
        double sum = 0.0;
        for (int k = 0; k < 5; ++k) {
            auto up = z, down = z;
            up[static_cast<std::size_t>(k)] += 1e-6;
            down[static_cast<std::size_t>(k)] -= 1e-6;
            EXPECT_NEAR(g[static_cast<std::size_t>(k)], (cross_entropy(up, y) - cross_entropy(down, y)) / 2e-6, 1e-6);
            sum += g[static_cast<std::size_t>(k)];
        }
        EXPECT_NEAR(sum, 0.0, 1e-12);
    }
}

TEST(RbLoss, WorkedExamples) {
    EXPECT_EQ(rb_loss(std::vector<double>{0.3, 0.5, 0.2, 0.2, 0.2, 0.2}, 0.02), 0.0);
    EXPECT_NEAR(rb_loss(std::vector<double>{0.4, 0.4, 0.1, 0.2, 0.3, 0.2}, 0.02), 0.02, 1e-15);
    EXPECT_NEAR(rb_loss(std::vector<double>{0.30, 0.31, 0.2, 0.25, 0.1, 0.3}, 0.02), 0.01, 1e-9);
}

TEST(RbLoss, NonNegativeAndSubgradient) {
    Rng rng(32);
    for (int t = 0; t < 300; ++t) {
        std::vector<double> a(6);
        for (auto& x : a) x = rng.uniform(0.01, 0.99);
        const double l = rb_loss(a, 0.02);
        EXPECT_GE(l, 0.0);
        const auto g = rb_loss_grad(a, 0.02);
        if (l == 0.0) {
            for (double x : g) EXPECT_EQ(x, 0.0);
        } else {
            EXPECT_EQ(g[0], 1.0);
            EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 0.0, 1e-15);
        }
    }
}

TEST(CorLoss, WorkedExamples) {
    // Region 0 gets P(y) = 0.9 and the main head 0.8 via two-class logits.
    Matrix region(2, 2);
    region.at(0, 0) = std::log(0.9);
    region.at(0, 1) = std::log(0.1);
    region.at(1, 0) = std::log(0.5);
    region.at(1, 1) = std::log(0.5);
    const std::vector<double> logits = {std::log(0.8), std::log(0.2)};
    EXPECT_NEAR(cor_loss(region, logits, 0), std::log(0.9) - std::log(0.8), 1e-9);
    EXPECT_NEAR(cor_loss(region, logits, 0), 0.11778303565638346, 1e-9);

    Matrix equal(3, 2);
    for (int k = 0; k < 3; ++k) equal.at(k, 0) = std::log(0.8), equal.at(k, 1) = std::log(0.2);
    EXPECT_EQ(cor_loss(equal, logits, 0), 0.0);

    Matrix weaker(3, 2);
    for (int k = 0; k < 3; ++k) weaker.at(k, 0) = std::log(0.3 + 0.1 * k), weaker.at(k, 1) = std::log(0.7 - 0.1 * k);
    EXPECT_EQ(cor_loss(weaker, logits, 0), 0.0);
}

TEST(CorLoss, ShiftInvarianceAndGradient) {
    Rng rng(33);
    for (int t = 0; t < 100; ++t) {
        Matrix r(6, 5);
        std::vector<double> z(5);
        for (auto& x : r.data) x = rng.uniform(-3, 3);
        for (auto& x : z) x = rng.uniform(-3, 3);
        const int y = static_cast<int>(rng.below(5));
        Matrix rs = r;
        auto zs = z;
        for (int k = 0; k < 6; ++k) {
            const double s = rng.uniform(-100, 100);
            for (int c = 0; c < 5; ++c) rs.at(k, c) += s;
        }
        for (auto& x : zs) x += 42.0;
        EXPECT_NEAR(cor_loss(r, z, y), cor_loss(rs, zs, y), 1e-9);
        EXPECT_GE(cor_loss(r, z, y), 0.0);

        const auto g = cor_loss_grad(r, z, y);
        for (int c = 0; c < 5; ++c) {
            auto up = z, down = z;
            up[static_cast<std::size_t>(c)] += 1e-6;
            down[static_cast<std::size_t>(c)] -= 1e-6;
            const double num = (cor_loss(r, up, y) - cor_loss(r, down, y)) / 2e-6;
            EXPECT_NEAR(g.logits[static_cast<std::size_t>(c)], num, 1e-5);
        }
    }
}

TEST(TotalLoss, WorkedExamples) {
    const LossWeights w{0.02, 1.0, 0.2};
    EXPECT_NEAR(total_loss({1.0, 0.02, 0.1}, w), 1.04, 1e-12);
    EXPECT_EQ(total_loss({0, 0, 0}, w), 0.0);
    EXPECT_EQ(total_loss({0.7, 0.3, 0.9}, {0.02, 0.0, 0.0}), 0.7);
}

TEST(TotalLoss, MonotoneInEachComponent) {
    Rng rng(34);
    const LossWeights w{0.02, 1.0, 0.2};
    for (int t = 0; t < 100; ++t) {
        LossComponents c{rng.uniform(0, 3), rng.uniform(0, 0.02), rng.uniform(0, 2)};
        const double base = total_loss(c, w);
        for (int i = 0; i < 3; ++i) {
            LossComponents d = c;
            (i == 0 ? d.cls : i == 1 ? d.rb : d.cor) += rng.uniform(0, 1);
            EXPECT_GE(total_loss(d, w), base);
        }
    }
}

TEST(LossWeights, NegativeRejected) {
    EXPECT_THROW((LossWeights{-0.1, 1, 0.2}.validate()), Error);
    EXPECT_THROW((LossWeights{0.02, -1, 0.2}.validate()), Error);
}

TEST(Metrics, PerfectPredictor) {
    ConfusionMatrix cm(5);
    for (int c = 0; c < 5; ++c) cm.add(c, c, c + 1);
    const auto m = compute_metrics(cm);
    EXPECT_EQ(m.war, 1.0);
    EXPECT_EQ(m.uar, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_EQ(m.wf1, 1.0);
}

TEST(Metrics, TwoClassAllPredictedOne) {
    const auto m = compute_metrics(ConfusionMatrix::from_rows({{0, 3}, {0, 1}}));
    EXPECT_DOUBLE_EQ(m.war, 0.25);
    EXPECT_DOUBLE_EQ(m.uar, 0.5);
    // N = (3, 1) with everything predicted as the first class.
    const auto n = compute_metrics(ConfusionMatrix::from_rows({{3, 0}, {1, 0}}));
    EXPECT_DOUBLE_EQ(n.war, 0.75);
    EXPECT_DOUBLE_EQ(n.uar, 0.5);
}

TEST(Metrics, ThreeClassAgainstBruteForce) {
    const auto cm = ConfusionMatrix::from_rows({{2, 1, 0}, {0, 1, 1}, {1, 0, 2}});
    const auto m = compute_metrics(cm);
    const auto b = brute_force(cm);
    EXPECT_NEAR(m.war, b.war, 1e-12);
    EXPECT_NEAR(m.uar, b.uar, 1e-12);
    EXPECT_NEAR(m.f1, b.f1, 1e-12);
    EXPECT_NEAR(m.wf1, b.wf1, 1e-12);
}

TEST(Metrics, RandomMatricesAgainstBruteForce) {
    Rng rng(35);
    for (int t = 0; t < 300; ++t) {
        const auto cm = random_cm(rng, 2 + static_cast<int>(rng.below(5)));
        const auto m = compute_metrics(cm);
        const auto b = brute_force(cm);
        EXPECT_NEAR(m.war, b.war, 1e-12);
        EXPECT_NEAR(m.uar, b.uar, 1e-12);
        EXPECT_NEAR(m.f1, b.f1, 1e-12);
        EXPECT_NEAR(m.wf1, b.wf1, 1e-12);
        for (double v : {m.war, m.uar, m.f1, m.wf1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Metrics, BalancedClassesUarEqualsWar) {
    Rng rng(36);
    for (int t = 0; t < 50; ++t) {
        ConfusionMatrix cm(4);
        for (int c = 0; c < 4; ++c) {
            for (int i = 0; i < 6; ++i) cm.add(c, static_cast<int>(rng.below(4)));
        }
        const auto m = compute_metrics(cm);
        EXPECT_NEAR(m.uar, m.war, 1e-12);
    }
}

TEST(Metrics, ZeroSupportClassExcluded) {
    const auto m = compute_metrics(ConfusionMatrix::from_rows({{2, 0, 0}, {0, 0, 0}, {0, 1, 1}}));
    EXPECT_EQ(m.excluded_classes, std::vector<int>{1});
    EXPECT_DOUBLE_EQ(m.uar, 0.75);
}

TEST(Metrics, EmptyMatrixRaises) {
    try {
        compute_metrics(ConfusionMatrix(3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyMatrix);
    }
}
