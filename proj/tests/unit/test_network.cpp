#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "rrrn/error.hpp"
#include "rrrn/layers.hpp"
#include "rrrn/network.hpp"

using namespace rrrn;
using rrrn::testing::random_stack;

namespace {

ModelConfig toy_config(int size = 32, int stream_channels = 8) {
    ModelConfig c;
    c.backbone.variant = BackboneVariant::ToyCnn;
    c.backbone.stream_channels = stream_channels;
    c.backbone.input_size = size;
    return c;
}

Matrix random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (auto& x : m.data) x = rng.uniform(lo, hi);
    return m;
}

Tensor random_tensor(Rng& rng, int c, int h, int w) {
    Tensor t(c, h, w);
    for (auto& x : t.data) x = rng.normal();
    return t;
}

// Dense oracle: relu(D^-1 G P W) twice, computed with naive loops.
Matrix dense_gcn(const Matrix& p, const Matrix& gamma, const Matrix& w0, const Matrix& w1) {
    auto layer = [&](const Matrix& x, const Matrix& w) {
        const int n = x.rows, c = x.cols, o = w.cols;
        Matrix out(n, o);
        for (int i = 0; i < n; ++i) {
            double d = 0.0;
            for (int j = 0; j < n; ++j) d += gamma.at(i, j);
            for (int q = 0; q < o; ++q) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) {
                    double xw = 0.0;
                    for (int k = 0; k < c; ++k) xw += x.at(j, k) * w.at(k, q);
                    acc += gamma.at(i, j) / d * xw;
                }
                out.at(i, q) = std::max(0.0, acc);
            }
        }
        return out;
    };
    return layer(layer(p, w0), w1);
}

double conv3x3_at(const Tensor& x, std::span<const double> w, double bias, int out_c, int y, int xx) {
    double acc = bias;
    for (int ic = 0; ic < x.channels; ++ic) {
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const int sy = y + ky - 1, sx = xx + kx - 1;
                if (sy < 0 || sx < 0 || sy >= x.height || sx >= x.width) continue;
                acc += w[static_cast<std::size_t>(((out_c * x.channels + ic) * 3 + ky) * 3 + kx)] * x.at(ic, sy, sx);
            }
        }
    }
    return acc;
}

}  // namespace

TEST(Backbone, ToyShape) {
    const RrrnModel model(toy_config(32, 8));
    const auto params = model.initialize(1);
    Rng rng(1);
    const auto feats = model.backbone_forward(params, random_stack(rng, 32, 6));
    ASSERT_EQ(feats.size(), 6u);
    for (const auto& p : feats) {
        EXPECT_EQ(p.channels, 16);
        EXPECT_EQ(p.height, 4);
        EXPECT_EQ(p.width, 4);
    }
}

TEST(Backbone, ResnetStyleShape) {
    ModelConfig c;
    c.backbone = {BackboneVariant::Resnet18Style, 16, 32, false};
    const RrrnModel model(c);
    const auto params = model.initialize(2);
    Rng rng(2);
    const auto feats = model.backbone_forward(params, random_stack(rng, 32, 6));
    EXPECT_EQ(feats[0].channels, 32);
    EXPECT_EQ(feats[0].height, c.backbone.output_extent());
}

TEST(Backbone, ZeroInputZeroBiasGivesZeroFeatures) {
    const RrrnModel model(toy_config(16));
    const auto params = model.initialize(3);
    RegionStack s;
    for (int k = 0; k < 6; ++k) s.vertical.emplace_back(16, 16), s.horizontal.emplace_back(16, 16);
    for (const auto& p : model.backbone_forward(params, s)) {
        for (double v : p.data) EXPECT_EQ(v, 0.0);
    }
}

TEST(Backbone, SwappingStreamsSwapsChannelHalves) {
    const RrrnModel model(toy_config(16));
    const auto params = model.initialize(4);
    ParameterSet swapped = params;
    for (int i = 0; i < params.count(); ++i) {
        const auto& name = params.tensor(i).name;
        if (name.rfind("vertical.", 0) != 0) continue;
        const int j = params.find("horizontal." + name.substr(9));
        ASSERT_GE(j, 0);
        swapped.tensor(i).values = params.tensor(j).values;
        swapped.tensor(j).values = params.tensor(i).values;
    }
    Rng rng(4);
    RegionStack s = random_stack(rng, 16, 6);
    RegionStack flipped{s.horizontal, s.vertical};
    const auto a = model.backbone_forward(params, s);
    const auto b = model.backbone_forward(swapped, flipped);
    const int half = a[0].channels / 2;
    const auto plane = a[0].plane();
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t i = 0; i < half * plane; ++i) {
            EXPECT_EQ(b[k].data[i], a[k].data[i + half * plane]);
            EXPECT_EQ(b[k].data[i + half * plane], a[k].data[i]);
        }
    }
}

TEST(Backbone, PretrainedInitRejected) {
    BackboneConfig b{BackboneVariant::Resnet18Style, 16, 32, true};
    EXPECT_THROW(b.validate(), Error);
}

TEST(ChannelPool, MatchesBruteForce) {
    Rng rng(5);
    const Tensor x = random_tensor(rng, 3, 2, 2);
    std::vector<int> arg;
    const Tensor out = channel_avg_max(x, arg);
    ASSERT_EQ(out.channels, 2);
    for (int y = 0; y < 2; ++y) {
        for (int xx = 0; xx < 2; ++xx) {
            double s = 0.0, m = -1e300;
            for (int c = 0; c < 3; ++c) s += x.at(c, y, xx), m = std::max(m, x.at(c, y, xx));
            EXPECT_NEAR(out.at(0, y, xx), s / 3.0, 1e-15);
            EXPECT_EQ(out.at(1, y, xx), m);
        }
    }
}

TEST(RegionSqueeze, ConstantInputIdentityWeights) {
    for (int c : {1, 4, 7}) {
        const Tensor p(c, 5, 5, 2.5);
        std::vector<double> f1w(static_cast<std::size_t>(c * c * 9), 0.0), f1b(static_cast<std::size_t>(c), 0.0);
        for (int i = 0; i < c; ++i) f1w[static_cast<std::size_t>((i * c + i) * 9 + 4)] = 1.0;
        std::vector<double> f2w(18, 0.0), f2b(1, 0.0);
        f2w[4] = 0.5;
        f2w[9 + 4] = 0.5;
        const Tensor mu = region_squeeze(p, {f1w, f1b, f2w, f2b});
        EXPECT_EQ(mu.channels, 1);
        EXPECT_EQ(mu.height, 5);
        for (double v : mu.data) EXPECT_DOUBLE_EQ(v, 2.5);
    }
}

TEST(RegionAttention, ZeroWeightsGiveHalf) {
    std::vector<double> w0(18, 0.0), b0(3, 0.0), w1(18, 0.0), b1(6, 0.0);
    Rng rng(6);
    const auto alpha = region_attention(random_tensor(rng, 6, 3, 3), {w0, b0, w1, b1, 6, 3});
    for (double a : alpha) EXPECT_EQ(a, 0.5);
}

TEST(RegionAttention, ConstantPsiOneByOne) {
    Rng rng(7);
    std::vector<double> w0(18), b0(3), w1(18), b1(6);
    for (auto* v : {&w0, &b0, &w1, &b1}) {
        for (auto& x : *v) x = rng.uniform(-1, 1);
    }
    const Tensor psi = random_tensor(rng, 6, 1, 1);
    const auto alpha = region_attention(psi, {w0, b0, w1, b1, 6, 3});
    for (int k = 0; k < 6; ++k) {
        double z = b1[static_cast<std::size_t>(k)];
        for (int h = 0; h < 3; ++h) {
            double pre = b0[static_cast<std::size_t>(h)];
            for (int j = 0; j < 6; ++j) pre += w0[static_cast<std::size_t>(h * 6 + j)] * psi.data[static_cast<std::size_t>(j)];
            z += w1[static_cast<std::size_t>(k * 3 + h)] * std::max(0.0, pre);
        }
        EXPECT_NEAR(alpha[static_cast<std::size_t>(k)], 1.0 / (1.0 + std::exp(-2.0 * z)), 1e-15);
        EXPECT_GT(alpha[static_cast<std::size_t>(k)], 0.0);
        EXPECT_LT(alpha[static_cast<std::size_t>(k)], 1.0);
    }
}

TEST(WeightRegions, AnnihilationIdentityLinearity) {
    Rng rng(8);
    std::vector<Tensor> feats;
    for (int k = 0; k < 3; ++k) feats.push_back(random_tensor(rng, 4, 3, 3));
    const std::vector<double> alpha = {0.0, 1.0, 0.3};
    const std::vector<double> doubled = {0.0, 2.0, 0.6};
    const Matrix f = weight_regions(feats, alpha);
    const Matrix g = weight_regions(feats, doubled);
    const auto mean1 = spatial_mean(feats[1]);
    for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(f.at(0, c), 0.0);
        EXPECT_EQ(f.at(1, c), mean1[static_cast<std::size_t>(c)]);
        EXPECT_EQ(g.at(2, c), 2.0 * f.at(2, c));
    }
}

TEST(BuildGraph, IdenticalFeaturesAllOnes) {
    Matrix f(6, 4);
    for (int i = 0; i < 6; ++i) {
        for (int c = 0; c < 4; ++c) f.at(i, c) = 0.5 + c;
    }
    const auto g = build_graph(f);
    for (int i = 0; i < 6; ++i) {
        EXPECT_NEAR(g.degree[static_cast<std::size_t>(i)], 6.0, 1e-12);
        for (int j = 0; j < 6; ++j) EXPECT_NEAR(g.gamma.at(i, j), 1.0, 1e-12);
    }
}

TEST(BuildGraph, OrthogonalFeaturesIdentity) {
    Matrix f(4, 4);
    for (int i = 0; i < 4; ++i) f.at(i, i) = 1.0 + i;
    const auto g = build_graph(f);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(g.degree[static_cast<std::size_t>(i)], 1.0);
        for (int j = 0; j < 4; ++j) EXPECT_EQ(g.gamma.at(i, j), i == j ? 1.0 : 0.0);
    }
}

TEST(BuildGraph, SixtyDegrees) {
    Matrix f(2, 2);
    f.at(0, 0) = 1.0;
    f.at(1, 0) = 0.5;
    f.at(1, 1) = std::sqrt(3.0) / 2.0;
    EXPECT_NEAR(build_graph(f).gamma.at(0, 1), 0.5, 1e-15);
}

TEST(BuildGraph, ZeroRowFlaggedAndSubstituted) {
    Matrix f(3, 4);
    f.at(0, 0) = 1.0;
    f.at(2, 3) = 2.0;
    const auto g = build_graph(f);
    EXPECT_TRUE(g.degenerate[1]);
    EXPECT_FALSE(g.degenerate[0]);
    EXPECT_TRUE(g.any_degenerate());
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(g.normalized.at(1, c), 0.5, 1e-15);
    EXPECT_NEAR(g.gamma.at(1, 1), 1.0, 1e-15);
}

TEST(BuildGraph, InvariantsOnRandomFeatures) {
    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        const Matrix f = random_matrix(rng, 6, 8, 0.0, 1.0);
        const auto g = build_graph(f);
        const Matrix a = g.propagation();
        for (int i = 0; i < 6; ++i) {
            EXPECT_NEAR(g.gamma.at(i, i), 1.0, 1e-12);
            EXPECT_GT(g.degree[static_cast<std::size_t>(i)], 0.0);
            double row = 0.0;
            for (int j = 0; j < 6; ++j) {
                EXPECT_EQ(g.gamma.at(i, j), g.gamma.at(j, i));
                row += a.at(i, j);
            }
            EXPECT_NEAR(row, 1.0, 1e-12);
        }
    }
}

TEST(GcnForward, SingleNode) {
    Rng rng(10);
    Matrix p = random_matrix(rng, 1, 5);
    const Matrix w0 = random_matrix(rng, 5, 5), w1 = random_matrix(rng, 5, 5);
    const auto g = build_graph(p);
    const Matrix out = gcn_forward(p, g, w0, w1);
    Matrix h = matmul(p, w0);
    for (auto& x : h.data) x = std::max(0.0, x);
    Matrix o = matmul(h, w1);
    for (auto& x : o.data) x = std::max(0.0, x);
    for (std::size_t i = 0; i < o.data.size(); ++i) EXPECT_NEAR(out.data[i], o.data[i], 1e-14);
}

TEST(GcnForward, OrthogonalNodesDoNotMix) {
    Rng rng(11);
    Matrix p(3, 3);
    for (int i = 0; i < 3; ++i) p.at(i, i) = 1.0 + i;
    const Matrix w0 = random_matrix(rng, 3, 3), w1 = random_matrix(rng, 3, 3);
    const Matrix all = gcn_forward(p, build_graph(p), w0, w1);
    for (int i = 0; i < 3; ++i) {
        Matrix single(1, 3);
        single.at(0, i) = 1.0 + i;
        const Matrix alone = gcn_forward(single, build_graph(single), w0, w1);
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(all.at(i, c), alone.at(0, c), 1e-14);
    }
}

TEST(GcnForward, MatchesDenseOracle) {
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
        const Matrix f = random_matrix(rng, 3, 6, 0.0, 1.0);
        const Matrix w0 = random_matrix(rng, 6, 6), w1 = random_matrix(rng, 6, 6);
        const auto g = build_graph(f);
        const Matrix got = gcn_forward(f, g, w0, w1);
        const Matrix want = dense_gcn(f, g.gamma, w0, w1);
        for (std::size_t i = 0; i < got.data.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-6);
    }
}

TEST(Aggregate, ZeroRelationalAndBruteForceMean) {
    Rng rng(13);
    const Matrix f = random_matrix(rng, 6, 5);
    const auto zero = aggregate(f, Matrix(6, 5));
    EXPECT_EQ(zero.combined.size(), 10u);
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(zero.relation[static_cast<std::size_t>(c)], zero.region[static_cast<std::size_t>(c)], 1e-15);
    const Matrix r = random_matrix(rng, 6, 5);
    const auto a = aggregate(f, r);
    for (int c = 0; c < 5; ++c) {
        double s = 0.0, t = 0.0;
        for (int k = 0; k < 6; ++k) s += f.at(k, c), t += f.at(k, c) + r.at(k, c);
        EXPECT_NEAR(a.region[static_cast<std::size_t>(c)], s / 6.0, 1e-7);
        EXPECT_NEAR(a.relation[static_cast<std::size_t>(c)], t / 6.0, 1e-7);
        EXPECT_EQ(a.combined[static_cast<std::size_t>(c)], a.region[static_cast<std::size_t>(c)]);
        EXPECT_EQ(a.combined[static_cast<std::size_t>(c + 5)], a.relation[static_cast<std::size_t>(c)]);
    }
}

TEST(Model, InitialAttentionIsHalfAndOutputsFinite) {
    const RrrnModel model(toy_config(16));
    const auto params = model.initialize(14);
    Rng rng(14);
    const auto r = model.forward(params, random_stack(rng, 16, 6, 3.0));
    ASSERT_EQ(r.logits.size(), 5u);
    EXPECT_EQ(r.region_logits.rows, 6);
    for (double a : r.alpha) EXPECT_EQ(a, 0.5);
    for (double z : r.logits) EXPECT_TRUE(std::isfinite(z));
    for (double z : r.region_logits.data) EXPECT_TRUE(std::isfinite(z));
}

TEST(Model, InitIsDeterministicPerSeed) {
    const RrrnModel model(toy_config(16));
    const auto a = model.initialize(15), b = model.initialize(15), c = model.initialize(16);
    for (int i = 0; i < a.count(); ++i) EXPECT_EQ(a.tensor(i).values, b.tensor(i).values);
    EXPECT_NE(a.tensor(0).values, c.tensor(0).values);
}

TEST(Model, ShapeMismatchRaises) {
    const RrrnModel model(toy_config(16));
    const auto params = model.initialize(1);
    Rng rng(1);
    try {
        model.forward(params, random_stack(rng, 8, 6));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

// Re-derives everything after the backbone with plain loops.
TEST(Model, MatchesStraightLineOracle) {
    const RrrnModel model(toy_config(8));
    const auto params = model.initialize(21, false);
    Rng rng(21);
    const RegionStack stack = random_stack(rng, 8, 6);
    const auto got = model.forward(params, stack);
    const auto feats = model.backbone_forward(params, stack);
    const int K = 6, C = feats[0].channels, H = feats[0].height, W = feats[0].width;

    std::vector<double> avg(K), mx(K);
    for (int k = 0; k < K; ++k) {
        const auto sq = model.squeeze_weights(params, k);
        Tensor f1(C, H, W);
        for (int o = 0; o < C; ++o) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) f1.at(o, y, x) = conv3x3_at(feats[static_cast<std::size_t>(k)], sq.f1_weight, sq.f1_bias[static_cast<std::size_t>(o)], o, y, x);
            }
        }
        Tensor pooled(2, H, W);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double s = 0.0, m = -1e300;
                for (int o = 0; o < C; ++o) s += f1.at(o, y, x), m = std::max(m, f1.at(o, y, x));
                pooled.at(0, y, x) = s / C;
                pooled.at(1, y, x) = m;
            }
        }
        double s = 0.0, m = -1e300;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double mu = conv3x3_at(pooled, sq.f2_weight, sq.f2_bias[0], 0, y, x);
                s += mu, m = std::max(m, mu);
            }
        }
        avg[static_cast<std::size_t>(k)] = s / (H * W);
        mx[static_cast<std::size_t>(k)] = m;
    }
    const auto aw = model.attention_weights(params);
    std::vector<double> alpha(K);
    for (int k = 0; k < K; ++k) {
        double z = 2.0 * aw.b1[static_cast<std::size_t>(k)];
        for (int h = 0; h < aw.hidden; ++h) {
            double pa = aw.b0[static_cast<std::size_t>(h)], pm = aw.b0[static_cast<std::size_t>(h)];
            for (int j = 0; j < K; ++j) {
                pa += aw.w0[static_cast<std::size_t>(h * K + j)] * avg[static_cast<std::size_t>(j)];
                pm += aw.w0[static_cast<std::size_t>(h * K + j)] * mx[static_cast<std::size_t>(j)];
            }
            z += aw.w1[static_cast<std::size_t>(k * aw.hidden + h)] * (std::max(0.0, pa) + std::max(0.0, pm));
        }
        alpha[static_cast<std::size_t>(k)] = 1.0 / (1.0 + std::exp(-z));
        EXPECT_NEAR(got.alpha[static_cast<std::size_t>(k)], alpha[static_cast<std::size_t>(k)], 1e-12);
    }

    Matrix f(K, C), fhat(K, C);
    for (int k = 0; k < K; ++k) {
        double n2 = 0.0;
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int i = 0; i < H * W; ++i) s += feats[static_cast<std::size_t>(k)].data[static_cast<std::size_t>(c * H * W + i)];
            f.at(k, c) = alpha[static_cast<std::size_t>(k)] * s / (H * W);
            n2 += f.at(k, c) * f.at(k, c);
        }
        for (int c = 0; c < C; ++c) fhat.at(k, c) = f.at(k, c) / std::sqrt(n2);
    }
    Matrix gamma(K, K);
    for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j) {
            for (int c = 0; c < C; ++c) gamma.at(i, j) += fhat.at(i, c) * fhat.at(j, c);
        }
    }
    const Matrix rel = dense_gcn(fhat, gamma, model.gcn_weight(params, 0), model.gcn_weight(params, 1));
    std::vector<double> fa(static_cast<std::size_t>(2 * C), 0.0);
    for (int k = 0; k < K; ++k) {
        for (int c = 0; c < C; ++c) {
            fa[static_cast<std::size_t>(c)] += f.at(k, c) / K;
            fa[static_cast<std::size_t>(C + c)] += (rel.at(k, c) + f.at(k, c)) / K;
        }
    }
    const auto hw = params.values(params.find("head.weight"));
    const auto hb = params.values(params.find("head.bias"));
    const auto rw = params.values(params.find("region_head.weight"));
    const auto rb = params.values(params.find("region_head.bias"));
    for (int o = 0; o < 5; ++o) {
        double z = hb[static_cast<std::size_t>(o)];
        for (int i = 0; i < 2 * C; ++i) z += hw[static_cast<std::size_t>(o * 2 * C + i)] * fa[static_cast<std::size_t>(i)];
        EXPECT_NEAR(got.logits[static_cast<std::size_t>(o)], z, 1e-5);
        for (int k = 0; k < K; ++k) {
            double zr = rb[static_cast<std::size_t>(o)];
            for (int c = 0; c < C; ++c) zr += rw[static_cast<std::size_t>(o * C + c)] * f.at(k, c);
            EXPECT_NEAR(got.region_logits.at(k, o), zr, 1e-5);
        }
    }
}

TEST(Model, RelationOnlyVariantHasUnitAttention) {
    auto cfg = toy_config(8);
    cfg.region_attention = false;
    const RrrnModel model(cfg);
    EXPECT_EQ(model.layout().find("attention.fc0.weight"), -1);
    const auto params = model.initialize(3);
    Rng rng(3);
    const auto r = model.forward(params, random_stack(rng, 8, 6));
    for (double a : r.alpha) EXPECT_EQ(a, 1.0);
}

TEST(GradientCheck, ToyModelAllParameters) {
    auto c = rrrn::testing::make_active_case(1);
    EXPECT_GT(c.components.rb, 0.0);
    EXPECT_GT(c.components.cor, 0.0);
    const auto st = rrrn::testing::gradient_check(c, 1e-4, 1e-3, 1e-7, 7);
    EXPECT_GE(st.pass_fraction(), 0.99);
}

TEST(GradientCheck, ResnetStyleSampled) {
    ModelConfig cfg;
    cfg.backbone = {BackboneVariant::Resnet18Style, 8, 16, false};
    rrrn::testing::GradCheckCase c{RrrnModel(cfg), {}, {}, 1, {0.02, 1.0, 0.2}, {}};
    c.params = c.model.initialize(5, false);
    Rng rng(5);
    c.stack = random_stack(rng, 16, 6);
    const auto st = rrrn::testing::gradient_check(c, 1e-4, 1e-3, 1e-7, 37);
    EXPECT_GT(st.checked, 100u);
    EXPECT_GE(st.pass_fraction(), 0.99);
}

TEST(GradientCheck, RelationOnlyVariant) {
    ModelConfig cfg = toy_config(8);
    cfg.region_attention = false;
    rrrn::testing::GradCheckCase c{RrrnModel(cfg), {}, {}, 2, {0.02, 1.0, 0.2}, {}};
    c.params = c.model.initialize(6);
    Rng rng(6);
    c.stack = random_stack(rng, 8, 6);
    const auto st = rrrn::testing::gradient_check(c, 1e-4, 1e-3, 1e-7, 5);
    EXPECT_GE(st.pass_fraction(), 0.99);
}
