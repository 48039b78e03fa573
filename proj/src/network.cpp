#include "rrrn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rrrn/error.hpp"
#include "rrrn/random.hpp"

namespace rrrn {

namespace {

constexpr double kDegenerateNorm = 1e-12;

struct ConvParam {
    int weight = -1;
    int bias = -1;
    ConvShape shape;
};

ConvParam add_conv(ParameterSet& set, const std::string& name, int in, int out, int kernel, int stride,
                   int padding) {
    ConvParam p;
    p.shape = ConvShape{in, out, kernel, stride, padding};
    p.weight = set.add(name + ".weight", {out, in, kernel, kernel});
    p.bias = set.add(name + ".bias", {out});
    return p;
}

Tensor conv_fwd(const ParameterSet& params, const ConvParam& c, const Tensor& x) {
    return conv2d_forward(x, params.values(c.weight), params.values(c.bias), c.shape);
}

Tensor conv_bwd(const ParameterSet& params, const ConvParam& c, const Tensor& x, const Tensor& g,
                ParameterSet& grads, bool want_input) {
    return conv2d_backward(x, g, params.values(c.weight), grads.values(c.weight), grads.values(c.bias), c.shape,
                           want_input);
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

class ToyStream final : public Stream {
public:
    ToyStream(ParameterSet& set, const std::string& prefix, int channels) {
        int in = 1;
        for (int l = 0; l < 3; ++l) {
            layers_.push_back(add_conv(set, prefix + ".conv" + std::to_string(l + 1), in, channels, 3, 2, 1));
            in = channels;
        }
    }

    Tensor forward(const ParameterSet& params, const Tensor& x, StreamCache* cache) const override {
        if (cache) {
            cache->activations.clear();
            cache->activations.push_back(x);
        }
        Tensor a = x;
        for (const auto& layer : layers_) {
            a = conv_fwd(params, layer, a);
            relu_inplace(a);
            if (cache) cache->activations.push_back(a);
        }
        return a;
    }

    void backward(const ParameterSet& params, const StreamCache& cache, Tensor g,
                  ParameterSet& grads) const override {
        for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
            const auto li = static_cast<std::size_t>(l);
            relu_backward_inplace(cache.activations[li + 1], g);
            g = conv_bwd(params, layers_[li], cache.activations[li], g, grads, l > 0);
        }
    }

private:
    std::vector<ConvParam> layers_;
};

// Residual stream without normalization layers: 7x7/2 stem, 3x3/2 max pool,
// then four stages of two basic blocks.
class ResNetStream final : public Stream {
public:
    ResNetStream(ParameterSet& set, const std::string& prefix, int base_width) {
        stem_ = add_conv(set, prefix + ".stem", 1, base_width, 7, 2, 3);
        int in = base_width;
        for (int stage = 0; stage < 4; ++stage) {
            const int width = base_width << stage;
            for (int b = 0; b < 2; ++b) {
                const int stride = (stage > 0 && b == 0) ? 2 : 1;
                const std::string name = prefix + ".layer" + std::to_string(stage + 1) + "." + std::to_string(b);
                Block block;
                block.conv1 = add_conv(set, name + ".conv1", in, width, 3, stride, 1);
                block.conv2 = add_conv(set, name + ".conv2", width, width, 3, 1, 1);
                if (stride != 1 || in != width) {
                    block.projection = add_conv(set, name + ".proj", in, width, 1, stride, 0);
                    block.has_projection = true;
                }
                blocks_.push_back(block);
                in = width;
            }
        }
    }

    // activations: [x, stem, pool, (mid, out) per block]
    Tensor forward(const ParameterSet& params, const Tensor& x, StreamCache* cache) const override {
        StreamCache local;
        StreamCache& c = cache ? *cache : local;
        c.activations.clear();
        c.pools.assign(1, PoolIndex{});
        c.activations.push_back(x);
        Tensor a = conv_fwd(params, stem_, x);
        relu_inplace(a);
        c.activations.push_back(a);
        a = max_pool2d_forward(a, 3, 2, 1, c.pools[0]);
        c.activations.push_back(a);
        for (const auto& block : blocks_) {
            Tensor mid = conv_fwd(params, block.conv1, a);
            relu_inplace(mid);
            Tensor out = conv_fwd(params, block.conv2, mid);
            if (block.has_projection) {
                add_into(out, conv_fwd(params, block.projection, a));
            } else {
                add_into(out, a);
            }
            relu_inplace(out);
            c.activations.push_back(mid);
            c.activations.push_back(out);
            a = std::move(out);
        }
        return a;
    }

    void backward(const ParameterSet& params, const StreamCache& c, Tensor g, ParameterSet& grads) const override {
        for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
            const auto& block = blocks_[static_cast<std::size_t>(b)];
            const std::size_t base = 3 + 2 * static_cast<std::size_t>(b);
            const Tensor& in = c.activations[base - 1];
            const Tensor& mid = c.activations[base];
            const Tensor& out = c.activations[base + 1];
            relu_backward_inplace(out, g);
            Tensor dmid = conv_bwd(params, block.conv2, mid, g, grads, true);
            relu_backward_inplace(mid, dmid);
            Tensor dx = conv_bwd(params, block.conv1, in, dmid, grads, true);
            if (block.has_projection) {
                add_into(dx, conv_bwd(params, block.projection, in, g, grads, true));
            } else {
                add_into(dx, g);
            }
            g = std::move(dx);
        }
        g = max_pool2d_backward(c.activations[1], g, c.pools[0]);
        relu_backward_inplace(c.activations[1], g);
        conv_bwd(params, stem_, c.activations[0], g, grads, false);
    }

private:
    struct Block {
        ConvParam conv1, conv2, projection;
        bool has_projection = false;
    };
    ConvParam stem_;
    std::vector<Block> blocks_;
};

std::unique_ptr<Stream> make_stream(const BackboneConfig& cfg, ParameterSet& set, const std::string& prefix) {
    if (cfg.variant == BackboneVariant::ToyCnn) return std::make_unique<ToyStream>(set, prefix, cfg.stream_channels);
    return std::make_unique<ResNetStream>(set, prefix, cfg.stream_channels / 8);
}

int conv_out(int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

// Split a 2*half-channel tensor into its two stream halves.
Tensor channel_slice(const Tensor& t, int begin, int count) {
    Tensor out(count, t.height, t.width);
    std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(begin * t.plane()), out.size(), out.data.begin());
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

std::vector<double> mlp(const AttentionWeights& w, std::span<const double> v, std::vector<double>& pre) {
    pre.assign(static_cast<std::size_t>(w.hidden), 0.0);
    for (int h = 0; h < w.hidden; ++h) {
        double acc = w.b0[static_cast<std::size_t>(h)];
        for (int k = 0; k < w.regions; ++k) acc += w.w0[static_cast<std::size_t>(h * w.regions + k)] * v[static_cast<std::size_t>(k)];
        pre[static_cast<std::size_t>(h)] = acc;
    }
    std::vector<double> out(static_cast<std::size_t>(w.regions), 0.0);
    for (int k = 0; k < w.regions; ++k) {
        double acc = w.b1[static_cast<std::size_t>(k)];
        for (int h = 0; h < w.hidden; ++h) {
            acc += w.w1[static_cast<std::size_t>(k * w.hidden + h)] * std::max(0.0, pre[static_cast<std::size_t>(h)]);
        }
        out[static_cast<std::size_t>(k)] = acc;
    }
    return out;
}

std::vector<double> linear(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                           int out_dim) {
    const int in_dim = static_cast<int>(x.size());
    std::vector<double> y(static_cast<std::size_t>(out_dim));
    for (int o = 0; o < out_dim; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_dim; ++i) acc += w[static_cast<std::size_t>(o * in_dim + i)] * x[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
}

// Accumulates dW += g x^T, db += g and returns W^T g.
std::vector<double> linear_backward(std::span<const double> w, std::span<const double> x, std::span<const double> g,
                                    std::span<double> dw, std::span<double> db) {
    const std::size_t in_dim = x.size();
    std::vector<double> dx(in_dim, 0.0);
    for (std::size_t o = 0; o < g.size(); ++o) {
        if (g[o] == 0.0) continue;
        db[o] += g[o];
        for (std::size_t i = 0; i < in_dim; ++i) {
            dw[o * in_dim + i] += g[o] * x[i];
            dx[i] += g[o] * w[o * in_dim + i];
        }
    }
    return dx;
}

void relu_matrix(Matrix& m) {
    for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

}  // namespace

std::string_view to_string(BackboneVariant v) {
    return v == BackboneVariant::ToyCnn ? "TOY_CNN" : "RESNET18_STYLE";
}

std::optional<BackboneVariant> parse_backbone_variant(std::string_view text) {
    if (text == "TOY_CNN") return BackboneVariant::ToyCnn;
    if (text == "RESNET18_STYLE") return BackboneVariant::Resnet18Style;
    return std::nullopt;
}

int BackboneConfig::output_extent() const {
    int n = input_size;
    if (variant == BackboneVariant::ToyCnn) {
        for (int l = 0; l < 3; ++l) n = conv_out(n, 3, 2, 1);
        return n;
    }
    n = conv_out(n, 7, 2, 3);
    n = conv_out(n, 3, 2, 1);
    for (int stage = 1; stage < 4; ++stage) n = conv_out(n, 3, 2, 1);
    return n;
}

void BackboneConfig::validate() const {
    if (pretrained_init) {
        throw Error(ErrorCode::InvalidConfig, "pretrained initialization is not available in this build");
    }
    if (stream_channels < 1) throw Error(ErrorCode::InvalidConfig, "stream_channels must be positive");
    if (variant == BackboneVariant::Resnet18Style && stream_channels % 8 != 0) {
        throw Error(ErrorCode::InvalidConfig, "RESNET18_STYLE needs stream_channels divisible by 8");
    }
    if (input_size < 1 || output_extent() < 1) {
        throw Error(ErrorCode::InvalidConfig, "input_size too small for the backbone");
    }
}

void ModelConfig::validate() const {
    backbone.validate();
    if (regions < 2) throw Error(ErrorCode::InvalidConfig, "need the full-face region and at least one crop");
    if (reduction < 1) throw Error(ErrorCode::InvalidConfig, "reduction ratio must be >= 1");
    if (classes < 2) throw Error(ErrorCode::InvalidConfig, "need at least two classes");
}

int ForwardResult::predicted_class() const {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

Tensor to_tensor(const Grid& grid) {
    Tensor t(1, grid.height, grid.width);
    std::copy(grid.data.begin(), grid.data.end(), t.data.begin());
    return t;
}

Tensor region_squeeze(const Tensor& p, const SqueezeWeights& w, SqueezeTrace* trace) {
    const int c = p.channels;
    Tensor f1 = conv2d_forward(p, w.f1_weight, w.f1_bias, ConvShape{c, c, 3, 1, 1});
    std::vector<int> argmax;
    Tensor pooled = channel_avg_max(f1, argmax);
    Tensor mu = conv2d_forward(pooled, w.f2_weight, w.f2_bias, ConvShape{2, 1, 3, 1, 1});
    if (trace) {
        trace->f1_out = std::move(f1);
        trace->pooled = std::move(pooled);
        trace->argmax_channel = std::move(argmax);
    }
    return mu;
}

std::vector<double> region_attention(const Tensor& psi, const AttentionWeights& w, AttentionTrace* trace) {
    if (psi.channels != w.regions) throw Error(ErrorCode::ShapeMismatch, "attention input has wrong region count");
    AttentionTrace local;
    AttentionTrace& t = trace ? *trace : local;
    const std::size_t plane = psi.plane();
    t.avg.assign(static_cast<std::size_t>(w.regions), 0.0);
    t.max.assign(static_cast<std::size_t>(w.regions), 0.0);
    t.argmax.assign(static_cast<std::size_t>(w.regions), 0);
    for (int k = 0; k < w.regions; ++k) {
        const double* src = &psi.data[static_cast<std::size_t>(k) * plane];
        double sum = 0.0, best = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t i = 0; i < plane; ++i) {
            sum += src[i];
            if (src[i] > best) {
                best = src[i];
                arg = static_cast<int>(i);
            }
        }
        t.avg[static_cast<std::size_t>(k)] = sum / static_cast<double>(plane);
        t.max[static_cast<std::size_t>(k)] = best;
        t.argmax[static_cast<std::size_t>(k)] = arg;
    }
    const auto za = mlp(w, t.avg, t.pre_avg);
    const auto zm = mlp(w, t.max, t.pre_max);
    t.alpha.resize(static_cast<std::size_t>(w.regions));
    for (std::size_t k = 0; k < t.alpha.size(); ++k) t.alpha[k] = sigmoid(za[k] + zm[k]);
    return t.alpha;
}

Matrix weight_regions(const std::vector<Tensor>& features, std::span<const double> alpha) {
    if (features.size() != alpha.size() || features.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "one attention weight per region feature is required");
    }
    Matrix f(static_cast<int>(features.size()), features.front().channels);
    for (std::size_t k = 0; k < features.size(); ++k) {
        const auto m = spatial_mean(features[k]);
        for (int c = 0; c < f.cols; ++c) f.at(static_cast<int>(k), c) = alpha[k] * m[static_cast<std::size_t>(c)];
    }
    return f;
}

Matrix RegionGraph::propagation() const {
    Matrix a = gamma;
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) a.at(i, j) /= degree[static_cast<std::size_t>(i)];
    }
    return a;
}

bool RegionGraph::any_degenerate() const {
    return std::find(degenerate.begin(), degenerate.end(), true) != degenerate.end();
}

namespace {

// Sums over the node axis are taken in sorted order so that relabelling the
// nodes reorders the outputs bit for bit.
double node_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

// a * m with the inner (node) sum order-independent.
Matrix propagate(const Matrix& a, const Matrix& m) {
    Matrix out(a.rows, m.cols);
    std::vector<double> terms(static_cast<std::size_t>(a.cols));
    for (int i = 0; i < a.rows; ++i) {
        for (int q = 0; q < m.cols; ++q) {
            for (int j = 0; j < a.cols; ++j) terms[static_cast<std::size_t>(j)] = a.at(i, j) * m.at(j, q);
            out.at(i, q) = node_sum(terms);
        }
    }
    return out;
}

}  // namespace

RegionGraph build_graph(const Matrix& f) {
    if (f.rows < 1 || f.cols < 1) throw Error(ErrorCode::ShapeMismatch, "graph needs at least one node feature");
    RegionGraph g;
    const int n = f.rows, c = f.cols;
    g.normalized = Matrix(n, c);
    g.norms.assign(static_cast<std::size_t>(n), 0.0);
    g.degenerate.assign(static_cast<std::size_t>(n), false);
    const double uniform = 1.0 / std::sqrt(static_cast<double>(c));
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (double v : f.row(i)) sq += v * v;
        const double norm = std::sqrt(sq);
        g.norms[static_cast<std::size_t>(i)] = norm;
        if (!(norm > kDegenerateNorm)) {
            g.degenerate[static_cast<std::size_t>(i)] = true;
            std::fill(g.normalized.row(i).begin(), g.normalized.row(i).end(), uniform);
        } else {
            for (int j = 0; j < c; ++j) g.normalized.at(i, j) = f.at(i, j) / norm;
        }
    }
    g.gamma = Matrix(n, n);
    g.degree.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double dot = 1.0;
            if (i != j) {
                dot = 0.0;
                for (int k = 0; k < c; ++k) dot += g.normalized.at(i, k) * g.normalized.at(j, k);
            }
            g.gamma.at(i, j) = dot;
            row[static_cast<std::size_t>(j)] = dot;
        }
        g.degree[static_cast<std::size_t>(i)] = node_sum(row);
        if (std::abs(g.degree[static_cast<std::size_t>(i)]) < kDegenerateNorm) {
            throw Error(ErrorCode::SingularDegree, "graph node " + std::to_string(i) + " has zero degree");
        }
    }
    return g;
}

Matrix gcn_forward(const Matrix& p0, const RegionGraph& graph, const Matrix& w0, const Matrix& w1, GcnTrace* trace) {
    if (p0.rows != graph.gamma.rows || p0.cols != w0.rows || w0.cols != w1.rows) {
        throw Error(ErrorCode::ShapeMismatch, "gcn operand shapes do not line up");
    }
    const Matrix a = graph.propagation();
    Matrix m0 = matmul(p0, w0);
    Matrix z0 = propagate(a, m0);
    Matrix p1 = z0;
    relu_matrix(p1);
    Matrix m1 = matmul(p1, w1);
    Matrix z1 = propagate(a, m1);
    Matrix p2 = z1;
    relu_matrix(p2);
    if (trace) *trace = GcnTrace{std::move(z0), std::move(m0), std::move(p1), std::move(z1), std::move(m1)};
    return p2;
}

AggregateFeature aggregate(const Matrix& weighted, const Matrix& relational) {
    if (weighted.rows != relational.rows || weighted.cols != relational.cols || weighted.rows < 1) {
        throw Error(ErrorCode::ShapeMismatch, "aggregate needs matching non-empty node matrices");
    }
    AggregateFeature out;
    const auto c = static_cast<std::size_t>(weighted.cols);
    out.region.assign(c, 0.0);
    out.relation.assign(c, 0.0);
    const double inv = 1.0 / weighted.rows;
    for (int k = 0; k < weighted.rows; ++k) {
        for (std::size_t j = 0; j < c; ++j) {
            const double f = weighted.at(k, static_cast<int>(j));
            out.region[j] += f * inv;
            out.relation[j] += (relational.at(k, static_cast<int>(j)) + f) * inv;
        }
    }
    out.combined = out.region;
    out.combined.insert(out.combined.end(), out.relation.begin(), out.relation.end());
    return out;
}

struct RrrnModel::Indices {
    std::vector<int> f1_weight, f1_bias, f2_weight, f2_bias;
    int att_w0 = -1, att_b0 = -1, att_w1 = -1, att_b1 = -1;
    int gcn_w0 = -1, gcn_w1 = -1;
    int head_w = -1, head_b = -1, region_head_w = -1, region_head_b = -1;
};

RrrnModel::RrrnModel(ModelConfig config) : config_(std::move(config)), idx_(std::make_unique<Indices>()) {
    config_.validate();
    const int c = config_.backbone.feature_channels();
    vertical_ = make_stream(config_.backbone, layout_, "vertical");
    horizontal_ = make_stream(config_.backbone, layout_, "horizontal");
    for (int k = 0; k < config_.regions; ++k) {
        const std::string name = "squeeze" + std::to_string(k);
        idx_->f1_weight.push_back(layout_.add(name + ".f1.weight", {c, c, 3, 3}));
        idx_->f1_bias.push_back(layout_.add(name + ".f1.bias", {c}));
        idx_->f2_weight.push_back(layout_.add(name + ".f2.weight", {1, 2, 3, 3}));
        idx_->f2_bias.push_back(layout_.add(name + ".f2.bias", {1}));
    }
    if (config_.region_attention) {
        const int hidden = config_.attention_hidden();
        idx_->att_w0 = layout_.add("attention.fc0.weight", {hidden, config_.regions});
        idx_->att_b0 = layout_.add("attention.fc0.bias", {hidden});
        idx_->att_w1 = layout_.add("attention.fc1.weight", {config_.regions, hidden});
        idx_->att_b1 = layout_.add("attention.fc1.bias", {config_.regions});
    }
    idx_->gcn_w0 = layout_.add("gcn.w0", {c, c});
    idx_->gcn_w1 = layout_.add("gcn.w1", {c, c});
    idx_->head_w = layout_.add("head.weight", {config_.classes, 2 * c});
    idx_->head_b = layout_.add("head.bias", {config_.classes});
    idx_->region_head_w = layout_.add("region_head.weight", {config_.classes, c});
    idx_->region_head_b = layout_.add("region_head.bias", {config_.classes});
}

RrrnModel::~RrrnModel() = default;
RrrnModel::RrrnModel(RrrnModel&&) noexcept = default;
RrrnModel& RrrnModel::operator=(RrrnModel&&) noexcept = default;

ParameterSet RrrnModel::initialize(std::uint64_t seed, bool zero_attention_output) const {
    ParameterSet params = layout_.zeros_like();
    for (int i = 0; i < params.count(); ++i) {
        ParamTensor& t = params.tensor(i);
        const bool is_bias = t.name.size() >= 4 && t.name.compare(t.name.size() - 4, 4, "bias") == 0;
        if (is_bias) continue;
        if (zero_attention_output && i == idx_->att_w1) continue;
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= static_cast<std::size_t>(t.shape[d]);
        if (i == idx_->gcn_w0 || i == idx_->gcn_w1) fan_in = static_cast<std::size_t>(t.shape[0]);
        const bool head = i == idx_->head_w || i == idx_->region_head_w;
        const double bound = head ? 1.0 / std::sqrt(static_cast<double>(fan_in))
                                  : std::sqrt(6.0 / static_cast<double>(fan_in));
        Rng rng(stable_hash(seed, t.name));
        for (auto& v : t.values) v = rng.uniform(-bound, bound);
    }
    return params;
}

SqueezeWeights RrrnModel::squeeze_weights(const ParameterSet& params, int region) const {
    const auto r = static_cast<std::size_t>(region);
    return {params.values(idx_->f1_weight[r]), params.values(idx_->f1_bias[r]), params.values(idx_->f2_weight[r]),
            params.values(idx_->f2_bias[r])};
}

AttentionWeights RrrnModel::attention_weights(const ParameterSet& params) const {
    return {params.values(idx_->att_w0), params.values(idx_->att_b0), params.values(idx_->att_w1),
            params.values(idx_->att_b1), config_.regions, config_.attention_hidden()};
}

Matrix RrrnModel::gcn_weight(const ParameterSet& params, int layer) const {
    const int c = config_.backbone.feature_channels();
    Matrix w(c, c);
    const auto src = params.values(layer == 0 ? idx_->gcn_w0 : idx_->gcn_w1);
    std::copy(src.begin(), src.end(), w.data.begin());
    return w;
}

std::vector<Tensor> RrrnModel::backbone_forward(const ParameterSet& params, const RegionStack& stack) const {
    std::vector<Tensor> out;
    for (int k = 0; k < stack.region_count(); ++k) {
        const auto r = static_cast<std::size_t>(k);
        out.push_back(concat_channels(vertical_->forward(params, to_tensor(stack.vertical[r]), nullptr),
                                      horizontal_->forward(params, to_tensor(stack.horizontal[r]), nullptr)));
    }
    return out;
}

ForwardResult RrrnModel::forward(const ParameterSet& params, const RegionStack& stack) const {
    ForwardCache cache;
    return forward(params, stack, cache);
}

ForwardResult RrrnModel::forward(const ParameterSet& params, const RegionStack& stack, ForwardCache& cache) const {
    if (!params.same_layout(layout_)) throw Error(ErrorCode::ShapeMismatch, "parameters do not match the model layout");
    stack.validate();
    if (stack.region_count() != config_.regions || stack.size() != config_.backbone.input_size) {
        throw Error(ErrorCode::ShapeMismatch, "region stack shape does not match the model configuration");
    }
    const int regions = config_.regions;
    const auto nr = static_cast<std::size_t>(regions);

    cache.vertical.assign(nr, {});
    cache.horizontal.assign(nr, {});
    cache.features.clear();
    for (std::size_t k = 0; k < nr; ++k) {
        cache.features.push_back(
            concat_channels(vertical_->forward(params, to_tensor(stack.vertical[k]), &cache.vertical[k]),
                            horizontal_->forward(params, to_tensor(stack.horizontal[k]), &cache.horizontal[k])));
    }
    const Tensor& first = cache.features.front();
    const int c = first.channels;

    if (config_.region_attention) {
        cache.squeeze.assign(nr, {});
        cache.psi = Tensor(regions, first.height, first.width);
        for (std::size_t k = 0; k < nr; ++k) {
            const Tensor mu = region_squeeze(cache.features[k], squeeze_weights(params, static_cast<int>(k)),
                                             &cache.squeeze[k]);
            std::copy(mu.data.begin(), mu.data.end(),
                      cache.psi.data.begin() + static_cast<std::ptrdiff_t>(k * cache.psi.plane()));
        }
        region_attention(cache.psi, attention_weights(params), &cache.attention);
    } else {
        cache.attention = AttentionTrace{};
        cache.attention.alpha.assign(nr, 1.0);
    }
    const auto& alpha = cache.attention.alpha;

    cache.pooled = Matrix(regions, c);
    cache.weighted = Matrix(regions, c);
    for (std::size_t k = 0; k < nr; ++k) {
        const auto m = spatial_mean(cache.features[k]);
        for (int j = 0; j < c; ++j) {
            cache.pooled.at(static_cast<int>(k), j) = m[static_cast<std::size_t>(j)];
            cache.weighted.at(static_cast<int>(k), j) = alpha[k] * m[static_cast<std::size_t>(j)];
        }
    }

    cache.graph = build_graph(cache.weighted);
    cache.relational = gcn_forward(cache.graph.normalized, cache.graph, gcn_weight(params, 0), gcn_weight(params, 1), &cache.gcn);
    cache.aggregate = aggregate(cache.weighted, cache.relational);

    ForwardResult& r = cache.result;
    r.logits = linear(params.values(idx_->head_w), params.values(idx_->head_b), cache.aggregate.combined,
                      config_.classes);
    r.region_logits = Matrix(regions, config_.classes);
    for (int k = 0; k < regions; ++k) {
        const auto z = linear(params.values(idx_->region_head_w), params.values(idx_->region_head_b),
                              cache.weighted.row(k), config_.classes);
        std::copy(z.begin(), z.end(), r.region_logits.row(k).begin());
    }
    r.alpha = alpha;
    r.degenerate_regions = cache.graph.degenerate;
    return r;
}

void RrrnModel::backward(const ParameterSet& params, const ForwardCache& cache, const OutputGradient& grad,
                         ParameterSet& grads) const {
    if (!grads.same_layout(layout_)) throw Error(ErrorCode::ShapeMismatch, "gradient buffer layout mismatch");
    const int regions = config_.regions;
    const auto nr = static_cast<std::size_t>(regions);
    const int c = cache.weighted.cols;
    const auto& alpha = cache.attention.alpha;

    Matrix df(regions, c);
    Matrix dp2(regions, c);

    // Heads.
    if (!grad.logits.empty()) {
        const auto dfa = linear_backward(params.values(idx_->head_w), cache.aggregate.combined, grad.logits,
                                         grads.values(idx_->head_w), grads.values(idx_->head_b));
        for (int k = 0; k < regions; ++k) {
            for (int j = 0; j < c; ++j) {
                df.at(k, j) += dfa[static_cast<std::size_t>(j)] / regions;
                const double dr = dfa[static_cast<std::size_t>(c + j)] / regions;
                df.at(k, j) += dr;
                dp2.at(k, j) = dr;
            }
        }
    }
    if (grad.region_logits.rows == regions) {
        for (int k = 0; k < regions; ++k) {
            const auto dfk = linear_backward(params.values(idx_->region_head_w), cache.weighted.row(k),
                                             grad.region_logits.row(k), grads.values(idx_->region_head_w),
                                             grads.values(idx_->region_head_b));
            for (int j = 0; j < c; ++j) df.at(k, j) += dfk[static_cast<std::size_t>(j)];
        }
    }

    // Graph convolution.
    const RegionGraph& graph = cache.graph;
    const Matrix a = graph.propagation();
    const Matrix at = transpose(a);
    const GcnTrace& t = cache.gcn;
    Matrix dz1 = dp2;
    for (std::size_t i = 0; i < dz1.data.size(); ++i) {
        if (!(t.z1.data[i] > 0.0)) dz1.data[i] = 0.0;
    }
    Matrix da = matmul(dz1, transpose(t.m1));
    const Matrix dm1 = matmul(at, dz1);
    {
        const Matrix dw1 = matmul(transpose(t.p1), dm1);
        auto g = grads.values(idx_->gcn_w1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dw1.data[i];
    }
    Matrix dz0 = matmul(dm1, transpose(gcn_weight(params, 1)));
    for (std::size_t i = 0; i < dz0.data.size(); ++i) {
        if (!(t.z0.data[i] > 0.0)) dz0.data[i] = 0.0;
    }
    {
        const Matrix da0 = matmul(dz0, transpose(t.m0));
        for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += da0.data[i];
    }
    const Matrix dm0 = matmul(at, dz0);
    {
        const Matrix dw0 = matmul(transpose(graph.normalized), dm0);
        auto g = grads.values(idx_->gcn_w0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dw0.data[i];
    }
    // The graph convolves the unit-normalized nodes, so dp0 joins the cosine path below.
    const Matrix dp0 = matmul(dm0, transpose(gcn_weight(params, 0)));

    // Row normalization and cosine similarity back to the node features.
    Matrix dgamma(regions, regions);
    for (int i = 0; i < regions; ++i) {
        const double d = graph.degree[static_cast<std::size_t>(i)];
        double s = 0.0;
        for (int j = 0; j < regions; ++j) s += da.at(i, j) * graph.gamma.at(i, j);
        for (int j = 0; j < regions; ++j) dgamma.at(i, j) = da.at(i, j) / d - s / (d * d);
    }
    for (int i = 0; i < regions; ++i) {
        if (graph.degenerate[static_cast<std::size_t>(i)]) continue;
        std::vector<double> dn(dp0.row(i).begin(), dp0.row(i).end());
        for (int j = 0; j < regions; ++j) {
            if (j == i) continue;
            const double w = dgamma.at(i, j) + dgamma.at(j, i);
            for (int q = 0; q < c; ++q) dn[static_cast<std::size_t>(q)] += w * graph.normalized.at(j, q);
        }
        double proj = 0.0;
        for (int q = 0; q < c; ++q) proj += graph.normalized.at(i, q) * dn[static_cast<std::size_t>(q)];
        const double norm = graph.norms[static_cast<std::size_t>(i)];
        for (int q = 0; q < c; ++q) {
            df.at(i, q) += (dn[static_cast<std::size_t>(q)] - graph.normalized.at(i, q) * proj) / norm;
        }
    }

    // f_k = alpha_k * mean(p_k).
    std::vector<double> dalpha(nr, 0.0);
    if (grad.alpha.size() == nr) dalpha = grad.alpha;
    std::vector<Tensor> dp(nr);
    for (std::size_t k = 0; k < nr; ++k) {
        const Tensor& p = cache.features[k];
        dp[k] = Tensor(p.channels, p.height, p.width);
        const double inv_plane = 1.0 / static_cast<double>(p.plane());
        for (int j = 0; j < c; ++j) {
            dalpha[k] += df.at(static_cast<int>(k), j) * cache.pooled.at(static_cast<int>(k), j);
            const double g = alpha[k] * df.at(static_cast<int>(k), j) * inv_plane;
            std::fill_n(dp[k].data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(j) * p.plane()),
                        p.plane(), g);
        }
    }

    if (config_.region_attention) {
        const AttentionWeights w = attention_weights(params);
        const AttentionTrace& at_trace = cache.attention;
        std::vector<double> dz(nr);
        for (std::size_t k = 0; k < nr; ++k) dz[k] = dalpha[k] * alpha[k] * (1.0 - alpha[k]);
        auto dw0 = grads.values(idx_->att_w0);
        auto db0 = grads.values(idx_->att_b0);
        auto dw1 = grads.values(idx_->att_w1);
        auto db1 = grads.values(idx_->att_b1);
        const auto hidden = static_cast<std::size_t>(w.hidden);
        auto branch = [&](const std::vector<double>& v, const std::vector<double>& pre) {
            std::vector<double> dh(hidden, 0.0);
            for (std::size_t k = 0; k < nr; ++k) {
                db1[k] += dz[k];
                for (std::size_t h = 0; h < hidden; ++h) {
                    dw1[k * hidden + h] += dz[k] * std::max(0.0, pre[h]);
                    dh[h] += dz[k] * w.w1[k * hidden + h];
                }
            }
            std::vector<double> dv(nr, 0.0);
            for (std::size_t h = 0; h < hidden; ++h) {
                if (!(pre[h] > 0.0)) continue;
                db0[h] += dh[h];
                for (std::size_t k = 0; k < nr; ++k) {
                    dw0[h * nr + k] += dh[h] * v[k];
                    dv[k] += dh[h] * w.w0[h * nr + k];
                }
            }
            return dv;
        };
        const auto dv_avg = branch(at_trace.avg, at_trace.pre_avg);
        const auto dv_max = branch(at_trace.max, at_trace.pre_max);

        for (std::size_t k = 0; k < nr; ++k) {
            const Tensor& p = cache.features[k];
            const SqueezeTrace& sq = cache.squeeze[k];
            Tensor dmu(1, p.height, p.width, dv_avg[k] / static_cast<double>(p.plane()));
            dmu.data[static_cast<std::size_t>(at_trace.argmax[k])] += dv_max[k];
            const Tensor dpooled = conv2d_backward(sq.pooled, dmu, params.values(idx_->f2_weight[k]),
                                                   grads.values(idx_->f2_weight[k]), grads.values(idx_->f2_bias[k]),
                                                   ConvShape{2, 1, 3, 1, 1});
            const Tensor df1 = channel_avg_max_backward(sq.f1_out, dpooled, sq.argmax_channel);
            const Tensor dpk = conv2d_backward(p, df1, params.values(idx_->f1_weight[k]),
                                               grads.values(idx_->f1_weight[k]), grads.values(idx_->f1_bias[k]),
                                               ConvShape{c, c, 3, 1, 1});
            add_into(dp[k], dpk);
        }
    }

    const int half = config_.backbone.stream_channels;
    for (std::size_t k = 0; k < nr; ++k) {
        vertical_->backward(params, cache.vertical[k], channel_slice(dp[k], 0, half), grads);
        horizontal_->backward(params, cache.horizontal[k], channel_slice(dp[k], half, half), grads);
    }
}

SampleLoss sample_loss(const RrrnModel& model, const ParameterSet& params, const RegionStack& stack, int label,
                       const LossWeights& weights, ParameterSet* grads, double scale) {
    ForwardCache cache;
    SampleLoss out;
    out.output = model.forward(params, stack, cache);
    const bool attention = model.config().region_attention;
    out.components.cls = cross_entropy(out.output.logits, label);
    out.components.rb = attention ? rb_loss(out.output.alpha, weights.beta) : 0.0;
    out.components.cor = cor_loss(out.output.region_logits, out.output.logits, label);
    out.total = total_loss(out.components, weights);
    if (!grads) return out;

    OutputGradient g;
    g.logits = cross_entropy_grad(out.output.logits, label);
    const auto cor = cor_loss_grad(out.output.region_logits, out.output.logits, label);
    for (std::size_t i = 0; i < g.logits.size(); ++i) g.logits[i] = scale * (g.logits[i] + weights.lambda2 * cor.logits[i]);
    g.region_logits = cor.region_logits;
    for (auto& v : g.region_logits.data) v *= scale * weights.lambda2;
    if (attention) {
        g.alpha = rb_loss_grad(out.output.alpha, weights.beta);
        for (auto& v : g.alpha) v *= scale * weights.lambda1;
    }
    model.backward(params, cache, g, *grads);
    return out;
}

}  // namespace rrrn
