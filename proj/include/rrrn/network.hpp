#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rrrn/dataset.hpp"
#include "rrrn/flow.hpp"
#include "rrrn/layers.hpp"
#include "rrrn/losses.hpp"
#include "rrrn/tensor.hpp"

namespace rrrn {

enum class BackboneVariant { ToyCnn, Resnet18Style };

std::string_view to_string(BackboneVariant v);
std::optional<BackboneVariant> parse_backbone_variant(std::string_view text);

struct BackboneConfig {
    BackboneVariant variant = BackboneVariant::ToyCnn;
    int stream_channels = 8;  // C/2 per stream; C = 2 * stream_channels
    int input_size = 32;      // S
    bool pretrained_init = false;

    int feature_channels() const { return 2 * stream_channels; }
    /// Spatial extent H = W of the backbone output.
    int output_extent() const;
    void validate() const;
};

struct ModelConfig {
    BackboneConfig backbone;
    int regions = kRegionCount;  // K + 1
    int reduction = 2;           // attention MLP reduction ratio r
    int classes = kNumClasses;
    /// false gives the un-weighted relation-only variant (alpha fixed at 1).
    bool region_attention = true;

    int attention_hidden() const { return (regions + reduction - 1) / reduction; }
    void validate() const;
};

struct StreamCache {
    std::vector<Tensor> activations;
    std::vector<PoolIndex> pools;
};

/// One backbone stream (single-channel flow crop -> C/2 x H x W map).
class Stream {
public:
    virtual ~Stream() = default;
    virtual Tensor forward(const ParameterSet& params, const Tensor& x, StreamCache* cache) const = 0;
    virtual void backward(const ParameterSet& params, const StreamCache& cache, Tensor grad_out,
                          ParameterSet& grads) const = 0;
};

struct SqueezeWeights {
    std::span<const double> f1_weight, f1_bias;  // C -> C, 3x3
    std::span<const double> f2_weight, f2_bias;  // 2 -> 1, 3x3
};

struct SqueezeTrace {
    Tensor f1_out;
    Tensor pooled;  // [channel-avg; channel-max]
    std::vector<int> argmax_channel;
};

/// mu = F2([avg_c(F1(p)); max_c(F1(p))]), 1 x H x W.
Tensor region_squeeze(const Tensor& p, const SqueezeWeights& weights, SqueezeTrace* trace = nullptr);

struct AttentionWeights {
    std::span<const double> w0, b0;  // hidden x regions, hidden
    std::span<const double> w1, b1;  // regions x hidden, regions
    int regions = kRegionCount;
    int hidden = 3;
};

struct AttentionTrace {
    std::vector<double> avg, max;
    std::vector<int> argmax;  // flat spatial index per region
    std::vector<double> pre_avg, pre_max;  // hidden pre-activations
    std::vector<double> alpha;
};

/// alpha = sigmoid(MLP(avgpool(psi)) + MLP(maxpool(psi))) over a (K+1) x H x W stack.
std::vector<double> region_attention(const Tensor& psi, const AttentionWeights& weights,
                                     AttentionTrace* trace = nullptr);

/// f_k = spatial mean of alpha_k * p_k, one row per region.
Matrix weight_regions(const std::vector<Tensor>& features, std::span<const double> alpha);

struct RegionGraph {
    Matrix normalized;                // L2-normalized node features
    std::vector<double> norms;
    std::vector<bool> degenerate;     // zero rows replaced by the uniform unit vector
    Matrix gamma;                     // cosine similarities, unit diagonal
    std::vector<double> degree;       // D_kk = sum_i gamma_ki

    /// D^-1 Gamma.
    Matrix propagation() const;
    bool any_degenerate() const;
};

RegionGraph build_graph(const Matrix& features);

struct GcnTrace {
    Matrix z0, m0, p1, z1, m1;
};

/// P(l+1) = relu(D^-1 Gamma P(l) W(l)) for l = 0, 1.
Matrix gcn_forward(const Matrix& p0, const RegionGraph& graph, const Matrix& w0, const Matrix& w1,
                   GcnTrace* trace = nullptr);

struct AggregateFeature {
    std::vector<double> region;    // f_A = mean_k f_k
    std::vector<double> relation;  // f_G = mean_k (F2_k + f_k)
    std::vector<double> combined;  // f_a = [f_A; f_G]
};

AggregateFeature aggregate(const Matrix& weighted, const Matrix& relational);

struct ForwardResult {
    std::vector<double> logits;  // main head, one per class
    Matrix region_logits;        // (K+1) x classes from the shared region head
    std::vector<double> alpha;
    std::vector<bool> degenerate_regions;

    int predicted_class() const;
};

struct ForwardCache;

struct OutputGradient {
    std::vector<double> logits;
    Matrix region_logits;
    std::vector<double> alpha;
};

class RrrnModel {
public:
    explicit RrrnModel(ModelConfig config);
    ~RrrnModel();
    RrrnModel(RrrnModel&&) noexcept;
    RrrnModel& operator=(RrrnModel&&) noexcept;

    const ModelConfig& config() const { return config_; }
    /// Zero-filled parameter layout.
    const ParameterSet& layout() const { return layout_; }

    /// Fan-in uniform init; biases zero. With `zero_attention_output` the last
    /// attention layer starts at zero so every alpha begins at 0.5.
    ParameterSet initialize(std::uint64_t seed, bool zero_attention_output = true) const;

    ForwardResult forward(const ParameterSet& params, const RegionStack& stack) const;
    ForwardResult forward(const ParameterSet& params, const RegionStack& stack, ForwardCache& cache) const;
    void backward(const ParameterSet& params, const ForwardCache& cache, const OutputGradient& grad,
                  ParameterSet& grads) const;

    /// p_k = [vertical(x_v^k); horizontal(x_h^k)] for every region.
    std::vector<Tensor> backbone_forward(const ParameterSet& params, const RegionStack& stack) const;

    const Stream& vertical_stream() const { return *vertical_; }
    const Stream& horizontal_stream() const { return *horizontal_; }
    SqueezeWeights squeeze_weights(const ParameterSet& params, int region) const;
    AttentionWeights attention_weights(const ParameterSet& params) const;
    Matrix gcn_weight(const ParameterSet& params, int layer) const;

private:
    struct Indices;

    ModelConfig config_;
    ParameterSet layout_;
    std::unique_ptr<Stream> vertical_;
    std::unique_ptr<Stream> horizontal_;
    std::unique_ptr<Indices> idx_;
};

struct ForwardCache {
    std::vector<StreamCache> vertical, horizontal;
    std::vector<Tensor> features;  // p_k
    std::vector<SqueezeTrace> squeeze;
    Tensor psi;
    AttentionTrace attention;
    Matrix pooled;    // spatial mean of p_k
    Matrix weighted;  // f
    RegionGraph graph;
    GcnTrace gcn;
    Matrix relational;  // F2
    AggregateFeature aggregate;
    ForwardResult result;
};

struct SampleLoss {
    LossComponents components;
    double total = 0.0;
    ForwardResult output;
};

/// Forward pass plus the three loss terms for one labelled sample. When
/// `grads` is given, accumulates scale * dL/dparams into it.
SampleLoss sample_loss(const RrrnModel& model, const ParameterSet& params, const RegionStack& stack, int label,
                       const LossWeights& weights, ParameterSet* grads = nullptr, double scale = 1.0);

Tensor to_tensor(const Grid& grid);

}  // namespace rrrn
