#include "rrrn/losses.hpp"

#include <algorithm>
#include <cmath>

#include "rrrn/error.hpp"

namespace rrrn {

namespace {

void check_label(std::span<const double> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size())) {
        throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " outside [0, " +
                                                    std::to_string(logits.size()) + ")");
    }
}

std::vector<double> softmax(std::span<const double> logits) {
    auto out = log_softmax(logits);
    for (auto& v : out) v = std::exp(v);
    return out;
}

}  // namespace

void LossWeights::validate() const {
    if (beta < 0.0 || lambda1 < 0.0 || lambda2 < 0.0) {
        throw Error(ErrorCode::InvalidConfig, "loss weights and margin must be non-negative");
    }
}

double total_loss(const LossComponents& c, const LossWeights& w) {
    return c.cls + w.lambda1 * c.rb + w.lambda2 * c.cor;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

double cross_entropy(std::span<const double> logits, int label) {
    check_label(logits, label);
    return -log_softmax(logits)[static_cast<std::size_t>(label)];
}

double cross_entropy(const std::vector<std::vector<double>>& logits, std::span<const int> labels) {
    if (logits.size() != labels.size() || logits.empty()) {
        throw Error(ErrorCode::ShapeMismatch, "cross_entropy needs one label per non-empty batch row");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += cross_entropy(logits[i], labels[i]);
    return sum / static_cast<double>(logits.size());
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, int label) {
    check_label(logits, label);
    auto g = softmax(logits);
    g[static_cast<std::size_t>(label)] -= 1.0;
    return g;
}

double rb_loss(std::span<const double> alpha, double beta) {
    if (alpha.size() < 2) throw Error(ErrorCode::ShapeMismatch, "rb_loss needs the original region and at least one crop");
    const double best_crop = *std::max_element(alpha.begin() + 1, alpha.end());
    return std::max(0.0, beta - (best_crop - alpha[0]));
}

std::vector<double> rb_loss_grad(std::span<const double> alpha, double beta) {
    std::vector<double> g(alpha.size(), 0.0);
    const auto best = std::max_element(alpha.begin() + 1, alpha.end());
    if (beta - (*best - alpha[0]) > 0.0) {
        g[0] = 1.0;
        g[static_cast<std::size_t>(best - alpha.begin())] = -1.0;
    }
    return g;
}

double cor_loss(const Matrix& region_logits, std::span<const double> logits, int label) {
    check_label(logits, label);
    if (region_logits.cols != static_cast<int>(logits.size())) {
        throw Error(ErrorCode::ShapeMismatch, "region logits and logits differ in class count");
    }
    const double log_pa = log_softmax(logits)[static_cast<std::size_t>(label)];
    double loss = 0.0;
    for (int k = 0; k < region_logits.rows; ++k) {
        const double log_pk = log_softmax(region_logits.row(k))[static_cast<std::size_t>(label)];
        loss += std::max(0.0, log_pk - log_pa);
    }
    return loss;
}

CorLossGrad cor_loss_grad(const Matrix& region_logits, std::span<const double> logits, int label) {
    check_label(logits, label);
    CorLossGrad g{Matrix(region_logits.rows, region_logits.cols), std::vector<double>(logits.size(), 0.0)};
    const double log_pa = log_softmax(logits)[static_cast<std::size_t>(label)];
    // d log p_y / d z = onehot - softmax
    const auto pa = softmax(logits);
    int active = 0;
    for (int k = 0; k < region_logits.rows; ++k) {
        const auto log_pk = log_softmax(region_logits.row(k));
        if (log_pk[static_cast<std::size_t>(label)] - log_pa <= 0.0) continue;
        ++active;
        for (int c = 0; c < region_logits.cols; ++c) {
            g.region_logits.at(k, c) = (c == label ? 1.0 : 0.0) - std::exp(log_pk[static_cast<std::size_t>(c)]);
        }
    }
    for (std::size_t c = 0; c < logits.size(); ++c) {
        g.logits[c] = -static_cast<double>(active) * ((static_cast<int>(c) == label ? 1.0 : 0.0) - pa[c]);
    }
    return g;
}

}  // namespace rrrn
