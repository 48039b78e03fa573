#pragma once

#include <span>
#include <vector>

#include "rrrn/tensor.hpp"

namespace rrrn {

struct LossWeights {
    double beta = 0.02;    // RB margin
    double lambda1 = 1.0;  // RB weight
    double lambda2 = 0.2;  // Cor weight

    void validate() const;
};

struct LossComponents {
    double cls = 0.0;
    double rb = 0.0;
    double cor = 0.0;
};

/// L = cls + lambda1 * rb + lambda2 * cor
double total_loss(const LossComponents& components, const LossWeights& weights);

/// Max-shifted log-softmax.
std::vector<double> log_softmax(std::span<const double> logits);

double cross_entropy(std::span<const double> logits, int label);
/// Batch mean of per-sample cross-entropy.
double cross_entropy(const std::vector<std::vector<double>>& logits, std::span<const int> labels);
/// d cross_entropy / d logits = softmax - onehot.
std::vector<double> cross_entropy_grad(std::span<const double> logits, int label);

/// max{0, beta - (max_{k>=1} alpha_k - alpha_0)}
double rb_loss(std::span<const double> alpha, double beta);
/// Subgradient; zero at and beyond the hinge. Ties for the max go to the lowest index.
std::vector<double> rb_loss_grad(std::span<const double> alpha, double beta);

/// sum_k max{0, log P_k(y) - log P_a(y)} with P = softmax(.)[y].
double cor_loss(const Matrix& region_logits, std::span<const double> logits, int label);

struct CorLossGrad {
    Matrix region_logits;
    std::vector<double> logits;
};
CorLossGrad cor_loss_grad(const Matrix& region_logits, std::span<const double> logits, int label);

}  // namespace rrrn
