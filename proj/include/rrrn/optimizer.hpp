#pragma once

#include "rrrn/tensor.hpp"

namespace rrrn {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Adam with bias-corrected moment estimates.
class Adam {
public:
    Adam(const ParameterSet& layout, AdamOptions options);

    void step(ParameterSet& params, const ParameterSet& grads, double learning_rate);

    const AdamOptions& options() const { return options_; }
    long long steps() const { return t_; }
    const ParameterSet& first_moment() const { return m_; }
    const ParameterSet& second_moment() const { return v_; }
    /// Restores a saved state; layouts must match.
    void restore(ParameterSet m, ParameterSet v, long long steps);

private:
    AdamOptions options_;
    ParameterSet m_;
    ParameterSet v_;
    long long t_ = 0;
};

}  // namespace rrrn
