#include "rrrn/optimizer.hpp"

#include <cmath>

#include "rrrn/error.hpp"

namespace rrrn {

void AdamOptions::validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "adam needs 0 <= beta < 1 and epsilon > 0");
    }
}

Adam::Adam(const ParameterSet& layout, AdamOptions options)
    : options_(options), m_(layout.zeros_like()), v_(layout.zeros_like()) {
    options_.validate();
}

void Adam::step(ParameterSet& params, const ParameterSet& grads, double lr) {
    if (!params.same_layout(m_) || !grads.same_layout(m_)) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameter layout");
    }
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (int i = 0; i < params.count(); ++i) {
        auto p = params.values(i);
        const auto g = grads.values(i);
        auto m = m_.values(i);
        auto v = v_.values(i);
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
        }
    }
}

void Adam::restore(ParameterSet m, ParameterSet v, long long steps) {
    if (!m.same_layout(m_) || !v.same_layout(v_)) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state layout mismatch");
    }
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = steps;
}

}  // namespace rrrn
