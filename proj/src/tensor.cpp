#include "rrrn/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "rrrn/error.hpp"

namespace rrrn {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw Error(ErrorCode::ShapeMismatch, "matmul inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols; ++j) out.at(i, j) += aik * b.at(k, j);
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    }
    return out;
}

int ParameterSet::add(std::string name, std::vector<int> shape) {
    if (find(name) >= 0) throw Error(ErrorCode::InvalidConfig, "duplicate parameter name " + name);
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
    tensors_.push_back({std::move(name), std::move(shape), std::vector<double>(n, 0.0)});
    return static_cast<int>(tensors_.size()) - 1;
}

int ParameterSet::find(std::string_view name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.values.size();
    return n;
}

ParameterSet ParameterSet::zeros_like() const {
    ParameterSet out = *this;
    out.fill(0.0);
    return out;
}

void ParameterSet::fill(double value) {
    for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), value);
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape) return false;
    }
    return true;
}

}  // namespace rrrn
