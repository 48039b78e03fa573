#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rrrn {

/// Channel-major (C x H x W) feature map.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

/// Row-major dense matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
};

/// Named parameter tensors in registration order. Gradients and optimizer
/// moments use a ParameterSet with the same layout.
class ParameterSet {
public:
    int add(std::string name, std::vector<int> shape);

    std::span<double> values(int index) { return tensors_[static_cast<std::size_t>(index)].values; }
    std::span<const double> values(int index) const { return tensors_[static_cast<std::size_t>(index)].values; }
    const ParamTensor& tensor(int index) const { return tensors_[static_cast<std::size_t>(index)]; }
    ParamTensor& tensor(int index) { return tensors_[static_cast<std::size_t>(index)]; }
    int count() const { return static_cast<int>(tensors_.size()); }
    int find(std::string_view name) const;  // -1 when absent
    std::size_t scalar_count() const;

    ParameterSet zeros_like() const;
    void fill(double value);
    bool same_layout(const ParameterSet& other) const;

    const std::vector<ParamTensor>& tensors() const { return tensors_; }

private:
    std::vector<ParamTensor> tensors_;
};

}  // namespace rrrn
