#pragma once

#include <span>
#include <vector>

#include "rrrn/tensor.hpp"

namespace rrrn {

struct ConvShape {
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int padding = 1;

    int output_extent(int input) const { return (input + 2 * padding - kernel) / stride + 1; }
    int weight_count() const { return out_channels * in_channels * kernel * kernel; }
};

/// Weight layout [out][in][ky][kx]; bias may be empty.
Tensor conv2d_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                      const ConvShape& shape);

/// Accumulates into grad_weight / grad_bias; returns dL/dx when `want_input_grad`.
Tensor conv2d_backward(const Tensor& x, const Tensor& grad_out, std::span<const double> weight,
                       std::span<double> grad_weight, std::span<double> grad_bias, const ConvShape& shape,
                       bool want_input_grad = true);

void relu_inplace(Tensor& x);
/// Zeroes grad where the forward output was not positive.
void relu_backward_inplace(const Tensor& output, Tensor& grad);

struct PoolIndex {
    std::vector<int> argmax;  // flat source index per output element
};

Tensor max_pool2d_forward(const Tensor& x, int kernel, int stride, int padding, PoolIndex& index);
Tensor max_pool2d_backward(const Tensor& x, const Tensor& grad_out, const PoolIndex& index);

/// Per-pixel mean and max over channels: output is 2 x H x W (avg first).
Tensor channel_avg_max(const Tensor& x, std::vector<int>& argmax_channel);
Tensor channel_avg_max_backward(const Tensor& x, const Tensor& grad_out, const std::vector<int>& argmax_channel);

/// Spatial mean of every channel.
std::vector<double> spatial_mean(const Tensor& x);

double sigmoid(double z);

}  // namespace rrrn
