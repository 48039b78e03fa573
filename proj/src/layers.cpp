#include "rrrn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rrrn/error.hpp"

namespace rrrn {

Tensor conv2d_forward(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
                      const ConvShape& s) {
    if (x.channels != s.in_channels) throw Error(ErrorCode::ShapeMismatch, "conv input channel mismatch");
    if (weight.size() != static_cast<std::size_t>(s.weight_count())) {
        throw Error(ErrorCode::ShapeMismatch, "conv weight size mismatch");
    }
    const int oh = s.output_extent(x.height), ow = s.output_extent(x.width);
    if (oh < 1 || ow < 1) throw Error(ErrorCode::ShapeMismatch, "conv input smaller than kernel");
    Tensor y(s.out_channels, oh, ow);
    const int k = s.kernel;
    for (int o = 0; o < s.out_channels; ++o) {
        double* out = &y.data[static_cast<std::size_t>(o) * oh * ow];
        if (!bias.empty()) std::fill(out, out + static_cast<std::size_t>(oh) * ow, bias[o]);
        for (int i = 0; i < s.in_channels; ++i) {
            const double* in = &x.data[static_cast<std::size_t>(i) * x.plane()];
            const double* w = &weight[(static_cast<std::size_t>(o) * s.in_channels + i) * k * k];
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = w[ky * k + kx];
                    if (wv == 0.0) continue;
                    for (int yy = 0; yy < oh; ++yy) {
                        const int iy = yy * s.stride - s.padding + ky;
                        if (iy < 0 || iy >= x.height) continue;
                        const double* in_row = in + static_cast<std::size_t>(iy) * x.width;
                        double* out_row = out + static_cast<std::size_t>(yy) * ow;
                        for (int xx = 0; xx < ow; ++xx) {
                            const int ix = xx * s.stride - s.padding + kx;
                            if (ix < 0 || ix >= x.width) continue;
                            out_row[xx] += wv * in_row[ix];
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor conv2d_backward(const Tensor& x, const Tensor& g, std::span<const double> weight,
                       std::span<double> grad_weight, std::span<double> grad_bias, const ConvShape& s,
                       bool want_input_grad) {
    const int oh = g.height, ow = g.width, k = s.kernel;
    Tensor dx;
    if (want_input_grad) dx = Tensor(x.channels, x.height, x.width);
    for (int o = 0; o < s.out_channels; ++o) {
        const double* go = &g.data[static_cast<std::size_t>(o) * oh * ow];
        if (!grad_bias.empty()) {
            double acc = 0.0;
            for (int n = 0; n < oh * ow; ++n) acc += go[n];
            grad_bias[o] += acc;
        }
        for (int i = 0; i < s.in_channels; ++i) {
            const double* in = &x.data[static_cast<std::size_t>(i) * x.plane()];
            double* din = want_input_grad ? &dx.data[static_cast<std::size_t>(i) * x.plane()] : nullptr;
            const std::size_t wbase = (static_cast<std::size_t>(o) * s.in_channels + i) * k * k;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double wv = weight[wbase + ky * k + kx];
                    double acc = 0.0;
                    for (int yy = 0; yy < oh; ++yy) {
                        const int iy = yy * s.stride - s.padding + ky;
                        if (iy < 0 || iy >= x.height) continue;
                        const double* in_row = in + static_cast<std::size_t>(iy) * x.width;
                        const double* g_row = go + static_cast<std::size_t>(yy) * ow;
                        double* din_row = din ? din + static_cast<std::size_t>(iy) * x.width : nullptr;
                        for (int xx = 0; xx < ow; ++xx) {
                            const int ix = xx * s.stride - s.padding + kx;
                            if (ix < 0 || ix >= x.width) continue;
                            acc += g_row[xx] * in_row[ix];
                            if (din_row) din_row[ix] += g_row[xx] * wv;
                        }
                    }
                    grad_weight[wbase + ky * k + kx] += acc;
                }
            }
        }
    }
    return dx;
}

void relu_inplace(Tensor& x) {
    for (auto& v : x.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& output, Tensor& grad) {
    for (std::size_t n = 0; n < grad.data.size(); ++n) {
        if (!(output.data[n] > 0.0)) grad.data[n] = 0.0;
    }
}

Tensor max_pool2d_forward(const Tensor& x, int kernel, int stride, int padding, PoolIndex& index) {
    const int oh = (x.height + 2 * padding - kernel) / stride + 1;
    const int ow = (x.width + 2 * padding - kernel) / stride + 1;
    Tensor y(x.channels, oh, ow);
    index.argmax.assign(y.size(), -1);
    for (int c = 0; c < x.channels; ++c) {
        for (int yy = 0; yy < oh; ++yy) {
            for (int xx = 0; xx < ow; ++xx) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = -1;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int iy = yy * stride - padding + ky;
                    if (iy < 0 || iy >= x.height) continue;
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int ix = xx * stride - padding + kx;
                        if (ix < 0 || ix >= x.width) continue;
                        const double v = x.at(c, iy, ix);
                        if (v > best) {
                            best = v;
                            best_idx = (c * x.height + iy) * x.width + ix;
                        }
                    }
                }
                y.at(c, yy, xx) = best;
                index.argmax[(static_cast<std::size_t>(c) * oh + yy) * ow + xx] = best_idx;
            }
        }
    }
    return y;
}

Tensor max_pool2d_backward(const Tensor& x, const Tensor& grad_out, const PoolIndex& index) {
    Tensor dx(x.channels, x.height, x.width);
    for (std::size_t n = 0; n < grad_out.data.size(); ++n) {
        if (index.argmax[n] >= 0) dx.data[static_cast<std::size_t>(index.argmax[n])] += grad_out.data[n];
    }
    return dx;
}

Tensor channel_avg_max(const Tensor& x, std::vector<int>& argmax_channel) {
    Tensor y(2, x.height, x.width);
    const std::size_t plane = x.plane();
    argmax_channel.assign(plane, 0);
    for (std::size_t p = 0; p < plane; ++p) {
        double sum = 0.0;
        double best = -std::numeric_limits<double>::infinity();
        int best_c = 0;
        for (int c = 0; c < x.channels; ++c) {
            const double v = x.data[static_cast<std::size_t>(c) * plane + p];
            sum += v;
            if (v > best) {
                best = v;
                best_c = c;
            }
        }
        y.data[p] = sum / x.channels;
        y.data[plane + p] = best;
        argmax_channel[p] = best_c;
    }
    return y;
}

Tensor channel_avg_max_backward(const Tensor& x, const Tensor& grad_out, const std::vector<int>& argmax_channel) {
    Tensor dx(x.channels, x.height, x.width);
    const std::size_t plane = x.plane();
    for (std::size_t p = 0; p < plane; ++p) {
        const double g_avg = grad_out.data[p] / x.channels;
        for (int c = 0; c < x.channels; ++c) dx.data[static_cast<std::size_t>(c) * plane + p] += g_avg;
        dx.data[static_cast<std::size_t>(argmax_channel[p]) * plane + p] += grad_out.data[plane + p];
    }
    return dx;
}

std::vector<double> spatial_mean(const Tensor& x) {
    std::vector<double> out(static_cast<std::size_t>(x.channels), 0.0);
    const std::size_t plane = x.plane();
    for (int c = 0; c < x.channels; ++c) {
        double sum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) sum += x.data[static_cast<std::size_t>(c) * plane + p];
        out[static_cast<std::size_t>(c)] = sum / static_cast<double>(plane);
    }
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace rrrn
