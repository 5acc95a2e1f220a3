#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mlns/common.hpp"

namespace mlns {

// Dense 4D activation tensor, row-major within (channel, height, width).
struct Tensor4 {
    int batch = 0, channels = 0, height = 0, width = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int b, int c, int h, int w)
        : batch(b), channels(c), height(h), width(w),
          data(static_cast<size_t>(b) * c * h * w, 0.0) {}

    size_t size() const { return data.size(); }

    size_t offset(int b, int c, int h, int w) const {
        return ((static_cast<size_t>(b) * channels + c) * height + h) * width + w;
    }
    double& at(int b, int c, int h, int w) { return data[offset(b, c, h, w)]; }
    double at(int b, int c, int h, int w) const { return data[offset(b, c, h, w)]; }

    // per-sample plane size
    size_t sample_size() const { return static_cast<size_t>(channels) * height * width; }
};

// Plain convolution geometry: square stride, zero padding.
struct ConvGeometry {
    int in_channels = 0, out_channels = 0;
    int kernel_h = 0, kernel_w = 0;
    int stride = 1, padding = 0;

    int out_h(int in_h) const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
    int patch_rows() const { return in_channels * kernel_h * kernel_w; }
    int block_size() const { return kernel_h * kernel_w; }

    void validate(int in_h, int in_w) const;
};

struct ChannelBlock {
    int channel = 0;
    int row_begin = 0;
    int row_end = 0;  // exclusive
};

// The unrolled input matrix: column m is the flattened receptive-field patch
// of output pixel m, rows grouped channel-major so each input channel owns a
// contiguous block of Z = kernel_h*kernel_w rows.
struct UnrolledInput {
    int rows = 0;  // K = IC*H*W
    int cols = 0;  // M = OH*OW
    std::vector<double> data;  // row-major K x M
    std::vector<ChannelBlock> channel_blocks;

    UnrolledInput() = default;
    UnrolledInput(int k, int m) : rows(k), cols(m), data(static_cast<size_t>(k) * m, 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return &data[static_cast<size_t>(r) * cols]; }
    const double* row(int r) const { return &data[static_cast<size_t>(r) * cols]; }
};

// Unroll one sample of `input` into patch columns (zero padding is implicit).
UnrolledInput im2col(const Tensor4& input, int sample, const ConvGeometry& geom);

// Exact adjoint of im2col: scatter-add patch gradients back onto the spatial
// grid. Returns a single-sample tensor (batch = 1).
Tensor4 col2im(const UnrolledInput& grad, const ConvGeometry& geom, int in_h, int in_w);

struct ChannelMoments {
    std::vector<double> mean;
    std::vector<double> variance;  // population
};

// Per-channel mean and population variance over every entry of each channel
// block, across all samples in the batch.
ChannelMoments channel_moments(std::span<const UnrolledInput> batch);

}  // namespace mlns
