#include "mlns/tensor.hpp"

#include <stdexcept>
#include <string>

namespace mlns {

void ConvGeometry::validate(int in_h, int in_w) const {
    auto fail = [&](const std::string& msg) {
        throw std::invalid_argument(
            "conv geometry mismatch: " + msg + " (in=" + std::to_string(in_channels) + "x" +
            std::to_string(in_h) + "x" + std::to_string(in_w) + ", kernel=" +
            std::to_string(kernel_h) + "x" + std::to_string(kernel_w) + ", stride=" +
            std::to_string(stride) + ", pad=" + std::to_string(padding) + ")");
    };
    if (in_channels <= 0 || out_channels <= 0) fail("channel counts must be positive");
    if (kernel_h <= 0 || kernel_w <= 0) fail("kernel dims must be positive");
    if (stride <= 0) fail("stride must be positive");
    if (padding < 0) fail("padding must be nonnegative");
    if (out_h(in_h) < 1 || out_w(in_w) < 1) fail("output dims collapse below 1");
}

UnrolledInput im2col(const Tensor4& input, int sample, const ConvGeometry& geom) {
    if (sample < 0 || sample >= input.batch)
        throw std::invalid_argument("im2col: sample index out of range");
    if (input.channels != geom.in_channels)
        throw std::invalid_argument("im2col: input has " + std::to_string(input.channels) +
                                    " channels, geometry expects " +
                                    std::to_string(geom.in_channels));
    geom.validate(input.height, input.width);

    const int oh = geom.out_h(input.height);
    const int ow = geom.out_w(input.width);
    const int z = geom.block_size();
    UnrolledInput u(geom.patch_rows(), oh * ow);

    for (int c = 0; c < geom.in_channels; ++c) {
        u.channel_blocks.push_back({c, c * z, (c + 1) * z});
        for (int kh = 0; kh < geom.kernel_h; ++kh) {
            for (int kw = 0; kw < geom.kernel_w; ++kw) {
                const int row = (c * geom.kernel_h + kh) * geom.kernel_w + kw;
                double* dst = u.row(row);
                for (int y = 0; y < oh; ++y) {
                    const int ih = y * geom.stride - geom.padding + kh;
                    const bool row_in = ih >= 0 && ih < input.height;
                    for (int x = 0; x < ow; ++x) {
                        const int iw = x * geom.stride - geom.padding + kw;
                        dst[y * ow + x] = (row_in && iw >= 0 && iw < input.width)
                                              ? input.at(sample, c, ih, iw)
                                              : 0.0;
                    }
                }
            }
        }
    }
    return u;
}

Tensor4 col2im(const UnrolledInput& grad, const ConvGeometry& geom, int in_h, int in_w) {
    geom.validate(in_h, in_w);
    const int oh = geom.out_h(in_h);
    const int ow = geom.out_w(in_w);
    if (grad.rows != geom.patch_rows() || grad.cols != oh * ow)
        throw std::invalid_argument("col2im: matrix is " + std::to_string(grad.rows) + "x" +
                                    std::to_string(grad.cols) + ", geometry expects " +
                                    std::to_string(geom.patch_rows()) + "x" +
                                    std::to_string(oh * ow));

    Tensor4 out(1, geom.in_channels, in_h, in_w);
    for (int c = 0; c < geom.in_channels; ++c) {
        for (int kh = 0; kh < geom.kernel_h; ++kh) {
            for (int kw = 0; kw < geom.kernel_w; ++kw) {
                const int row = (c * geom.kernel_h + kh) * geom.kernel_w + kw;
                const double* src = grad.row(row);
                for (int y = 0; y < oh; ++y) {
                    const int ih = y * geom.stride - geom.padding + kh;
                    if (ih < 0 || ih >= in_h) continue;
                    for (int x = 0; x < ow; ++x) {
                        const int iw = x * geom.stride - geom.padding + kw;
                        if (iw < 0 || iw >= in_w) continue;
                        out.at(0, c, ih, iw) += src[y * ow + x];
                    }
                }
            }
        }
    }
    return out;
}

ChannelMoments channel_moments(std::span<const UnrolledInput> batch) {
    if (batch.empty()) throw std::invalid_argument("channel_moments: empty batch");
    const auto& blocks = batch.front().channel_blocks;
    if (blocks.empty()) throw std::invalid_argument("channel_moments: input has no channel blocks");

    ChannelMoments m;
    for (const auto& blk : blocks) {
        double sum = 0.0, sumsq = 0.0;
        size_t n = 0;
        for (const auto& u : batch) {
            if (u.channel_blocks.size() != blocks.size())
                throw std::invalid_argument("channel_moments: inconsistent blocks across batch");
            for (int r = blk.row_begin; r < blk.row_end; ++r) {
                const double* row = u.row(r);
                for (int c = 0; c < u.cols; ++c) {
                    sum += row[c];
                    sumsq += row[c] * row[c];
                }
            }
            n += static_cast<size_t>(blk.row_end - blk.row_begin) * u.cols;
        }
        if (n < 2) throw std::invalid_argument("channel_moments: channel block needs at least 2 entries");
        const double mean = sum / static_cast<double>(n);
        m.mean.push_back(mean);
        m.variance.push_back(sumsq / static_cast<double>(n) - mean * mean);
    }
    return m;
}

}  // namespace mlns
