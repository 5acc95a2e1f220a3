#pragma once

// Shared helpers for the unit and acceptance suites. Everything here is
// test-only and independent of the library's own computation paths.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mlns/network.hpp"
#include "mlns/tensor.hpp"

namespace testutil {

// Minimal IDX writer (big-endian) for loader round-trip tests.
inline void write_idx_images(const std::string& path, const std::vector<std::vector<uint8_t>>& imgs,
                             uint32_t rows, uint32_t cols) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    auto be = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    be(0x00000803);
    be(static_cast<uint32_t>(imgs.size()));
    be(rows);
    be(cols);
    for (const auto& img : imgs)
        out.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    auto be = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    be(0x00000801);
    be(static_cast<uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
}

// Central finite differences over every trainable parameter of a network.
// The loss closure uses a probe forward (batch statistics, state untouched)
// so each evaluation sees exactly the function backward() differentiates.
struct FdReport {
    double max_err = 0.0;   // |fd - analytic| / max(1, |analytic|)
    std::string worst;
};

inline FdReport finite_difference_check(const mlns::LayerGraph& graph, mlns::ParamSet params,
                                        const mlns::Tensor4& batch, std::span<const int> labels,
                                        double h = 1e-5) {
    using namespace mlns;
    auto loss_at = [&](const ParamSet& p) {
        return forward_probe(graph, p, batch, labels).loss;
    };
    auto fwd = forward_probe(graph, params, batch, labels);
    auto grads = backward(graph, params, fwd.cache);

    FdReport rep;
    auto probe = [&](double* value, double analytic, const std::string& name) {
        const double orig = *value;
        *value = orig + h;
        const double lp = loss_at(params);
        *value = orig - h;
        const double lm = loss_at(params);
        *value = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double err = std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
        if (err > rep.max_err) {
            rep.max_err = err;
            rep.worst = name;
        }
    };

    for (size_t i = 0; i < params.conv.size(); ++i) {
        for (size_t j = 0; j < params.conv[i].w.size(); ++j)
            probe(&params.conv[i].w[j], grads.conv[i].w[j],
                  "conv" + std::to_string(i) + ".w[" + std::to_string(j) + "]");
        for (size_t j = 0; j < params.conv[i].b.size(); ++j)
            probe(&params.conv[i].b[j], grads.conv[i].b[j],
                  "conv" + std::to_string(i) + ".b[" + std::to_string(j) + "]");
    }
    for (size_t i = 0; i < params.fc.size(); ++i) {
        for (size_t j = 0; j < params.fc[i].w.size(); ++j)
            probe(&params.fc[i].w[j], grads.fc[i].w[j],
                  "fc" + std::to_string(i) + ".w[" + std::to_string(j) + "]");
        for (size_t j = 0; j < params.fc[i].b.size(); ++j)
            probe(&params.fc[i].b[j], grads.fc[i].b[j],
                  "fc" + std::to_string(i) + ".b[" + std::to_string(j) + "]");
    }
    for (size_t i = 0; i < params.norm.size(); ++i) {
        for (int c = 0; c < params.norm[i].channels; ++c) {
            probe(&params.norm[i].gamma[c], grads.norm[i].gamma[c],
                  "norm" + std::to_string(i) + ".gamma[" + std::to_string(c) + "]");
            probe(&params.norm[i].beta[c], grads.norm[i].beta[c],
                  "norm" + std::to_string(i) + ".beta[" + std::to_string(c) + "]");
        }
    }
    return rep;
}

// A small randomized two-conv network for gradient checks.
struct MicroNet {
    mlns::LayerGraph graph;
    mlns::ParamSet params;
    mlns::Tensor4 batch;
    std::vector<int> labels;
};

inline MicroNet make_micro_net(uint64_t seed, mlns::NormVariant variant,
                               bool with_norm, bool norm_before = false) {
    using namespace mlns;
    MicroNet net;
    net.graph.input = {1, 8, 8};
    net.graph.num_classes = 4;
    ConvGeometry g1{1, 2, 3, 3, 1, 0};
    ConvGeometry g2{2, 3, 2, 2, 1, 0};
    auto& L = net.graph.layers;
    if (with_norm && norm_before) {
        L = {NormLayer{variant, NormPlacement::before_conv, 1.0, false}, ConvLayer{g1, true},
             ReluLayer{}, ConvLayer{g2, false},
             NormLayer{variant, NormPlacement::after_conv, 1.0, false}, ReluLayer{},
             PoolLayer{5, 5}, FcLayer{3, 4}};
    } else if (with_norm) {
        L = {ConvLayer{g1, false}, NormLayer{variant, NormPlacement::after_conv, 1.0, false},
             ReluLayer{}, ConvLayer{g2, true}, ReluLayer{}, PoolLayer{5, 5}, FcLayer{3, 4}};
    } else {
        L = {ConvLayer{g1, true}, ReluLayer{}, ConvLayer{g2, true}, ReluLayer{}, PoolLayer{5, 5},
             FcLayer{3, 4}};
    }
    net.graph.validate();
    net.params = init_params(net.graph, seed);

    Rng rng(mix_seed(seed, 77));
    // randomize biases and gamma/beta: zero-init biases leave dead-patch conv
    // outputs exactly at the ReLU kink, where the loss is not differentiable
    // and central differences disagree with any one-sided convention
    for (auto& c : net.params.conv)
        for (double& b : c.b) b = 0.2 * rng.normal();
    for (auto& f : net.params.fc)
        for (double& b : f.b) b = 0.2 * rng.normal();
    for (auto& n : net.params.norm)
        for (int c = 0; c < n.channels; ++c) {
            n.gamma[c] = 1.0 + 0.2 * rng.normal();
            n.beta[c] = 0.2 * rng.normal();
        }
    net.batch = Tensor4(3, 1, 8, 8);
    for (double& v : net.batch.data) v = rng.normal();
    net.labels = {static_cast<int>(rng.index(4)), static_cast<int>(rng.index(4)),
                  static_cast<int>(rng.index(4))};
    return net;
}

}  // namespace testutil
