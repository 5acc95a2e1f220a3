#include "mlns/norm.hpp"

#include <cmath>
#include <stdexcept>

namespace mlns {

std::string to_string(NormVariant v) {
    switch (v) {
        case NormVariant::standard: return "standard";
        case NormVariant::amplify: return "amplify";
        case NormVariant::suppress: return "suppress";
    }
    return "?";
}

std::string to_string(NormPlacement p) {
    return p == NormPlacement::after_conv ? "after_conv" : "before_conv";
}

std::vector<uint8_t> variant_mask(const std::vector<double>& variances, NormVariant variant,
                                  double threshold, bool prose_mask) {
    std::vector<uint8_t> mask(variances.size(), 1);
    if (variant == NormVariant::standard) return mask;
    for (size_t i = 0; i < variances.size(); ++i) {
        bool weak = variances[i] < threshold;
        bool strong = variances[i] > threshold;
        bool pick_weak = (variant == NormVariant::amplify);
        if (prose_mask) pick_weak = !pick_weak;  // paper-prose threshold reading
        mask[i] = pick_weak ? (weak ? 1 : 0) : (strong ? 1 : 0);
    }
    return mask;
}

namespace {

void check_channels(const Tensor4& x, const NormState& state) {
    if (x.channels != state.channels)
        throw std::invalid_argument("norm: input has " + std::to_string(x.channels) +
                                    " channels, state has " + std::to_string(state.channels));
    if (x.batch <= 0 || x.height <= 0 || x.width <= 0)
        throw std::invalid_argument("norm: empty input");
}

struct BatchStats {
    std::vector<double> mean, var;
};

BatchStats batch_stats(const Tensor4& x) {
    BatchStats st;
    st.mean.assign(x.channels, 0.0);
    st.var.assign(x.channels, 0.0);
    const double n = static_cast<double>(x.batch) * x.height * x.width;
    for (int c = 0; c < x.channels; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (int b = 0; b < x.batch; ++b) {
            const double* p = &x.data[x.offset(b, c, 0, 0)];
            const int hw = x.height * x.width;
            for (int i = 0; i < hw; ++i) {
                sum += p[i];
                sumsq += p[i] * p[i];
            }
        }
        st.mean[c] = sum / n;
        st.var[c] = sumsq / n - st.mean[c] * st.mean[c];
        if (st.var[c] < 0.0) st.var[c] = 0.0;  // fp guard
    }
    return st;
}

NormForwardResult forward_with_stats(const Tensor4& x, const NormState& state,
                                     const BatchStats& st) {
    NormForwardResult res;
    res.output = x;
    res.cache.batch_mean = st.mean;
    res.cache.batch_var = st.var;
    res.cache.mask = variant_mask(st.var, state.variant, state.threshold, state.prose_mask);
    res.cache.normalized = Tensor4(x.batch, x.channels, x.height, x.width);
    res.cache.batch = x.batch;
    res.cache.channels = x.channels;
    res.cache.height = x.height;
    res.cache.width = x.width;

    const int hw = x.height * x.width;
    for (int c = 0; c < x.channels; ++c) {
        if (!res.cache.mask[c]) continue;  // pass-through channel
        const double denom = std::sqrt(st.var[c] + state.eps);
        const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
        for (int b = 0; b < x.batch; ++b) {
            const double* src = &x.data[x.offset(b, c, 0, 0)];
            double* xhat = &res.cache.normalized.data[x.offset(b, c, 0, 0)];
            double* dst = &res.output.data[x.offset(b, c, 0, 0)];
            for (int i = 0; i < hw; ++i) {
                xhat[i] = (src[i] - st.mean[c]) * inv;
                dst[i] = state.gamma[c] * xhat[i] + state.beta[c];
            }
        }
    }
    return res;
}

}  // namespace

NormForwardResult norm_forward_train(const Tensor4& x, NormState& state, bool update_running) {
    check_channels(x, state);
    const BatchStats st = batch_stats(x);
    NormForwardResult res = forward_with_stats(x, state, st);
    if (update_running) {
        for (int c = 0; c < state.channels; ++c) {
            if (state.stats_ready) {
                state.running_mean[c] =
                    (1.0 - state.momentum) * state.running_mean[c] + state.momentum * st.mean[c];
                state.running_var[c] =
                    (1.0 - state.momentum) * state.running_var[c] + state.momentum * st.var[c];
            } else {
                state.running_mean[c] = st.mean[c];
                state.running_var[c] = st.var[c];
            }
        }
        state.stats_ready = true;
    }
    return res;
}

NormForwardResult norm_forward_probe(const Tensor4& x, const NormState& state) {
    check_channels(x, state);
    return forward_with_stats(x, state, batch_stats(x));
}

Tensor4 norm_forward_eval(const Tensor4& x, const NormState& state) {
    check_channels(x, state);
    if (!state.stats_ready)
        throw std::runtime_error("norm_forward_eval: running statistics uninitialized "
                                 "(no training step taken)");
    Tensor4 y = x;
    const auto mask =
        variant_mask(state.running_var, state.variant, state.threshold, state.prose_mask);
    const int hw = x.height * x.width;
    for (int c = 0; c < x.channels; ++c) {
        if (!mask[c]) continue;
        const double denom = std::sqrt(state.running_var[c] + state.eps);
        const double inv = denom > 0.0 ? 1.0 / denom : 0.0;
        for (int b = 0; b < x.batch; ++b) {
            const double* src = &x.data[x.offset(b, c, 0, 0)];
            double* dst = &y.data[x.offset(b, c, 0, 0)];
            for (int i = 0; i < hw; ++i)
                dst[i] = state.gamma[c] * (src[i] - state.running_mean[c]) * inv + state.beta[c];
        }
    }
    return y;
}

NormBackwardResult norm_backward(const Tensor4& grad_y, const NormCache& cache,
                                 const NormState& state) {
    if (grad_y.batch != cache.batch || grad_y.channels != cache.channels ||
        grad_y.height != cache.height || grad_y.width != cache.width)
        throw std::invalid_argument("norm_backward: gradient shape does not match cache");
    if (cache.mask.size() != static_cast<size_t>(state.channels))
        throw std::invalid_argument("norm_backward: cache does not match state");

    NormBackwardResult res;
    res.grad_x = grad_y;
    res.grad_gamma.assign(state.channels, 0.0);
    res.grad_beta.assign(state.channels, 0.0);

    const int hw = grad_y.height * grad_y.width;
    const double n = static_cast<double>(grad_y.batch) * hw;
    for (int c = 0; c < state.channels; ++c) {
        if (!cache.mask[c]) continue;  // identity path: grad_x = grad_y, no gamma/beta grads
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < grad_y.batch; ++b) {
            const double* dy = &grad_y.data[grad_y.offset(b, c, 0, 0)];
            const double* xh = &cache.normalized.data[grad_y.offset(b, c, 0, 0)];
            for (int i = 0; i < hw; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
        }
        res.grad_beta[c] = sum_dy;
        res.grad_gamma[c] = sum_dy_xhat;

        const double denom = std::sqrt(cache.batch_var[c] + state.eps);
        const double scale = denom > 0.0 ? state.gamma[c] / denom : 0.0;
        const double mean_dy = sum_dy / n;
        const double mean_dy_xhat = sum_dy_xhat / n;
        for (int b = 0; b < grad_y.batch; ++b) {
            const double* dy = &grad_y.data[grad_y.offset(b, c, 0, 0)];
            const double* xh = &cache.normalized.data[grad_y.offset(b, c, 0, 0)];
            double* dx = &res.grad_x.data[grad_y.offset(b, c, 0, 0)];
            for (int i = 0; i < hw; ++i)
                dx[i] = scale * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
    }
    return res;
}

}  // namespace mlns
