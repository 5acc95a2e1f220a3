#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mlns/tensor.hpp"

namespace mlns {

enum class NormVariant { standard, amplify, suppress };
enum class NormPlacement { after_conv, before_conv };

std::string to_string(NormVariant v);
std::string to_string(NormPlacement p);

// Per-channel normalization state. `variant` selects which channels the
// batch statistics are applied to: standard normalizes everything, amplify
// normalizes only channels whose power sits below the threshold (weak
// channels get pulled up to unit power), suppress only channels above it.
// `prose_mask` flips amplify/suppress to the alternative threshold reading;
// kept selectable so both behaviors can be compared.
struct NormState {
    int channels = 0;
    std::vector<double> gamma, beta;
    std::vector<double> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    NormVariant variant = NormVariant::standard;
    double threshold = 1.0;
    NormPlacement placement = NormPlacement::after_conv;
    bool prose_mask = false;
    bool stats_ready = false;

    NormState() = default;
    NormState(int ch, NormVariant v, double thr = 1.0,
              NormPlacement place = NormPlacement::after_conv)
        : channels(ch), gamma(ch, 1.0), beta(ch, 0.0),
          running_mean(ch, 0.0), running_var(ch, 0.0),
          variant(v), threshold(thr), placement(place) {}
};

struct NormCache {
    std::vector<double> batch_mean, batch_var;
    std::vector<uint8_t> mask;
    Tensor4 normalized;   // x-hat for masked channels, 0 elsewhere
    int batch = 0, channels = 0, height = 0, width = 0;
};

// Channels where the mask is true get normalized; false channels pass
// through untouched. Ties at the threshold pass through (strict inequality).
std::vector<uint8_t> variant_mask(const std::vector<double>& variances, NormVariant variant,
                                  double threshold, bool prose_mask = false);

struct NormForwardResult {
    Tensor4 output;
    NormCache cache;
};

// Training-mode forward using batch statistics. Updates running statistics
// for every channel unless `update_running` is false (analysis probes).
NormForwardResult norm_forward_train(const Tensor4& x, NormState& state,
                                     bool update_running = true);

// Probe forward: batch statistics, const state (no running-stat update).
NormForwardResult norm_forward_probe(const Tensor4& x, const NormState& state);

// Inference forward using running statistics; rejected until at least one
// training step has populated them.
Tensor4 norm_forward_eval(const Tensor4& x, const NormState& state);

struct NormBackwardResult {
    Tensor4 grad_x;
    std::vector<double> grad_gamma, grad_beta;
};

// Full batch-statistics gradient (mean and variance paths) for masked
// channels; identity gradient and zero gamma/beta gradients elsewhere.
NormBackwardResult norm_backward(const Tensor4& grad_y, const NormCache& cache,
                                 const NormState& state);

}  // namespace mlns
