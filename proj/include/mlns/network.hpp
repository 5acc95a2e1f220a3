#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mlns/common.hpp"
#include "mlns/norm.hpp"
#include "mlns/tensor.hpp"

namespace mlns {

struct ConvLayer {
    ConvGeometry geom;
    bool has_bias = true;
};
struct ReluLayer {};
struct PoolLayer {
    int k = 2;
    int stride = 2;
};
struct FcLayer {
    int in = 0, out = 0;
    bool has_bias = true;
};
struct NormLayer {
    NormVariant variant = NormVariant::standard;
    NormPlacement placement = NormPlacement::after_conv;
    double threshold = 1.0;
    bool prose_mask = false;
};

using LayerDesc = std::variant<ConvLayer, ReluLayer, PoolLayer, FcLayer, NormLayer>;

struct Shape {
    int channels = 0, h = 0, w = 0;
    size_t count() const { return static_cast<size_t>(channels) * h * w; }
    bool operator==(const Shape&) const = default;
};

// Ordered layer list ending in a fully connected classifier; the loss is
// softmax cross-entropy over its output.
struct LayerGraph {
    Shape input;
    int num_classes = 10;
    std::vector<LayerDesc> layers;

    // filled by validate()
    std::vector<Shape> in_shape, out_shape;
    std::vector<int> ordinal;  // index within the layer's kind (conv #, fc #, norm #)
    int n_conv = 0, n_fc = 0, n_norm = 0;

    void validate();
    std::string fingerprint() const;  // topology audit string
    int conv_layer_index(int conv_ordinal) const;
};

struct ConvParams {
    std::vector<double> w;  // OC x (IC*KH*KW), row-major
    std::vector<double> b;  // empty when the layer has no bias
};
struct FcParams {
    std::vector<double> w;  // out x in
    std::vector<double> b;
};

struct ParamSet {
    std::vector<ConvParams> conv;
    std::vector<FcParams> fc;
    std::vector<NormState> norm;
};

// Same seed => same weight draw, independent of which norm layers are
// present, so all compared variants start from identical conv/FC weights.
ParamSet init_params(const LayerGraph& graph, uint64_t seed);

struct ForwardCache {
    std::vector<Tensor4> inputs;                       // input of each layer
    std::vector<std::vector<UnrolledInput>> unrolled;  // per layer; filled for conv layers
    std::vector<NormCache> norm_caches;                // per norm ordinal
    std::vector<double> logits;                        // B x num_classes
    std::vector<int> labels;
    double loss = 0.0;
    bool valid = false;
};

struct ForwardResult {
    double loss = 0.0;
    ForwardCache cache;
};

// Training forward: batch statistics in norm layers, running stats updated.
// Throws divergence_error on the first non-finite activation.
ForwardResult forward_train(const LayerGraph& graph, ParamSet& params, const Tensor4& batch,
                            std::span<const int> labels);

// Analysis forward: batch statistics, but running stats left untouched.
ForwardResult forward_probe(const LayerGraph& graph, const ParamSet& params,
                            const Tensor4& batch, std::span<const int> labels);

// Inference forward (running statistics); returns logits only.
std::vector<double> forward_eval(const LayerGraph& graph, const ParamSet& params,
                                 const Tensor4& batch);

struct ConvGrads {
    std::vector<double> w, b;
};
struct FcGrads {
    std::vector<double> w, b;
};
struct NormGrads {
    std::vector<double> gamma, beta;
};

struct BackwardRecord {
    std::vector<ConvGrads> conv;
    std::vector<FcGrads> fc;
    std::vector<NormGrads> norm;
    std::vector<Tensor4> conv_local_error;  // E = dJ/dY per conv ordinal
};

// Transform applied to one conv layer's local error before its weight
// gradient is taken (gradient-noise injection). When propagate_upstream is
// true the transformed error also flows to earlier layers.
struct ErrorHook {
    int target_conv = -1;
    std::function<Tensor4(const Tensor4&)> transform;
    bool propagate_upstream = true;
};

// Consumes the cache (a cache feeds exactly one backward pass).
BackwardRecord backward(const LayerGraph& graph, const ParamSet& params, ForwardCache& cache,
                        const ErrorHook* hook = nullptr);

struct SgdOptions {
    double mu_conv = 0.1;
    double mu_other = 0.1;
    bool freeze_fc = false;
    std::vector<int> skip_conv_weights;  // conv ordinals updated externally
};

// w <- w - mu_group * g. Conv filter weights use mu_conv; conv biases, FC
// parameters and gamma/beta use mu_other.
void sgd_step(ParamSet& params, const BackwardRecord& grads, const SgdOptions& opt);

using UpdateFn = std::function<void(ParamSet&, const ForwardCache&, const BackwardRecord&)>;
using StepFn = std::function<void(int step, double loss, ParamSet&)>;

struct EpochOptions {
    SgdOptions sgd;
    const ErrorHook* hook = nullptr;
    UpdateFn update;   // replaces the default SGD application when set
    StepFn on_step;    // called after each update with the global step count
    int first_step = 0;  // global step count before this epoch
};

struct EpochResult {
    std::vector<double> step_losses;
    bool diverged = false;
    int diverged_at_step = -1;  // global step number of the failed update
    int steps_run = 0;
};

// One deterministic epoch: seeded shuffle, fixed batch order, SGD (or the
// supplied update function) after every batch.
EpochResult train_epoch(const LayerGraph& graph, ParamSet& params, const Tensor4& images,
                        std::span<const int> labels, int batch_size, uint64_t shuffle_seed,
                        const EpochOptions& opt);

// Fraction of samples whose argmax logit disagrees with the label.
double classification_error(const LayerGraph& graph, const ParamSet& params,
                            const Tensor4& images, std::span<const int> labels, int batch_size);

Tensor4 gather_batch(const Tensor4& images, std::span<const size_t> indices);

}  // namespace mlns
