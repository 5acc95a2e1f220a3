#include "mlns/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mlns {

namespace {

// out[OC x M] += W[OC x K] * U[K x M]
void gemm_w_u(const double* w, const double* u, double* out, int oc, int k, int m) {
    for (int o = 0; o < oc; ++o) {
        const double* wrow = w + static_cast<size_t>(o) * k;
        double* orow = out + static_cast<size_t>(o) * m;
        for (int i = 0; i < k; ++i) {
            const double a = wrow[i];
            if (a == 0.0) continue;
            const double* urow = u + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) orow[j] += a * urow[j];
        }
    }
}

// gw[OC x K] += E[OC x M] * U^T
void gemm_e_ut(const double* e, const double* u, double* gw, int oc, int k, int m) {
    for (int o = 0; o < oc; ++o) {
        const double* erow = e + static_cast<size_t>(o) * m;
        double* grow = gw + static_cast<size_t>(o) * k;
        for (int i = 0; i < k; ++i) {
            const double* urow = u + static_cast<size_t>(i) * m;
            double s = 0.0;
            for (int j = 0; j < m; ++j) s += erow[j] * urow[j];
            grow[i] += s;
        }
    }
}

// gu[K x M] = W^T[K x OC] * E[OC x M]
void gemm_wt_e(const double* w, const double* e, double* gu, int oc, int k, int m) {
    for (int o = 0; o < oc; ++o) {
        const double* wrow = w + static_cast<size_t>(o) * k;
        const double* erow = e + static_cast<size_t>(o) * m;
        for (int i = 0; i < k; ++i) {
            const double a = wrow[i];
            if (a == 0.0) continue;
            double* grow = gu + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) grow[j] += a * erow[j];
        }
    }
}

void check_finite(const Tensor4& t, int layer) {
    for (double x : t.data)
        if (!std::isfinite(x))
            throw divergence_error(layer, "non-finite activation after layer " +
                                              std::to_string(layer));
}

enum class RunMode { train, probe, eval };

}  // namespace

void LayerGraph::validate() {
    if (input.channels <= 0 || input.h <= 0 || input.w <= 0)
        throw config_error("graph: input shape must be positive");
    in_shape.clear();
    out_shape.clear();
    ordinal.clear();
    n_conv = n_fc = n_norm = 0;

    Shape cur = input;
    bool saw_fc = false;
    for (size_t li = 0; li < layers.size(); ++li) {
        in_shape.push_back(cur);
        const auto& desc = layers[li];
        if (std::holds_alternative<ConvLayer>(desc)) {
            const auto& c = std::get<ConvLayer>(desc);
            if (c.geom.in_channels != cur.channels)
                throw config_error("graph: conv layer " + std::to_string(li) + " expects " +
                                   std::to_string(c.geom.in_channels) + " channels, gets " +
                                   std::to_string(cur.channels));
            c.geom.validate(cur.h, cur.w);
            cur = {c.geom.out_channels, c.geom.out_h(cur.h), c.geom.out_w(cur.w)};
            ordinal.push_back(n_conv++);
        } else if (std::holds_alternative<ReluLayer>(desc)) {
            ordinal.push_back(-1);
        } else if (std::holds_alternative<PoolLayer>(desc)) {
            const auto& p = std::get<PoolLayer>(desc);
            if (p.k <= 0 || p.stride <= 0) throw config_error("graph: bad pool geometry");
            const int oh = (cur.h - p.k) / p.stride + 1;
            const int ow = (cur.w - p.k) / p.stride + 1;
            if (oh < 1 || ow < 1) throw config_error("graph: pool output collapses");
            cur = {cur.channels, oh, ow};
            ordinal.push_back(-1);
        } else if (std::holds_alternative<FcLayer>(desc)) {
            const auto& f = std::get<FcLayer>(desc);
            if (static_cast<size_t>(f.in) != cur.count())
                throw config_error("graph: fc layer " + std::to_string(li) + " expects " +
                                   std::to_string(f.in) + " inputs, gets " +
                                   std::to_string(cur.count()));
            cur = {f.out, 1, 1};
            ordinal.push_back(n_fc++);
            saw_fc = true;
        } else {
            ordinal.push_back(n_norm++);
        }
        out_shape.push_back(cur);
    }
    if (!saw_fc || cur.channels != num_classes || cur.h != 1 || cur.w != 1)
        throw config_error("graph: must end in a fully connected layer with " +
                           std::to_string(num_classes) + " outputs");
}

std::string LayerGraph::fingerprint() const {
    std::ostringstream os;
    os << "in(" << input.channels << "x" << input.h << "x" << input.w << ")";
    for (const auto& desc : layers) {
        os << "|";
        if (const auto* c = std::get_if<ConvLayer>(&desc)) {
            os << "conv(" << c->geom.in_channels << "->" << c->geom.out_channels << ","
               << c->geom.kernel_h << "x" << c->geom.kernel_w << ",s" << c->geom.stride << ",p"
               << c->geom.padding << (c->has_bias ? ",bias" : "") << ")";
        } else if (std::holds_alternative<ReluLayer>(desc)) {
            os << "relu";
        } else if (const auto* p = std::get_if<PoolLayer>(&desc)) {
            os << "avgpool(" << p->k << ",s" << p->stride << ")";
        } else if (const auto* f = std::get_if<FcLayer>(&desc)) {
            os << "fc(" << f->in << "->" << f->out << ")";
        } else {
            const auto& nm = std::get<NormLayer>(desc);
            os << "norm(" << to_string(nm.variant) << "," << to_string(nm.placement) << ",thr="
               << nm.threshold << (nm.prose_mask ? ",prose" : "") << ")";
        }
    }
    os << "|softmax-ce";
    return os.str();
}

int LayerGraph::conv_layer_index(int conv_ordinal) const {
    for (size_t li = 0; li < layers.size(); ++li)
        if (std::holds_alternative<ConvLayer>(layers[li]) && ordinal[li] == conv_ordinal)
            return static_cast<int>(li);
    return -1;
}

ParamSet init_params(const LayerGraph& graph, uint64_t seed) {
    ParamSet p;
    for (size_t li = 0; li < graph.layers.size(); ++li) {
        const auto& desc = graph.layers[li];
        if (const auto* c = std::get_if<ConvLayer>(&desc)) {
            ConvParams cp;
            const int fan_in = c->geom.patch_rows();
            const double bound = std::sqrt(6.0 / fan_in);
            Rng rng(mix_seed(seed, 100 + graph.ordinal[li]));
            cp.w.resize(static_cast<size_t>(c->geom.out_channels) * fan_in);
            for (double& w : cp.w) w = rng.uniform(-bound, bound);
            if (c->has_bias) cp.b.assign(c->geom.out_channels, 0.0);
            p.conv.push_back(std::move(cp));
        } else if (const auto* f = std::get_if<FcLayer>(&desc)) {
            FcParams fp;
            const double bound = std::sqrt(6.0 / f->in);
            Rng rng(mix_seed(seed, 200 + graph.ordinal[li]));
            fp.w.resize(static_cast<size_t>(f->out) * f->in);
            for (double& w : fp.w) w = rng.uniform(-bound, bound);
            if (f->has_bias) fp.b.assign(f->out, 0.0);
            p.fc.push_back(std::move(fp));
        } else if (const auto* nm = std::get_if<NormLayer>(&desc)) {
            NormState st(graph.in_shape[li].channels, nm->variant, nm->threshold, nm->placement);
            st.prose_mask = nm->prose_mask;
            p.norm.push_back(std::move(st));
        }
    }
    return p;
}

namespace {

struct SoftmaxCe {
    double loss;
    std::vector<double> probs;  // B x C
};

SoftmaxCe softmax_ce(const std::vector<double>& logits, int batch, int classes,
                     std::span<const int> labels) {
    SoftmaxCe r;
    r.probs.resize(logits.size());
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double* l = &logits[static_cast<size_t>(b) * classes];
        double* p = &r.probs[static_cast<size_t>(b) * classes];
        double mx = l[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, l[c]);
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) sum += std::exp(l[c] - mx);
        const double lse = mx + std::log(sum);
        for (int c = 0; c < classes; ++c) p[c] = std::exp(l[c] - lse);
        total += lse - l[labels[b]];
    }
    r.loss = total / batch;
    return r;
}

ForwardResult run_forward(const LayerGraph& graph, const ParamSet& cparams, ParamSet* mparams,
                          const Tensor4& batch, std::span<const int> labels, RunMode mode) {
    if (batch.channels != graph.input.channels || batch.height != graph.input.h ||
        batch.width != graph.input.w)
        throw std::invalid_argument("forward: batch shape does not match graph input");
    if (!labels.empty() && labels.size() != static_cast<size_t>(batch.batch))
        throw std::invalid_argument("forward: label count does not match batch");

    const ParamSet& params = mparams ? *mparams : cparams;
    const bool keep = mode != RunMode::eval;

    ForwardResult res;
    auto& cache = res.cache;
    if (keep) {
        cache.inputs.reserve(graph.layers.size());
        cache.unrolled.resize(graph.layers.size());
        cache.norm_caches.resize(params.norm.size());
    }

    Tensor4 cur = batch;
    check_finite(cur, -1);
    for (size_t li = 0; li < graph.layers.size(); ++li) {
        const auto& desc = graph.layers[li];
        const int ord = graph.ordinal[li];
        if (keep) cache.inputs.push_back(cur);
        const Shape os = graph.out_shape[li];

        if (const auto* c = std::get_if<ConvLayer>(&desc)) {
            const auto& cp = params.conv[ord];
            Tensor4 out(cur.batch, os.channels, os.h, os.w);
            const int k = c->geom.patch_rows();
            const int m = os.h * os.w;
            std::vector<UnrolledInput> us;
            for (int b = 0; b < cur.batch; ++b) {
                UnrolledInput u = im2col(cur, b, c->geom);
                gemm_w_u(cp.w.data(), u.data.data(), &out.data[out.offset(b, 0, 0, 0)],
                         os.channels, k, m);
                if (keep) us.push_back(std::move(u));
            }
            if (!cp.b.empty()) {
                for (int b = 0; b < cur.batch; ++b)
                    for (int o = 0; o < os.channels; ++o) {
                        double* row = &out.data[out.offset(b, o, 0, 0)];
                        for (int i = 0; i < m; ++i) row[i] += cp.b[o];
                    }
            }
            if (keep) cache.unrolled[li] = std::move(us);
            cur = std::move(out);
        } else if (std::holds_alternative<ReluLayer>(desc)) {
            for (double& x : cur.data) x = x > 0.0 ? x : 0.0;
        } else if (const auto* p = std::get_if<PoolLayer>(&desc)) {
            Tensor4 out(cur.batch, os.channels, os.h, os.w);
            const double inv = 1.0 / (p->k * p->k);
            for (int b = 0; b < cur.batch; ++b)
                for (int c2 = 0; c2 < os.channels; ++c2)
                    for (int y = 0; y < os.h; ++y)
                        for (int x = 0; x < os.w; ++x) {
                            double s = 0.0;
                            for (int dy = 0; dy < p->k; ++dy)
                                for (int dx = 0; dx < p->k; ++dx)
                                    s += cur.at(b, c2, y * p->stride + dy, x * p->stride + dx);
                            out.at(b, c2, y, x) = s * inv;
                        }
            cur = std::move(out);
        } else if (const auto* f = std::get_if<FcLayer>(&desc)) {
            const auto& fp = params.fc[ord];
            Tensor4 out(cur.batch, f->out, 1, 1);
            for (int b = 0; b < cur.batch; ++b) {
                const double* x = &cur.data[cur.offset(b, 0, 0, 0)];
                double* y = &out.data[out.offset(b, 0, 0, 0)];
                for (int o = 0; o < f->out; ++o) {
                    const double* wrow = &fp.w[static_cast<size_t>(o) * f->in];
                    double s = fp.b.empty() ? 0.0 : fp.b[o];
                    for (int i = 0; i < f->in; ++i) s += wrow[i] * x[i];
                    y[o] = s;
                }
            }
            cur = std::move(out);
        } else {
            if (mode == RunMode::train) {
                auto r = norm_forward_train(cur, (*mparams).norm[ord], true);
                cache.norm_caches[ord] = std::move(r.cache);
                cur = std::move(r.output);
            } else if (mode == RunMode::probe) {
                auto r = norm_forward_probe(cur, params.norm[ord]);
                cache.norm_caches[ord] = std::move(r.cache);
                cur = std::move(r.output);
            } else {
                cur = norm_forward_eval(cur, params.norm[ord]);
            }
        }
        check_finite(cur, static_cast<int>(li));
    }

    std::vector<double> logits = std::move(cur.data);
    if (!labels.empty()) {
        const auto ce = softmax_ce(logits, batch.batch, graph.num_classes, labels);
        res.loss = ce.loss;
        if (!std::isfinite(res.loss))
            throw divergence_error(static_cast<int>(graph.layers.size()),
                                   "non-finite loss");
    }
    if (keep) {
        cache.logits = std::move(logits);
        cache.labels.assign(labels.begin(), labels.end());
        cache.loss = res.loss;
        cache.valid = true;
    } else {
        cache.logits = std::move(logits);
    }
    return res;
}

}  // namespace

ForwardResult forward_train(const LayerGraph& graph, ParamSet& params, const Tensor4& batch,
                            std::span<const int> labels) {
    return run_forward(graph, params, &params, batch, labels, RunMode::train);
}

ForwardResult forward_probe(const LayerGraph& graph, const ParamSet& params,
                            const Tensor4& batch, std::span<const int> labels) {
    return run_forward(graph, params, nullptr, batch, labels, RunMode::probe);
}

std::vector<double> forward_eval(const LayerGraph& graph, const ParamSet& params,
                                 const Tensor4& batch) {
    auto r = run_forward(graph, params, nullptr, batch, {}, RunMode::eval);
    return std::move(r.cache.logits);
}

BackwardRecord backward(const LayerGraph& graph, const ParamSet& params, ForwardCache& cache,
                        const ErrorHook* hook) {
    if (!cache.valid)
        throw std::runtime_error("backward: cache is stale (already consumed or never filled)");
    if (cache.labels.empty())
        throw std::runtime_error("backward: forward pass had no labels");
    cache.valid = false;

    BackwardRecord rec;
    rec.conv.resize(params.conv.size());
    rec.fc.resize(params.fc.size());
    rec.norm.resize(params.norm.size());
    rec.conv_local_error.resize(params.conv.size());
    for (size_t i = 0; i < params.conv.size(); ++i) {
        rec.conv[i].w.assign(params.conv[i].w.size(), 0.0);
        rec.conv[i].b.assign(params.conv[i].b.size(), 0.0);
    }
    for (size_t i = 0; i < params.fc.size(); ++i) {
        rec.fc[i].w.assign(params.fc[i].w.size(), 0.0);
        rec.fc[i].b.assign(params.fc[i].b.size(), 0.0);
    }
    for (size_t i = 0; i < params.norm.size(); ++i) {
        rec.norm[i].gamma.assign(params.norm[i].channels, 0.0);
        rec.norm[i].beta.assign(params.norm[i].channels, 0.0);
    }

    const int batch = cache.inputs.front().batch;
    const int classes = graph.num_classes;

    // softmax-CE error at the output: (softmax - onehot) / B
    const auto ce = softmax_ce(cache.logits, batch, classes, cache.labels);
    Tensor4 grad(batch, classes, 1, 1);
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < classes; ++c)
            grad.at(b, c, 0, 0) =
                (ce.probs[static_cast<size_t>(b) * classes + c] -
                 (cache.labels[b] == c ? 1.0 : 0.0)) /
                batch;

    for (int li = static_cast<int>(graph.layers.size()) - 1; li >= 0; --li) {
        const auto& desc = graph.layers[li];
        const int ord = graph.ordinal[li];
        const Tensor4& x = cache.inputs[li];

        if (const auto* c = std::get_if<ConvLayer>(&desc)) {
            // grad == E = dJ/dY for this conv layer
            Tensor4 local_error = grad;
            if (hook && hook->transform && hook->target_conv == ord) {
                Tensor4 noisy = hook->transform(local_error);
                if (hook->propagate_upstream) grad = noisy;
                local_error = std::move(noisy);
            }
            rec.conv_local_error[ord] = local_error;

            auto& g = rec.conv[ord];
            const int k = c->geom.patch_rows();
            const int oc = c->geom.out_channels;
            const int m = graph.out_shape[li].h * graph.out_shape[li].w;
            Tensor4 gx(batch, x.channels, x.height, x.width);
            std::vector<double> gu(static_cast<size_t>(k) * m);
            for (int b = 0; b < batch; ++b) {
                const UnrolledInput& u = cache.unrolled[li][b];
                // weight gradient: E * U^T, i.e. per output channel U . e (Eq. 1 form)
                gemm_e_ut(&local_error.data[local_error.offset(b, 0, 0, 0)], u.data.data(),
                          g.w.data(), oc, k, m);
                // input gradient through the unrolling adjoint
                std::fill(gu.begin(), gu.end(), 0.0);
                gemm_wt_e(params.conv[ord].w.data(), &grad.data[grad.offset(b, 0, 0, 0)],
                          gu.data(), oc, k, m);
                UnrolledInput gmat(k, m);
                gmat.data = gu;
                Tensor4 one = col2im(gmat, c->geom, x.height, x.width);
                std::copy(one.data.begin(), one.data.end(), gx.data.begin() + x.offset(b, 0, 0, 0));
            }
            if (!g.b.empty()) {
                for (int b = 0; b < batch; ++b)
                    for (int o = 0; o < oc; ++o) {
                        const double* row = &local_error.data[local_error.offset(b, o, 0, 0)];
                        double s = 0.0;
                        for (int i = 0; i < m; ++i) s += row[i];
                        g.b[o] += s;
                    }
            }
            grad = std::move(gx);
        } else if (std::holds_alternative<ReluLayer>(desc)) {
            for (size_t i = 0; i < grad.data.size(); ++i)
                if (x.data[i] <= 0.0) grad.data[i] = 0.0;
        } else if (const auto* p = std::get_if<PoolLayer>(&desc)) {
            Tensor4 gx(batch, x.channels, x.height, x.width);
            const double inv = 1.0 / (p->k * p->k);
            const Shape os = graph.out_shape[li];
            for (int b = 0; b < batch; ++b)
                for (int c2 = 0; c2 < os.channels; ++c2)
                    for (int y = 0; y < os.h; ++y)
                        for (int xx = 0; xx < os.w; ++xx) {
                            const double gval = grad.at(b, c2, y, xx) * inv;
                            for (int dy = 0; dy < p->k; ++dy)
                                for (int dx = 0; dx < p->k; ++dx)
                                    gx.at(b, c2, y * p->stride + dy, xx * p->stride + dx) += gval;
                        }
            grad = std::move(gx);
        } else if (const auto* f = std::get_if<FcLayer>(&desc)) {
            auto& g = rec.fc[ord];
            const auto& fp = params.fc[ord];
            Tensor4 gx(batch, x.channels, x.height, x.width);
            for (int b = 0; b < batch; ++b) {
                const double* e = &grad.data[grad.offset(b, 0, 0, 0)];
                const double* xin = &x.data[x.offset(b, 0, 0, 0)];
                double* gxr = &gx.data[gx.offset(b, 0, 0, 0)];
                for (int o = 0; o < f->out; ++o) {
                    const double eo = e[o];
                    if (!g.b.empty()) g.b[o] += eo;
                    double* gw = &g.w[static_cast<size_t>(o) * f->in];
                    const double* wrow = &fp.w[static_cast<size_t>(o) * f->in];
                    for (int i = 0; i < f->in; ++i) {
                        gw[i] += eo * xin[i];
                        gxr[i] += eo * wrow[i];
                    }
                }
            }
            grad = std::move(gx);
        } else {
            auto r = norm_backward(grad, cache.norm_caches[ord], params.norm[ord]);
            rec.norm[ord].gamma = std::move(r.grad_gamma);
            rec.norm[ord].beta = std::move(r.grad_beta);
            grad = std::move(r.grad_x);
        }
    }
    return rec;
}

void sgd_step(ParamSet& params, const BackwardRecord& grads, const SgdOptions& opt) {
    for (size_t i = 0; i < params.conv.size(); ++i) {
        const bool skip = std::find(opt.skip_conv_weights.begin(), opt.skip_conv_weights.end(),
                                    static_cast<int>(i)) != opt.skip_conv_weights.end();
        if (!skip)
            for (size_t j = 0; j < params.conv[i].w.size(); ++j)
                params.conv[i].w[j] -= opt.mu_conv * grads.conv[i].w[j];
        for (size_t j = 0; j < params.conv[i].b.size(); ++j)
            params.conv[i].b[j] -= opt.mu_other * grads.conv[i].b[j];
    }
    if (!opt.freeze_fc) {
        for (size_t i = 0; i < params.fc.size(); ++i) {
            for (size_t j = 0; j < params.fc[i].w.size(); ++j)
                params.fc[i].w[j] -= opt.mu_other * grads.fc[i].w[j];
            for (size_t j = 0; j < params.fc[i].b.size(); ++j)
                params.fc[i].b[j] -= opt.mu_other * grads.fc[i].b[j];
        }
    }
    for (size_t i = 0; i < params.norm.size(); ++i) {
        for (int c = 0; c < params.norm[i].channels; ++c) {
            params.norm[i].gamma[c] -= opt.mu_other * grads.norm[i].gamma[c];
            params.norm[i].beta[c] -= opt.mu_other * grads.norm[i].beta[c];
        }
    }
}

Tensor4 gather_batch(const Tensor4& images, std::span<const size_t> indices) {
    Tensor4 out(static_cast<int>(indices.size()), images.channels, images.height, images.width);
    const size_t plane = images.sample_size();
    for (size_t i = 0; i < indices.size(); ++i)
        std::copy_n(images.data.begin() + indices[i] * plane, plane,
                    out.data.begin() + i * plane);
    return out;
}

EpochResult train_epoch(const LayerGraph& graph, ParamSet& params, const Tensor4& images,
                        std::span<const int> labels, int batch_size, uint64_t shuffle_seed,
                        const EpochOptions& opt) {
    if (images.batch == 0) throw std::invalid_argument("train_epoch: empty dataset");
    if (batch_size <= 0) throw std::invalid_argument("train_epoch: batch_size must be positive");

    std::vector<size_t> order(images.batch);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(shuffle_seed);
    rng.shuffle(order);

    EpochResult res;
    int step = opt.first_step;
    for (size_t pos = 0; pos < order.size(); pos += batch_size) {
        const size_t end = std::min(pos + batch_size, order.size());
        std::vector<size_t> idx(order.begin() + pos, order.begin() + end);
        Tensor4 batch = gather_batch(images, idx);
        std::vector<int> blabels(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) blabels[i] = labels[idx[i]];

        try {
            auto fwd = forward_train(graph, params, batch, blabels);
            auto grads = backward(graph, params, fwd.cache, opt.hook);
            if (opt.update)
                opt.update(params, fwd.cache, grads);
            else
                sgd_step(params, grads, opt.sgd);
            ++step;
            res.step_losses.push_back(fwd.loss);
            res.steps_run = step - opt.first_step;
            if (opt.on_step) opt.on_step(step, fwd.loss, params);
        } catch (const divergence_error&) {
            res.diverged = true;
            res.diverged_at_step = step + 1;
            return res;
        }
    }
    return res;
}

double classification_error(const LayerGraph& graph, const ParamSet& params,
                            const Tensor4& images, std::span<const int> labels, int batch_size) {
    size_t wrong = 0;
    std::vector<size_t> idx;
    for (size_t pos = 0; pos < static_cast<size_t>(images.batch); pos += batch_size) {
        const size_t end = std::min(pos + batch_size, static_cast<size_t>(images.batch));
        idx.resize(end - pos);
        std::iota(idx.begin(), idx.end(), pos);
        Tensor4 batch = gather_batch(images, idx);
        const auto logits = forward_eval(graph, params, batch);
        for (size_t b = 0; b < idx.size(); ++b) {
            const double* l = &logits[b * graph.num_classes];
            int best = 0;
            for (int c = 1; c < graph.num_classes; ++c)
                if (l[c] > l[best]) best = c;
            if (best != labels[idx[b]]) ++wrong;
        }
    }
    return static_cast<double>(wrong) / images.batch;
}

}  // namespace mlns
