#include "mlns/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "mlns/checkpoint.hpp"
#include "mlns/modal.hpp"

#include <json.hpp>

namespace fs = std::filesystem;

namespace mlns {

namespace {

constexpr uint64_t kProbeSeed = 0xA11A5EEDull;
constexpr uint64_t kNoiseStream = 0x6E015Eull;
constexpr uint64_t kShuffleStream = 1000;

const std::vector<std::pair<Variant, const char*>> kVariantNames = {
    {Variant::baseline, "baseline"},     {Variant::batchnorm, "batchnorm"},
    {Variant::bn_amplify, "bn_amplify"}, {Variant::bn_suppress, "bn_suppress"},
    {Variant::bn_prior, "bn_prior"},     {Variant::nlms_l1, "nlms_l1"},
    {Variant::nlms_l2, "nlms_l2"}};

}  // namespace

std::string to_string(Variant v) {
    for (const auto& [var, name] : kVariantNames)
        if (var == v) return name;
    return "?";
}

Variant variant_from_string(const std::string& s) {
    for (const auto& [var, name] : kVariantNames)
        if (s == name) return var;
    throw config_error("unknown variant '" + s +
                       "' (expected baseline|batchnorm|bn_amplify|bn_suppress|bn_prior|"
                       "nlms_l1|nlms_l2)");
}

std::vector<std::string> validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> errs;
    if (cfg.command != "train" && cfg.command != "sweep" && cfg.command != "noise" &&
        cfg.command != "analyze")
        errs.push_back("command must be train|sweep|analyze|noise");
    if (cfg.variants.empty()) errs.push_back("at least one variant required");
    if (cfg.mu_conv.empty()) errs.push_back("mu grid must be nonempty");
    for (double mu : cfg.mu_conv)
        if (!(mu >= 0.0)) errs.push_back("mu_conv values must be nonnegative");
    if (!(cfg.mu_other >= 0.0)) errs.push_back("mu_other must be nonnegative");
    if (cfg.seeds.empty()) errs.push_back("seeds must be nonempty");
    if (cfg.epochs <= 0) errs.push_back("epochs must be positive");
    if (cfg.batch_size <= 0) errs.push_back("batch_size must be positive");
    for (int s : cfg.analysis_steps)
        if (s <= 0) errs.push_back("analysis_steps must be positive");
    if (cfg.analysis_batch <= 0) errs.push_back("analysis_batch must be positive");
    if (!(cfg.noise_alpha >= 0.0)) errs.push_back("noise_alpha must be nonnegative");
    if (cfg.dataset != "mnist" && cfg.dataset != "synthetic")
        errs.push_back("dataset must be mnist|synthetic");
    if (cfg.dataset == "synthetic" && cfg.command != "analyze")
        errs.push_back("dataset=synthetic is only supported by the analyze command");
    if (!(cfg.bn_threshold > 0.0)) errs.push_back("bn_threshold must be positive");
    if (!(cfg.nlms_eps > 0.0)) errs.push_back("nlms_eps must be positive");
    if (cfg.train_limit < 0 || cfg.val_limit < 0)
        errs.push_back("train_limit/val_limit must be nonnegative (0 = all)");
    if (cfg.out_dir.empty()) errs.push_back("out dir must be set");
    if (cfg.command == "noise") {
        for (Variant v : cfg.variants)
            if (v == Variant::bn_amplify || v == Variant::bn_suppress)
                errs.push_back("noise study variants are baseline|batchnorm|bn_prior|"
                               "nlms_l1|nlms_l2");
    }
    if (cfg.dataset == "synthetic") {
        try {
            cfg.synth.validate();
        } catch (const std::exception& e) {
            errs.push_back(e.what());
        }
    }
    return errs;
}

namespace {

template <typename T>
std::string join_list(const std::vector<T>& v, std::string (*fmt)(T)) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += fmt(v[i]);
    }
    return out;
}

std::string fmt_u64(uint64_t v) { return std::to_string(v); }
std::string fmt_int(int v) { return std::to_string(v); }
std::string fmt_dbl(double v) { return format_double(v); }
std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_kv(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("command", cfg.command);
    std::string vnames;
    for (size_t i = 0; i < cfg.variants.size(); ++i)
        vnames += (i ? "," : "") + to_string(cfg.variants[i]);
    kv.emplace_back("variants", vnames);
    kv.emplace_back("mu_conv", join_list<double>(cfg.mu_conv, fmt_dbl));
    kv.emplace_back("mu_other", format_double(cfg.mu_other));
    kv.emplace_back("seeds", join_list<uint64_t>(cfg.seeds, fmt_u64));
    kv.emplace_back("epochs", std::to_string(cfg.epochs));
    kv.emplace_back("batch_size", std::to_string(cfg.batch_size));
    kv.emplace_back("analysis_steps", join_list<int>(cfg.analysis_steps, fmt_int));
    kv.emplace_back("analysis_batch", std::to_string(cfg.analysis_batch));
    kv.emplace_back("noise_alpha", format_double(cfg.noise_alpha));
    kv.emplace_back("propagate_upstream", fmt_bool(cfg.propagate_upstream));
    kv.emplace_back("freeze_fc", fmt_bool(cfg.freeze_fc));
    kv.emplace_back("variant_conv2_only", fmt_bool(cfg.variant_conv2_only));
    kv.emplace_back("pmd_exact", fmt_bool(cfg.pmd_exact));
    kv.emplace_back("dataset", cfg.dataset);
    kv.emplace_back("mnist_dir", cfg.mnist_dir);
    kv.emplace_back("train_limit", std::to_string(cfg.train_limit));
    kv.emplace_back("val_limit", std::to_string(cfg.val_limit));
    kv.emplace_back("paper_scale", fmt_bool(cfg.paper_scale));
    kv.emplace_back("bn_threshold", format_double(cfg.bn_threshold));
    kv.emplace_back("prose_mask", fmt_bool(cfg.prose_mask));
    kv.emplace_back("nlms_eps", format_double(cfg.nlms_eps));
    kv.emplace_back("out", cfg.out_dir);
    kv.emplace_back("fail_on_divergence", fmt_bool(cfg.fail_on_divergence));
    kv.emplace_back("aggregate_only", fmt_bool(cfg.aggregate_only));
    kv.emplace_back("synth_channels", std::to_string(cfg.synth.channels));
    kv.emplace_back("synth_powers", join_list<double>(cfg.synth.powers, fmt_dbl));
    kv.emplace_back("synth_rho", format_double(cfg.synth.rho));
    kv.emplace_back("synth_block", std::to_string(cfg.synth.block_size));
    kv.emplace_back("synth_samples", std::to_string(cfg.synth.samples));
    kv.emplace_back("synth_seed", std::to_string(cfg.synth.seed));
    return kv;
}

ExperimentConfig config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
    ExperimentConfig cfg;
    cfg.variants.clear();
    cfg.mu_conv.clear();
    cfg.seeds.clear();
    std::vector<std::string> errs;

    auto parse_bool = [&](const std::string& key, const std::string& v, bool& out) {
        if (v == "true" || v == "1") out = true;
        else if (v == "false" || v == "0") out = false;
        else errs.push_back(key + ": expected true/false, got '" + v + "'");
    };
    auto parse_int = [&](const std::string& key, const std::string& v, int& out) {
        try { out = std::stoi(v); } catch (...) { errs.push_back(key + ": bad integer '" + v + "'"); }
    };
    auto parse_dbl = [&](const std::string& key, const std::string& v, double& out) {
        try { out = parse_double(v); } catch (...) { errs.push_back(key + ": bad number '" + v + "'"); }
    };

    for (const auto& [key, val] : kv) {
        if (key == "command") cfg.command = val;
        else if (key == "variants" || key == "variant") {
            for (const auto& name : split_list(val)) {
                try { cfg.variants.push_back(variant_from_string(name)); }
                catch (const std::exception& e) { errs.push_back(e.what()); }
            }
        } else if (key == "mu_conv") {
            for (const auto& s : split_list(val)) {
                double d = 0.0;
                parse_dbl(key, s, d);
                cfg.mu_conv.push_back(d);
            }
        } else if (key == "mu_other") parse_dbl(key, val, cfg.mu_other);
        else if (key == "seeds" || key == "seed") {
            for (const auto& s : split_list(val)) {
                try { cfg.seeds.push_back(std::stoull(s)); }
                catch (...) { errs.push_back("seeds: bad integer '" + s + "'"); }
            }
        } else if (key == "epochs") parse_int(key, val, cfg.epochs);
        else if (key == "batch_size") parse_int(key, val, cfg.batch_size);
        else if (key == "analysis_steps") {
            cfg.analysis_steps.clear();
            for (const auto& s : split_list(val)) {
                int x = 0;
                parse_int(key, s, x);
                cfg.analysis_steps.push_back(x);
            }
        } else if (key == "analysis_batch") parse_int(key, val, cfg.analysis_batch);
        else if (key == "noise_alpha") parse_dbl(key, val, cfg.noise_alpha);
        else if (key == "propagate_upstream") parse_bool(key, val, cfg.propagate_upstream);
        else if (key == "freeze_fc") parse_bool(key, val, cfg.freeze_fc);
        else if (key == "variant_conv2_only") parse_bool(key, val, cfg.variant_conv2_only);
        else if (key == "pmd_exact") parse_bool(key, val, cfg.pmd_exact);
        else if (key == "dataset") cfg.dataset = val;
        else if (key == "mnist_dir") cfg.mnist_dir = val;
        else if (key == "train_limit") parse_int(key, val, cfg.train_limit);
        else if (key == "val_limit") parse_int(key, val, cfg.val_limit);
        else if (key == "paper_scale") parse_bool(key, val, cfg.paper_scale);
        else if (key == "bn_threshold") parse_dbl(key, val, cfg.bn_threshold);
        else if (key == "prose_mask") parse_bool(key, val, cfg.prose_mask);
        else if (key == "nlms_eps") parse_dbl(key, val, cfg.nlms_eps);
        else if (key == "out") cfg.out_dir = val;
        else if (key == "fail_on_divergence") parse_bool(key, val, cfg.fail_on_divergence);
        else if (key == "aggregate_only") parse_bool(key, val, cfg.aggregate_only);
        else if (key == "synth_channels") parse_int(key, val, cfg.synth.channels);
        else if (key == "synth_powers") {
            cfg.synth.powers.clear();
            for (const auto& s : split_list(val)) {
                double d = 0.0;
                parse_dbl(key, s, d);
                cfg.synth.powers.push_back(d);
            }
        } else if (key == "synth_rho") parse_dbl(key, val, cfg.synth.rho);
        else if (key == "synth_block") parse_int(key, val, cfg.synth.block_size);
        else if (key == "synth_samples") parse_int(key, val, cfg.synth.samples);
        else if (key == "synth_seed") {
            try { cfg.synth.seed = std::stoull(val); }
            catch (...) { errs.push_back("synth_seed: bad integer"); }
        } else errs.push_back("unknown config key '" + key + "'");
    }

    if (cfg.variants.empty()) cfg.variants.push_back(Variant::baseline);
    if (cfg.mu_conv.empty()) cfg.mu_conv.push_back(0.1);
    if (cfg.seeds.empty()) cfg.seeds.push_back(1);
    if (!errs.empty()) {
        std::string all;
        for (const auto& e : errs) all += (all.empty() ? "" : "\n") + e;
        throw config_error(all);
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path + ": cannot open config file");
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments and whitespace
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
        auto notspace = [](unsigned char c) { return !std::isspace(c); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return config_from_kv(kv);
}

void write_config_txt(const std::string& dir, const ExperimentConfig& cfg) {
    std::ostringstream os;
    for (const auto& [k, v] : config_kv(cfg)) os << k << '=' << v << '\n';
    std::error_code ec;
    fs::create_directories(dir, ec);
    write_file_atomic(dir + "/config.txt", os.str());
}

Wiring build_network(Variant v, const ExperimentConfig& cfg) {
    const ConvGeometry conv1{1, 6, 5, 5, 1, 0};
    const ConvGeometry conv2{6, 16, 5, 5, 1, 0};
    const bool conv2_only = cfg.variant_conv2_only;

    Wiring w;
    w.graph.input = {1, 32, 32};
    w.graph.num_classes = 10;
    auto& L = w.graph.layers;

    const NormVariant nv = v == Variant::bn_amplify    ? NormVariant::amplify
                           : v == Variant::bn_suppress ? NormVariant::suppress
                                                       : NormVariant::standard;
    auto norm_after = [&] {
        return NormLayer{nv, NormPlacement::after_conv, cfg.bn_threshold, cfg.prose_mask};
    };
    auto norm_before = [&] {
        return NormLayer{NormVariant::standard, NormPlacement::before_conv, cfg.bn_threshold,
                         cfg.prose_mask};
    };

    const bool normed = v == Variant::batchnorm || v == Variant::bn_amplify ||
                        v == Variant::bn_suppress;
    if (normed && !conv2_only) {
        L = {ConvLayer{conv1, false}, norm_after(), ReluLayer{}, PoolLayer{2, 2},
             ConvLayer{conv2, false}, norm_after(), ReluLayer{}, PoolLayer{2, 2},
             FcLayer{400, 10}};
    } else if (normed && conv2_only) {
        L = {ConvLayer{conv1, true}, ReluLayer{}, PoolLayer{2, 2},
             ConvLayer{conv2, false}, norm_after(), ReluLayer{}, PoolLayer{2, 2},
             FcLayer{400, 10}};
    } else if (v == Variant::bn_prior && !conv2_only) {
        L = {norm_before(), ConvLayer{conv1, true}, ReluLayer{}, PoolLayer{2, 2},
             norm_before(), ConvLayer{conv2, true}, ReluLayer{}, PoolLayer{2, 2},
             FcLayer{400, 10}};
    } else if (v == Variant::bn_prior && conv2_only) {
        L = {ConvLayer{conv1, true}, ReluLayer{}, PoolLayer{2, 2},
             norm_before(), ConvLayer{conv2, true}, ReluLayer{}, PoolLayer{2, 2},
             FcLayer{400, 10}};
    } else {
        // baseline and the NLMS variants share the Table-I topology
        L = {ConvLayer{conv1, true}, ReluLayer{}, PoolLayer{2, 2},
             ConvLayer{conv2, true}, ReluLayer{}, PoolLayer{2, 2},
             FcLayer{400, 10}};
    }
    w.graph.validate();

    if (v == Variant::nlms_l1 || v == Variant::nlms_l2) {
        w.nlms_norm = v == Variant::nlms_l1 ? NlmsNorm::l1 : NlmsNorm::l2;
        if (conv2_only)
            w.nlms_convs = {1};
        else
            for (int i = 0; i < w.graph.n_conv; ++i) w.nlms_convs.push_back(i);
    }

    // conv ordinal -> immediately preceding norm ordinal (PMD-exact update)
    w.prior_norm.assign(w.graph.n_conv, -1);
    for (size_t li = 1; li < w.graph.layers.size(); ++li)
        if (std::holds_alternative<ConvLayer>(w.graph.layers[li]) &&
            std::holds_alternative<NormLayer>(w.graph.layers[li - 1]))
            w.prior_norm[w.graph.ordinal[li]] = w.graph.ordinal[li - 1];

    w.noise_target_conv = w.graph.n_conv > 1 ? 1 : 0;
    return w;
}

std::string run_id_for(Variant v, double mu, uint64_t seed, double alpha) {
    std::string id = to_string(v) + "_mu" + format_double(mu) + "_s" + std::to_string(seed);
    if (alpha > 0.0) id += "_a" + format_double(alpha);
    return id;
}

std::vector<size_t> probe_indices(size_t dataset_size, size_t count) {
    std::vector<size_t> idx(dataset_size);
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(kProbeSeed);
    rng.shuffle(idx);
    idx.resize(std::min(count, dataset_size));
    return idx;
}

RunResult run_training(const ExperimentConfig& cfg, Variant v, double mu, uint64_t seed,
                       const MnistData& data, double alpha) {
    Wiring w = build_network(v, cfg);
    ParamSet params = init_params(w.graph, seed);

    RunResult res;
    auto& rec = res.record;
    rec.run_id = run_id_for(v, mu, seed, alpha);
    rec.variant = to_string(v);
    rec.seed = seed;
    rec.mu = mu;
    rec.topology = w.graph.fingerprint();
    {
        ExperimentConfig echo = cfg;
        echo.variants = {v};
        echo.mu_conv = {mu};
        echo.seeds = {seed};
        echo.noise_alpha = alpha;
        rec.config = config_kv(echo);
    }

    const std::string run_dir = cfg.out_dir + "/" + rec.run_id;

    Tensor4 probe;
    if (!cfg.analysis_steps.empty()) {
        auto idx = probe_indices(static_cast<size_t>(data.train.images.batch),
                                 static_cast<size_t>(cfg.analysis_batch));
        probe = gather_batch(data.train.images, idx);
    }

    NoiseStream noise(mix_seed(seed, kNoiseStream));
    ErrorHook hook;
    const bool use_hook = alpha > 0.0;
    if (use_hook) {
        hook.target_conv = w.noise_target_conv;
        hook.propagate_upstream = cfg.propagate_upstream;
        hook.transform = [&](const Tensor4& e) { return noise.inject(e, alpha); };
    }

    SgdOptions sgd;
    sgd.mu_conv = mu;
    sgd.mu_other = cfg.mu_other;
    sgd.freeze_fc = cfg.freeze_fc;
    sgd.skip_conv_weights = w.nlms_convs;

    UpdateFn update;
    if (!w.nlms_convs.empty()) {
        NlmsConfig ncfg{w.nlms_norm, cfg.nlms_eps, mu};
        update = [&, ncfg](ParamSet& p, const ForwardCache& cache, const BackwardRecord& grads) {
            sgd_step(p, grads, sgd);
            for (int ord : w.nlms_convs) {
                const int li = w.graph.conv_layer_index(ord);
                const auto& geom = std::get<ConvLayer>(w.graph.layers[li]).geom;
                nlms_conv_update(p.conv[ord].w, geom.out_channels, cache.unrolled[li],
                                 grads.conv_local_error[ord], ncfg);
            }
        };
    } else if (cfg.pmd_exact && v == Variant::bn_prior) {
        // learned-parameter correction: divide each channel by gamma^2 + beta^2
        SgdOptions sgd_skip = sgd;
        for (int i = 0; i < w.graph.n_conv; ++i)
            if (w.prior_norm[i] >= 0) sgd_skip.skip_conv_weights.push_back(i);
        update = [&, sgd_skip](ParamSet& p, const ForwardCache& cache,
                               const BackwardRecord& grads) {
            sgd_step(p, grads, sgd_skip);
            for (int ord = 0; ord < w.graph.n_conv; ++ord) {
                if (w.prior_norm[ord] < 0) continue;
                const int li = w.graph.conv_layer_index(ord);
                const auto& geom = std::get<ConvLayer>(w.graph.layers[li]).geom;
                const auto& ns = p.norm[w.prior_norm[ord]];
                std::vector<double> denoms(ns.channels);
                for (int c = 0; c < ns.channels; ++c)
                    denoms[c] = learned_param_denominator(ns.gamma[c], ns.beta[c]);
                channel_denominator_update(p.conv[ord].w, geom.out_channels, cache.unrolled[li],
                                           grads.conv_local_error[ord], denoms, mu, cfg.nlms_eps);
            }
        };
    }

    int current_epoch = 1;
    EpochOptions eopt;
    eopt.sgd = sgd;
    eopt.hook = use_hook ? &hook : nullptr;
    eopt.update = update;
    eopt.on_step = [&](int step, double loss, ParamSet& p) {
        rec.metrics.push_back({rec.run_id, seed, mu, rec.variant, current_epoch, step, loss,
                               std::numeric_limits<double>::quiet_NaN()});
        if (std::find(cfg.analysis_steps.begin(), cfg.analysis_steps.end(), step) !=
            cfg.analysis_steps.end()) {
            auto fwd = forward_probe(w.graph, p, probe, {});
            for (size_t li = 0; li < w.graph.layers.size(); ++li) {
                if (!std::holds_alternative<ConvLayer>(w.graph.layers[li])) continue;
                const int ord = w.graph.ordinal[li];
                ModalReport rep = analyze_layer(fwd.cache.unrolled[li], mu);
                rec.modal.push_back({rec.run_id, ord + 1, step, rep.lambda_min, rep.lambda_max,
                                     rep.mu_max, rep.tau_max, rep.block_energy});
                for (size_t c = 0; c < rep.channel_variances.size(); ++c)
                    rec.channels.push_back({rec.run_id, ord + 1, step, static_cast<int>(c),
                                            rep.channel_variances[c]});
            }
            save_checkpoint(run_dir + "/step" + std::to_string(step) + ".ckpt", w.graph, p);
        }
    };

    fs::create_directories(run_dir);

    int total_steps = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        current_epoch = epoch;
        eopt.first_step = total_steps;
        auto er = train_epoch(w.graph, params, data.train.images, data.train.labels,
                              cfg.batch_size, mix_seed(seed, kShuffleStream + epoch), eopt);
        total_steps += er.steps_run;
        if (er.diverged) {
            res.diverged = true;
            res.diverged_step = er.diverged_at_step;
            break;
        }
        try {
            const double ve = classification_error(w.graph, params, data.val.images,
                                                   data.val.labels, 256);
            rec.metrics.push_back({rec.run_id, seed, mu, rec.variant, epoch, total_steps,
                                   std::numeric_limits<double>::quiet_NaN(), ve});
            res.final_val_error = ve;
        } catch (const divergence_error&) {
            res.diverged = true;
            res.diverged_step = total_steps;
            break;
        }
    }
    rec.outcome = res.diverged ? "unstable at step " + std::to_string(res.diverged_step)
                               : "completed";
    if (res.diverged) res.final_val_error = 1.0;
    save_checkpoint(run_dir + "/final.ckpt", w.graph, params);
    return res;
}

namespace {

MnistData load_dataset(const ExperimentConfig& cfg) {
    return load_mnist(cfg.mnist_dir, static_cast<size_t>(cfg.train_limit),
                      static_cast<size_t>(cfg.val_limit));
}

bool run_matches(const std::string& dir,
                 const std::vector<std::pair<std::string, std::string>>& expect_cfg) {
    std::ifstream in(dir + "/run.json");
    if (!in) return false;
    nlohmann::json j;
    try {
        in >> j;
    } catch (...) {
        return false;
    }
    if (!j.contains("config") || !j.contains("outcome")) return false;
    for (const auto& [k, v] : expect_cfg) {
        if (!j["config"].contains(k) || j["config"][k] != v) return false;
    }
    return true;
}

int report_config_errors(const std::vector<std::string>& errs) {
    std::cerr << "config errors:\n";
    for (const auto& e : errs) std::cerr << "  - " << e << "\n";
    return 1;
}

struct RunSpec {
    Variant variant;
    double mu;
    uint64_t seed;
    double alpha;
};

std::vector<RunSpec> enumerate_runs(const ExperimentConfig& cfg, bool with_noise_pairs) {
    std::vector<RunSpec> specs;
    for (Variant v : cfg.variants)
        for (double mu : cfg.mu_conv)
            for (uint64_t seed : cfg.seeds) {
                if (with_noise_pairs && cfg.noise_alpha > 0.0) {
                    specs.push_back({v, mu, seed, 0.0});
                    specs.push_back({v, mu, seed, cfg.noise_alpha});
                } else {
                    specs.push_back({v, mu, seed, cfg.noise_alpha});
                }
            }
    return specs;
}

int execute_runs(const ExperimentConfig& cfg, const std::vector<RunSpec>& specs,
                 bool skip_existing) {
    MnistData data;
    try {
        data = load_dataset(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    write_config_txt(cfg.out_dir, cfg);

    bool any_diverged = false;
    for (const auto& s : specs) {
        const std::string id = run_id_for(s.variant, s.mu, s.seed, s.alpha);
        const std::string dir = cfg.out_dir + "/" + id;
        ExperimentConfig echo = cfg;
        echo.variants = {s.variant};
        echo.mu_conv = {s.mu};
        echo.seeds = {s.seed};
        echo.noise_alpha = s.alpha;
        if (skip_existing && run_matches(dir, config_kv(echo))) {
            std::cout << id << ": exists, skipped\n";
            continue;
        }
        try {
            auto r = run_training(cfg, s.variant, s.mu, s.seed, data, s.alpha);
            write_run(dir, r.record);
            write_config_txt(dir, echo);
            any_diverged |= r.diverged;
            std::cout << id << ": " << r.record.outcome;
            if (!r.diverged) std::cout << ", val_error=" << format_double(r.final_val_error);
            std::cout << "\n";
        } catch (const io_error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
    }
    return (cfg.fail_on_divergence && any_diverged) ? 3 : 0;
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
    if (auto errs = validate_config(cfg); !errs.empty()) return report_config_errors(errs);
    return execute_runs(cfg, enumerate_runs(cfg, false), false);
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

int cmd_sweep(const ExperimentConfig& cfg) {
    if (auto errs = validate_config(cfg); !errs.empty()) return report_config_errors(errs);

    const auto specs = enumerate_runs(cfg, false);
    if (cfg.aggregate_only) {
        std::vector<std::string> missing;
        for (const auto& s : specs) {
            ExperimentConfig echo = cfg;
            echo.variants = {s.variant};
            echo.mu_conv = {s.mu};
            echo.seeds = {s.seed};
            echo.noise_alpha = s.alpha;
            const std::string dir = cfg.out_dir + "/" + run_id_for(s.variant, s.mu, s.seed, s.alpha);
            if (!run_matches(dir, config_kv(echo)))
                missing.push_back("(" + to_string(s.variant) + ", mu=" + format_double(s.mu) +
                                  ", seed=" + std::to_string(s.seed) + ")");
        }
        if (!missing.empty()) {
            std::cerr << "missing runs:\n";
            for (const auto& m : missing) std::cerr << "  - " << m << "\n";
            return 1;
        }
    } else {
        if (int rc = execute_runs(cfg, specs, true); rc != 0) return rc;
    }

    // aggregation is a pure function of the run files
    std::ostringstream os;
    os << "variant,mu,alpha,seeds,unstable,q1_val_error,median_val_error,q3_val_error\n";
    for (Variant v : cfg.variants) {
        for (double mu : cfg.mu_conv) {
            std::vector<double> finals;
            int unstable = 0;
            for (uint64_t seed : cfg.seeds) {
                const std::string dir =
                    cfg.out_dir + "/" + run_id_for(v, mu, seed, cfg.noise_alpha);
                std::ifstream in(dir + "/run.json");
                nlohmann::json j;
                try {
                    in >> j;
                } catch (...) {
                    std::cerr << "error: cannot read " << dir << "/run.json\n";
                    return 2;
                }
                const std::string outcome = j["outcome"].get<std::string>();
                if (outcome != "completed") {
                    ++unstable;
                    finals.push_back(1.0);  // diverged runs count as full error
                    continue;
                }
                double last = 1.0;
                for (const auto& row : read_metrics_csv(dir + "/metrics.csv"))
                    if (!std::isnan(row.val_error)) last = row.val_error;
                finals.push_back(last);
            }
            os << to_string(v) << ',' << format_double(mu) << ','
               << format_double(cfg.noise_alpha) << ',' << finals.size() << ',' << unstable << ','
               << format_double(quantile(finals, 0.25)) << ','
               << format_double(quantile(finals, 0.5)) << ','
               << format_double(quantile(finals, 0.75)) << '\n';
        }
    }
    try {
        write_file_atomic(cfg.out_dir + "/sweep.csv", os.str());
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cout << "wrote " << cfg.out_dir << "/sweep.csv\n";
    return 0;
}

int cmd_noise(ExperimentConfig cfg) {
    cfg.freeze_fc = true;
    cfg.variant_conv2_only = true;
    if (auto errs = validate_config(cfg); !errs.empty()) return report_config_errors(errs);
    return execute_runs(cfg, enumerate_runs(cfg, true), false);
}

int cmd_analyze(const AnalyzeArgs& args) {
    ExperimentConfig cfg = args.base;
    std::string out_dir = args.out_dir;
    double mu = args.mu;  // NaN until a source provides one

    try {
        RunRecord rec;
        std::vector<ModalRow> modal;
        std::vector<ChannelRow> channels;
        std::string run_id = "analysis";

        if (cfg.dataset == "synthetic") {
            if (std::isnan(mu)) mu = 0.1;
            cfg.synth.validate();
            const UnrolledInput u = synth_channels(cfg.synth);
            std::vector<UnrolledInput> batch;
            batch.push_back(u);
            ModalReport rep = analyze_layer(batch, mu);
            modal.push_back({run_id, 0, 0, rep.lambda_min, rep.lambda_max, rep.mu_max,
                             rep.tau_max, rep.block_energy});
            for (size_t c = 0; c < rep.channel_variances.size(); ++c)
                channels.push_back({run_id, 0, 0, static_cast<int>(c), rep.channel_variances[c]});
        } else {
            Variant variant = Variant::baseline;
            std::string ckpt_path = args.checkpoint;
            int step = args.step;
            if (!args.run_dir.empty()) {
                std::ifstream in(args.run_dir + "/run.json");
                if (!in) throw io_error(args.run_dir + "/run.json: cannot open");
                nlohmann::json j;
                in >> j;
                variant = variant_from_string(j["variant"].get<std::string>());
                run_id = j["run_id"].get<std::string>();
                if (std::isnan(mu)) mu = j["mu_conv"].get<double>();
                std::vector<std::pair<std::string, std::string>> kv;
                for (const auto& [k, v] : j["config"].items())
                    kv.emplace_back(k, v.get<std::string>());
                ExperimentConfig run_cfg = config_from_kv(kv);
                run_cfg.mnist_dir = cfg.mnist_dir;  // data may live elsewhere now
                run_cfg.dataset = "mnist";
                cfg = run_cfg;
                if (ckpt_path.empty()) {
                    ckpt_path = step > 0 ? args.run_dir + "/step" + std::to_string(step) + ".ckpt"
                                         : args.run_dir + "/final.ckpt";
                    if (!fs::exists(ckpt_path))
                        throw io_error(ckpt_path +
                                       ": no checkpoint found; rerun training with "
                                       "--analysis-steps to capture analysis snapshots");
                }
                if (out_dir.empty()) out_dir = args.run_dir;
            } else {
                if (ckpt_path.empty())
                    throw config_error("analyze requires --run-dir or --checkpoint");
                if (args.variant.empty())
                    throw config_error("analyze with --checkpoint requires --variant");
                variant = variant_from_string(args.variant);
            }
            if (out_dir.empty()) out_dir = ".";
            if (std::isnan(mu)) mu = 0.1;

            Wiring w = build_network(variant, cfg);
            ParamSet params = load_checkpoint(ckpt_path, w.graph);
            MnistData data = load_dataset(cfg);
            auto idx = probe_indices(static_cast<size_t>(data.train.images.batch),
                                     static_cast<size_t>(cfg.analysis_batch));
            Tensor4 probe = gather_batch(data.train.images, idx);
            auto fwd = forward_probe(w.graph, params, probe, {});
            for (size_t li = 0; li < w.graph.layers.size(); ++li) {
                if (!std::holds_alternative<ConvLayer>(w.graph.layers[li])) continue;
                const int ord = w.graph.ordinal[li];
                ModalReport rep = analyze_layer(fwd.cache.unrolled[li], mu);
                modal.push_back({run_id, ord + 1, std::max(step, 0), rep.lambda_min,
                                 rep.lambda_max, rep.mu_max, rep.tau_max, rep.block_energy});
                for (size_t c = 0; c < rep.channel_variances.size(); ++c)
                    channels.push_back({run_id, ord + 1, std::max(step, 0), static_cast<int>(c),
                                        rep.channel_variances[c]});
            }
        }

        if (out_dir.empty()) out_dir = ".";
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        std::ostringstream ms;
        ms << "run_id,layer,step,lambda_min,lambda_max,mu_max,tau_max,block_energy_ratio\n";
        for (const auto& r : modal)
            ms << r.run_id << ',' << r.layer << ',' << r.step << ',' << format_double(r.lambda_min)
               << ',' << format_double(r.lambda_max) << ',' << format_double(r.mu_max) << ','
               << format_double(r.tau_max) << ',' << format_double(r.block_energy_ratio) << '\n';
        write_file_atomic(out_dir + "/analyze-modal.csv", ms.str());
        std::ostringstream cs;
        cs << "run_id,layer,step,channel,variance\n";
        for (const auto& r : channels)
            cs << r.run_id << ',' << r.layer << ',' << r.step << ',' << r.channel << ','
               << format_double(r.variance) << '\n';
        write_file_atomic(out_dir + "/analyze-channels.csv", cs.str());
        std::cout << "wrote " << out_dir << "/analyze-modal.csv (" << modal.size() << " rows)\n";
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace mlns
