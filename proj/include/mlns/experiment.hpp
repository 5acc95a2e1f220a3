#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mlns/data.hpp"
#include "mlns/network.hpp"
#include "mlns/nlms.hpp"

namespace mlns {

enum class Variant { baseline, batchnorm, bn_amplify, bn_suppress, bn_prior, nlms_l1, nlms_l2 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);  // throws config_error

struct ExperimentConfig {
    std::string command = "train";
    std::vector<Variant> variants{Variant::baseline};
    std::vector<double> mu_conv{0.1};
    double mu_other = 0.1;
    std::vector<uint64_t> seeds{1};
    int epochs = 5;
    int batch_size = 64;
    std::vector<int> analysis_steps{5};  // eigen-snapshot after 5 training steps
    int analysis_batch = 256;
    double noise_alpha = 0.0;
    bool propagate_upstream = true;
    bool freeze_fc = false;
    bool variant_conv2_only = false;
    bool pmd_exact = false;
    std::string dataset = "mnist";
    std::string mnist_dir = "data/mnist";
    int train_limit = 10000;
    int val_limit = 2000;
    bool paper_scale = false;
    double bn_threshold = 1.0;
    bool prose_mask = false;
    double nlms_eps = 1e-8;
    std::string out_dir = "out";
    bool fail_on_divergence = false;
    bool aggregate_only = false;
    SyntheticSpec synth;
};

// All validation problems at once; empty means the config is usable.
std::vector<std::string> validate_config(const ExperimentConfig& cfg);

// Flat key=value round trip (the config.txt format).
std::vector<std::pair<std::string, std::string>> config_kv(const ExperimentConfig& cfg);
ExperimentConfig config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
ExperimentConfig load_config_file(const std::string& path);
void write_config_txt(const std::string& dir, const ExperimentConfig& cfg);

// A variant's network plus its optimizer wiring.
struct Wiring {
    LayerGraph graph;
    std::vector<int> nlms_convs;       // conv ordinals updated by patchwise NLMS
    NlmsNorm nlms_norm = NlmsNorm::l2;
    std::vector<int> prior_norm;       // conv ordinal -> preceding norm ordinal, -1 if none
    int noise_target_conv = -1;        // conv ordinal that receives injected noise
};

Wiring build_network(Variant v, const ExperimentConfig& cfg);

std::string run_id_for(Variant v, double mu, uint64_t seed, double alpha);

struct RunResult {
    RunRecord record;
    bool diverged = false;
    int diverged_step = -1;
    double final_val_error = 1.0;  // diverged runs count as full error
};

// One deterministic training run; writes nothing (callers persist the record).
RunResult run_training(const ExperimentConfig& cfg, Variant v, double mu, uint64_t seed,
                       const MnistData& data, double alpha);

// Fixed seeded probe batch shared by every run's analysis snapshots.
std::vector<size_t> probe_indices(size_t dataset_size, size_t count);

// Command entry points; return process exit codes:
// 0 ok, 1 config error, 2 IO error, 3 divergence (train/noise with
// fail_on_divergence).
int cmd_train(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);
int cmd_noise(ExperimentConfig cfg);

struct AnalyzeArgs {
    std::string run_dir;     // either this ...
    std::string checkpoint;  // ... or this + variant
    std::string variant;
    int step = -1;  // which saved analysis step to load; -1 = final
    double mu = std::numeric_limits<double>::quiet_NaN();  // NaN: run's mu, else 0.1
    std::string out_dir;  // defaults to run_dir or "."
    ExperimentConfig base;
};

int cmd_analyze(const AnalyzeArgs& args);

// Quartile with linear interpolation on the sorted values; p in [0,1].
double quantile(std::vector<double> values, double p);

}  // namespace mlns
