#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlns/tensor.hpp"

namespace mlns {

struct Dataset {
    Tensor4 images;  // B x 1 x 32 x 32 after padding
    std::vector<int> labels;
    std::string split;
};

// Parses a standard big-endian IDX image/label pair. 28x28 images are
// zero-padded to 32x32; pixels scaled to [0,1]. Standardization is applied
// separately so the validation split can reuse the training statistics.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

struct MnistData {
    Dataset train, val;
    double pixel_mean = 0.0, pixel_std = 1.0;  // training-split statistics
};

// Loads train/t10k files from `dir`, keeps the first train_limit/val_limit
// images (0 = all), and standardizes both splits by the training split's
// global mean/std.
MnistData load_mnist(const std::string& dir, size_t train_limit = 0, size_t val_limit = 0);

// Gaussian channel blocks with chosen powers and a shared latent factor
// giving pairwise correlation rho between channels at matched block offsets.
struct SyntheticSpec {
    int channels = 1;
    std::vector<double> powers;  // per-channel variance
    double rho = 0.0;            // in [0, 1)
    int block_size = 1;          // rows per channel block
    int samples = 0;             // columns
    uint64_t seed = 0;
    std::vector<double> teacher;  // optional, length channels*block_size

    void validate() const;
};

UnrolledInput synth_channels(const SyntheticSpec& spec);

// d_m = teacher . column_m (system-identification target)
std::vector<double> synth_desired(const UnrolledInput& u, std::span<const double> teacher);

// --- result records ---------------------------------------------------------

struct MetricRow {
    std::string run_id;
    uint64_t seed = 0;
    double mu = 0.0;
    std::string variant;
    int epoch = 0;
    int step = 0;
    double train_loss = 0.0;  // NaN = blank (epoch summary row)
    double val_error = 0.0;   // NaN = blank (per-step row)
};

struct ModalRow {
    std::string run_id;
    int layer = 0;  // 1-based conv ordinal
    int step = 0;
    double lambda_min = 0.0, lambda_max = 0.0, mu_max = 0.0, tau_max = 0.0;
    double block_energy_ratio = 0.0;
};

struct ChannelRow {
    std::string run_id;
    int layer = 0;
    int step = 0;
    int channel = 0;
    double variance = 0.0;
};

struct RunRecord {
    std::string run_id;
    std::vector<std::pair<std::string, std::string>> config;  // ordered key-value echo
    std::string outcome;      // "completed" or "unstable at step N"
    std::string topology;     // graph fingerprint
    std::string variant;
    uint64_t seed = 0;
    double mu = 0.0;
    std::vector<MetricRow> metrics;
    std::vector<ModalRow> modal;
    std::vector<ChannelRow> channels;
};

// Writes metrics.csv / modal.csv / channels.csv / run.json into dir,
// creating it if needed. Output is byte-stable for identical records.
void write_run(const std::string& dir, const RunRecord& rec);

std::vector<MetricRow> read_metrics_csv(const std::string& path);
std::vector<ModalRow> read_modal_csv(const std::string& path);

// Shortest round-trip decimal form (std::to_chars); "" stays "" on parse.
std::string format_double(double v);
double parse_double(const std::string& s);

void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace mlns
