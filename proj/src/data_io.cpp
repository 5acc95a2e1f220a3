#include "mlns/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "mlns/common.hpp"

#include <json.hpp>

namespace fs = std::filesystem;

namespace mlns {

namespace {

uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw io_error(path + ": truncated (header)");
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

std::string hex8(uint32_t v) {
    char b[16];
    std::snprintf(b, sizeof b, "%08x", v);
    return b;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgf(images_path, std::ios::binary);
    if (!imgf) throw io_error(images_path + ": cannot open");
    const uint32_t img_magic = read_u32_be(imgf, images_path);
    if (img_magic != 0x00000803)
        throw io_error(images_path + ": wrong magic (expected 0x00000803 images, got 0x" +
                       hex8(img_magic) + ")");
    const uint32_t count = read_u32_be(imgf, images_path);
    const uint32_t rows = read_u32_be(imgf, images_path);
    const uint32_t cols = read_u32_be(imgf, images_path);
    std::vector<unsigned char> pixels(static_cast<size_t>(count) * rows * cols);
    if (!imgf.read(reinterpret_cast<char*>(pixels.data()), pixels.size()))
        throw io_error(images_path + ": truncated (image payload)");

    std::ifstream lblf(labels_path, std::ios::binary);
    if (!lblf) throw io_error(labels_path + ": cannot open");
    const uint32_t lbl_magic = read_u32_be(lblf, labels_path);
    if (lbl_magic != 0x00000801)
        throw io_error(labels_path + ": wrong magic (expected 0x00000801 labels, got 0x" +
                       hex8(lbl_magic) + ")");
    const uint32_t lbl_count = read_u32_be(lblf, labels_path);
    if (lbl_count != count)
        throw io_error(labels_path + ": count mismatch (" + std::to_string(lbl_count) +
                       " labels vs " + std::to_string(count) + " images)");
    std::vector<unsigned char> raw_labels(lbl_count);
    if (!lblf.read(reinterpret_cast<char*>(raw_labels.data()), raw_labels.size()))
        throw io_error(labels_path + ": truncated (label payload)");

    // pad 28x28 to the 32x32 LeNet input; other sizes pass through
    const int pad = (rows == 28 && cols == 28) ? 2 : 0;
    const int oh = static_cast<int>(rows) + 2 * pad;
    const int ow = static_cast<int>(cols) + 2 * pad;

    Dataset d;
    d.images = Tensor4(static_cast<int>(count), 1, oh, ow);
    for (uint32_t i = 0; i < count; ++i) {
        const unsigned char* src = &pixels[static_cast<size_t>(i) * rows * cols];
        for (uint32_t r = 0; r < rows; ++r)
            for (uint32_t c = 0; c < cols; ++c)
                d.images.at(static_cast<int>(i), 0, static_cast<int>(r) + pad,
                            static_cast<int>(c) + pad) = src[r * cols + c] / 255.0;
    }
    d.labels.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
        if (raw_labels[i] > 9)
            throw io_error(labels_path + ": label " + std::to_string(raw_labels[i]) +
                           " out of range");
        d.labels[i] = raw_labels[i];
    }
    return d;
}

namespace {

void truncate_dataset(Dataset& d, size_t limit) {
    if (limit == 0 || limit >= d.labels.size()) return;
    d.labels.resize(limit);
    Tensor4 t(static_cast<int>(limit), d.images.channels, d.images.height, d.images.width);
    std::copy_n(d.images.data.begin(), t.data.size(), t.data.begin());
    d.images = std::move(t);
}

}  // namespace

MnistData load_mnist(const std::string& dir, size_t train_limit, size_t val_limit) {
    MnistData m;
    m.train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    m.train.split = "train";
    m.val = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    m.val.split = "val";
    truncate_dataset(m.train, train_limit);
    truncate_dataset(m.val, val_limit);

    double sum = 0.0, sumsq = 0.0;
    for (double v : m.train.images.data) {
        sum += v;
        sumsq += v * v;
    }
    const double n = static_cast<double>(m.train.images.data.size());
    m.pixel_mean = sum / n;
    m.pixel_std = std::sqrt(std::max(0.0, sumsq / n - m.pixel_mean * m.pixel_mean));
    const double inv = m.pixel_std > 0.0 ? 1.0 / m.pixel_std : 1.0;
    for (double& v : m.train.images.data) v = (v - m.pixel_mean) * inv;
    for (double& v : m.val.images.data) v = (v - m.pixel_mean) * inv;
    return m;
}

void SyntheticSpec::validate() const {
    if (channels <= 0) throw config_error("synthetic: channels must be positive");
    if (static_cast<int>(powers.size()) != channels)
        throw config_error("synthetic: one power per channel required");
    for (double p : powers)
        if (!(p > 0.0)) throw config_error("synthetic: powers must be positive");
    if (!(rho >= 0.0 && rho < 1.0))
        throw config_error("synthetic: rho must lie in [0, 1)");
    if (block_size <= 0) throw config_error("synthetic: block_size must be positive");
    if (samples <= 0) throw config_error("synthetic: samples must be positive");
    if (!teacher.empty() && teacher.size() != static_cast<size_t>(channels) * block_size)
        throw config_error("synthetic: teacher length must be channels*block_size");
}

UnrolledInput synth_channels(const SyntheticSpec& spec) {
    spec.validate();
    const int k = spec.channels * spec.block_size;
    UnrolledInput u(k, spec.samples);
    for (int c = 0; c < spec.channels; ++c)
        u.channel_blocks.push_back({c, c * spec.block_size, (c + 1) * spec.block_size});

    Rng rng(spec.seed);
    const double a = std::sqrt(spec.rho);
    const double b = std::sqrt(1.0 - spec.rho);
    std::vector<double> shared(spec.block_size);
    for (int m = 0; m < spec.samples; ++m) {
        for (int z = 0; z < spec.block_size; ++z) shared[z] = rng.normal();
        for (int c = 0; c < spec.channels; ++c) {
            const double amp = std::sqrt(spec.powers[c]);
            for (int z = 0; z < spec.block_size; ++z)
                u.at(c * spec.block_size + z, m) = amp * (a * shared[z] + b * rng.normal());
        }
    }
    return u;
}

std::vector<double> synth_desired(const UnrolledInput& u, std::span<const double> teacher) {
    if (teacher.size() != static_cast<size_t>(u.rows))
        throw std::invalid_argument("synth_desired: teacher length does not match rows");
    std::vector<double> d(u.cols, 0.0);
    for (int r = 0; r < u.rows; ++r) {
        const double w = teacher[r];
        if (w == 0.0) continue;
        const double* row = u.row(r);
        for (int m = 0; m < u.cols; ++m) d[m] += w * row[m];
    }
    return d;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw io_error("cannot parse number: '" + s + "'");
    return v;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error(tmp + ": cannot open for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw io_error(tmp + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw io_error(path + ": rename failed: " + ec.message());
}

namespace {

std::string blank_or(double v) { return std::isnan(v) ? "" : format_double(v); }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void write_run(const std::string& dir, const RunRecord& rec) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error(dir + ": cannot create directory: " + ec.message());

    std::ostringstream metrics;
    metrics << "run_id,seed,mu,variant,epoch,step,train_loss,val_error\n";
    for (const auto& r : rec.metrics)
        metrics << r.run_id << ',' << r.seed << ',' << format_double(r.mu) << ',' << r.variant
                << ',' << r.epoch << ',' << r.step << ',' << blank_or(r.train_loss) << ','
                << blank_or(r.val_error) << '\n';
    write_file_atomic(dir + "/metrics.csv", metrics.str());

    std::ostringstream modal;
    modal << "run_id,layer,step,lambda_min,lambda_max,mu_max,tau_max,block_energy_ratio\n";
    for (const auto& r : rec.modal)
        modal << r.run_id << ',' << r.layer << ',' << r.step << ',' << format_double(r.lambda_min)
              << ',' << format_double(r.lambda_max) << ',' << format_double(r.mu_max) << ','
              << format_double(r.tau_max) << ',' << format_double(r.block_energy_ratio) << '\n';
    write_file_atomic(dir + "/modal.csv", modal.str());

    std::ostringstream channels;
    channels << "run_id,layer,step,channel,variance\n";
    for (const auto& r : rec.channels)
        channels << r.run_id << ',' << r.layer << ',' << r.step << ',' << r.channel << ','
                 << format_double(r.variance) << '\n';
    write_file_atomic(dir + "/channels.csv", channels.str());

    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["code_version"] = kVersion;
    j["run_id"] = rec.run_id;
    j["variant"] = rec.variant;
    j["seed"] = rec.seed;
    j["mu_conv"] = rec.mu;
    j["outcome"] = rec.outcome;
    j["topology"] = rec.topology;
    j["analysis_probe"] = "fixed-seeded-batch";
    nlohmann::ordered_json cfg;
    for (const auto& [k, v] : rec.config) cfg[k] = v;
    j["config"] = cfg;
    write_file_atomic(dir + "/run.json", j.dump(2) + "\n");
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw io_error(path + ": empty file");
    if (line != "run_id,seed,mu,variant,epoch,step,train_loss,val_error")
        throw io_error(path + ": unexpected header");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 8) throw io_error(path + ": malformed row");
        MetricRow r;
        r.run_id = f[0];
        r.seed = std::stoull(f[1]);
        r.mu = parse_double(f[2]);
        r.variant = f[3];
        r.epoch = std::stoi(f[4]);
        r.step = std::stoi(f[5]);
        r.train_loss = f[6].empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(f[6]);
        r.val_error = f[7].empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(f[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<ModalRow> read_modal_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error(path + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw io_error(path + ": empty file");
    if (line != "run_id,layer,step,lambda_min,lambda_max,mu_max,tau_max,block_energy_ratio")
        throw io_error(path + ": unexpected header");
    std::vector<ModalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 8) throw io_error(path + ": malformed row");
        ModalRow r;
        r.run_id = f[0];
        r.layer = std::stoi(f[1]);
        r.step = std::stoi(f[2]);
        r.lambda_min = parse_double(f[3]);
        r.lambda_max = parse_double(f[4]);
        r.mu_max = parse_double(f[5]);
        r.tau_max = parse_double(f[6]);
        r.block_energy_ratio = parse_double(f[7]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace mlns
