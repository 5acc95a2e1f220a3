#include "mlns/nlms.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlns {

namespace {

void check_update_args(const std::vector<double>& w, int out_channels,
                       std::span<const UnrolledInput> unrolled, const Tensor4& local_error) {
    if (unrolled.empty()) throw std::invalid_argument("nlms: empty batch");
    const auto& u0 = unrolled.front();
    if (u0.rows == 0 || u0.cols == 0) throw std::invalid_argument("nlms: zero-length patch");
    if (w.size() != static_cast<size_t>(out_channels) * u0.rows)
        throw std::invalid_argument("nlms: weight size does not match unrolled rows");
    if (local_error.batch != static_cast<int>(unrolled.size()) ||
        local_error.channels != out_channels ||
        local_error.height * local_error.width != u0.cols)
        throw std::invalid_argument("nlms: local error shape mismatch");
    if (u0.channel_blocks.empty())
        throw std::invalid_argument("nlms: unrolled input has no channel blocks");
}

}  // namespace

void nlms_conv_update(std::vector<double>& w, int out_channels,
                      std::span<const UnrolledInput> unrolled, const Tensor4& local_error,
                      const NlmsConfig& cfg) {
    check_update_args(w, out_channels, unrolled, local_error);
    if (cfg.eps <= 0.0) throw std::invalid_argument("nlms: eps must be positive");

    const auto& u0 = unrolled.front();
    const int k = u0.rows;
    const int m = u0.cols;
    const size_t n_blocks = u0.channel_blocks.size();
    std::vector<double> delta(w.size(), 0.0);
    std::vector<double> denom(n_blocks * m);

    for (size_t b = 0; b < unrolled.size(); ++b) {
        const auto& u = unrolled[b];
        // per (channel block, stride) patch power
        for (size_t bi = 0; bi < n_blocks; ++bi) {
            const auto& blk = u.channel_blocks[bi];
            double* drow = &denom[bi * m];
            for (int j = 0; j < m; ++j) drow[j] = cfg.eps;
            for (int r = blk.row_begin; r < blk.row_end; ++r) {
                const double* row = u.row(r);
                if (cfg.norm_kind == NlmsNorm::l2)
                    for (int j = 0; j < m; ++j) drow[j] += row[j] * row[j];
                else
                    for (int j = 0; j < m; ++j) drow[j] += std::abs(row[j]);
            }
        }
        for (int o = 0; o < out_channels; ++o) {
            const double* e = &local_error.data[local_error.offset(static_cast<int>(b), o, 0, 0)];
            double* dw = &delta[static_cast<size_t>(o) * k];
            for (size_t bi = 0; bi < n_blocks; ++bi) {
                const auto& blk = u.channel_blocks[bi];
                const double* drow = &denom[bi * m];
                for (int r = blk.row_begin; r < blk.row_end; ++r) {
                    const double* row = u.row(r);
                    double s = 0.0;
                    for (int j = 0; j < m; ++j) s += e[j] * row[j] / drow[j];
                    dw[r] += s;
                }
            }
        }
    }

    const double scale = cfg.mu / (static_cast<double>(unrolled.size()) * m);
    for (size_t i = 0; i < w.size(); ++i) w[i] -= scale * delta[i];
}

void channel_denominator_update(std::vector<double>& w, int out_channels,
                                std::span<const UnrolledInput> unrolled,
                                const Tensor4& local_error,
                                std::span<const double> channel_denoms, double mu, double eps) {
    check_update_args(w, out_channels, unrolled, local_error);
    const auto& u0 = unrolled.front();
    if (channel_denoms.size() != u0.channel_blocks.size())
        throw std::invalid_argument("nlms: one denominator per channel block required");

    const int k = u0.rows;
    const int m = u0.cols;
    std::vector<double> delta(w.size(), 0.0);
    for (size_t b = 0; b < unrolled.size(); ++b) {
        const auto& u = unrolled[b];
        for (int o = 0; o < out_channels; ++o) {
            const double* e = &local_error.data[local_error.offset(static_cast<int>(b), o, 0, 0)];
            double* dw = &delta[static_cast<size_t>(o) * k];
            for (size_t bi = 0; bi < u.channel_blocks.size(); ++bi) {
                const auto& blk = u.channel_blocks[bi];
                const double inv = 1.0 / std::max(channel_denoms[bi], eps);
                for (int r = blk.row_begin; r < blk.row_end; ++r) {
                    const double* row = u.row(r);
                    double s = 0.0;
                    for (int j = 0; j < m; ++j) s += e[j] * row[j];
                    dw[r] += s * inv;
                }
            }
        }
    }
    const double scale = mu / (static_cast<double>(unrolled.size()) * m);
    for (size_t i = 0; i < w.size(); ++i) w[i] -= scale * delta[i];
}

double learned_param_denominator(double gamma_i, double beta_i) {
    return gamma_i * gamma_i + beta_i * beta_i;
}

std::vector<double> nlms_scalar_step(std::span<const double> w, std::span<const double> x,
                                     double d, double mu) {
    if (w.size() != x.size() || w.empty())
        throw std::invalid_argument("nlms_scalar_step: size mismatch");
    double y = 0.0, xx = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        y += w[i] * x[i];
        xx += x[i] * x[i];
    }
    if (xx == 0.0) throw std::invalid_argument("nlms_scalar_step: zero input");
    const double err = d - y;
    std::vector<double> out(w.begin(), w.end());
    for (size_t i = 0; i < w.size(); ++i) out[i] += mu * err * x[i] / xx;
    return out;
}

PmdAudit pmd_audit_scalar(std::span<const double> w_before, std::span<const double> x, double d,
                          std::span<const double> w_after, int n_probes, uint64_t seed) {
    if (w_before.size() != x.size() || w_after.size() != x.size())
        throw std::invalid_argument("pmd_audit_scalar: size mismatch");
    const size_t n = x.size();

    PmdAudit audit;
    double xx = 0.0;
    for (size_t i = 0; i < n; ++i) xx += x[i] * x[i];
    double y = 0.0, norm_sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
        y += w_after[i] * x[i];
        norm_sq += (w_after[i] - w_before[i]) * (w_after[i] - w_before[i]);
    }
    audit.residual = d - y;
    audit.update_norm = std::sqrt(norm_sq);

    // probes: w_after plus a random direction projected orthogonal to x still
    // satisfies the constraint; none may have a smaller update norm
    Rng rng(seed);
    double best = std::numeric_limits<double>::infinity();
    for (int p = 0; p < n_probes; ++p) {
        std::vector<double> dir(n);
        double dx = 0.0;
        for (size_t i = 0; i < n; ++i) {
            dir[i] = rng.normal();
            dx += dir[i] * x[i];
        }
        if (xx > 0.0)
            for (size_t i = 0; i < n; ++i) dir[i] -= dx / xx * x[i];
        const double scale = rng.uniform(0.1, 2.0);
        double probe_sq = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double delta = w_after[i] + scale * dir[i] - w_before[i];
            probe_sq += delta * delta;
        }
        best = std::min(best, std::sqrt(probe_sq));
    }
    audit.best_probe_norm = best;
    audit.minimal = n_probes == 0 || best >= audit.update_norm - 1e-10;
    return audit;
}

Tensor4 NoiseStream::inject(const Tensor4& local_error, double alpha) {
    if (local_error.data.empty()) throw std::invalid_argument("inject: empty local error");
    Tensor4 out = local_error;
    if (alpha == 0.0) return out;

    double sum = 0.0, sumsq = 0.0;
    for (double v : local_error.data) {
        sum += v;
        sumsq += v * v;
    }
    const double n = static_cast<double>(local_error.data.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sumsq / n - mean * mean);
    const double sigma = std::sqrt(var);
    if (sigma == 0.0) return out;

    for (double& v : out.data) v += alpha * sigma * rng_.normal();
    return out;
}

}  // namespace mlns
