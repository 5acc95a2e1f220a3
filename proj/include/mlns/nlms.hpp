#pragma once

#include <span>
#include <vector>

#include "mlns/common.hpp"
#include "mlns/tensor.hpp"

namespace mlns {

enum class NlmsNorm { l1, l2 };

struct NlmsConfig {
    NlmsNorm norm_kind = NlmsNorm::l2;
    double eps = 1e-8;  // stabilizer added to the patch-power denominator
    double mu = 0.1;
};

// Backward-pass-only weight update for a convolution layer. For every batch
// sample, output channel and output pixel m, the contribution of input
// channel i is  delta_m * x_{z,i}^(m) / (pow_i(m) + eps)  where pow_i(m) is
// the squared L2 norm (or the L1 sum) of the channel-i sub-patch of column m.
// Contributions are averaged over all B*M constraints, scaled by mu and
// subtracted (delta here is +dJ/dy).
void nlms_conv_update(std::vector<double>& w, int out_channels,
                      std::span<const UnrolledInput> unrolled, const Tensor4& local_error,
                      const NlmsConfig& cfg);

// Same update with a per-input-channel constant denominator instead of the
// per-patch power: pass channel variances to get the sigma^2-normalized form,
// or gamma^2 + beta^2 of the preceding norm layer for the learned-parameter
// correction. Denominators are floored at eps.
void channel_denominator_update(std::vector<double>& w, int out_channels,
                                std::span<const UnrolledInput> unrolled,
                                const Tensor4& local_error,
                                std::span<const double> channel_denoms, double mu, double eps);

// gamma_i^2 + beta_i^2; the denominator floor applies when both vanish.
double learned_param_denominator(double gamma_i, double beta_i);

// Scalar-output NLMS step: w' = w + mu * (d - w.x) x / ||x||^2.
std::vector<double> nlms_scalar_step(std::span<const double> w, std::span<const double> x,
                                     double d, double mu);

struct PmdAudit {
    double residual = 0.0;        // d - w_after . x
    double update_norm = 0.0;     // ||w_after - w_before||
    double best_probe_norm = 0.0; // smallest ||delta|| among probes
    bool minimal = false;         // no probe beat the update
};

// Checks the minimum-disturbance property of a scalar-output update: the
// constraint residual, and whether random constraint-satisfying
// perturbations of w_after ever yield a smaller update norm.
PmdAudit pmd_audit_scalar(std::span<const double> w_before, std::span<const double> x, double d,
                          std::span<const double> w_after, int n_probes, uint64_t seed);

struct PmdLedgerEntry {
    int step = 0;
    std::vector<double> residuals;  // per output pixel
    double update_norm_sq = 0.0;
};

struct PmdLedger {
    std::vector<PmdLedgerEntry> entries;
};

struct NoiseConfig {
    double alpha = 0.0;  // multiplier on the local error's standard deviation
    uint64_t seed = 0;
    int target_conv = -1;  // conv ordinal receiving the noise
    bool propagate_upstream = true;
};

// Owns the seeded Gaussian stream for one run's noise injection.
class NoiseStream {
public:
    explicit NoiseStream(uint64_t seed) : rng_(seed) {}

    // E' = E + alpha * sigma_E * g with sigma_E the standard deviation of all
    // entries of E at this step; no-op when alpha or sigma_E is zero.
    Tensor4 inject(const Tensor4& local_error, double alpha);

private:
    Rng rng_;
};

}  // namespace mlns
