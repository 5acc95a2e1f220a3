#pragma once

#include <span>
#include <string>
#include <vector>

#include "mlns/linalg.hpp"
#include "mlns/tensor.hpp"

namespace mlns {

enum class ModeClass { zero, converging, oscillatory, divergent };

std::string to_string(ModeClass c);

struct ModeInfo {
    double lambda = 0.0;
    double tau = 0.0;  // finite for converging modes, inf for zero modes, NaN otherwise
    ModeClass cls = ModeClass::zero;
};

// Everything the natural-mode analysis produces for one layer's input.
struct ModalReport {
    int layer = -1;  // conv ordinal; -1 for standalone analyses
    int step = 0;    // training step at which the snapshot was taken
    double mu = 0.0;
    std::vector<double> eigenvalues;  // ascending, unclamped
    double lambda_min = 0.0, lambda_max = 0.0;
    double mu_max = 0.0;   // 2 / lambda_max
    double tau_max = 0.0;  // time constant of the slowest mode
    std::vector<ModeInfo> modes;
    double block_energy = 0.0;  // diagonal-block share of ||R||_F^2
    std::vector<double> channel_variances;
};

// Eigen-analysis of the autocorrelation of an unrolled input batch:
// stability bound mu_max = 2/lambda_max, per-mode time constants
// tau_k = -1/ln(1 - mu*lambda_k), channel power table and block energy.
// Eigenvalues below 1e-12*lambda_max count as zero modes (tau = inf).
ModalReport analyze_layer(std::span<const UnrolledInput> batch, double mu);

// Solves R w = p for SPD R (Wiener-Hopf optimum). Rejects singular systems,
// reporting the smallest eigenvalue; verifies the residual afterwards.
std::vector<double> wiener_solve(const SymMatrix& r, std::span<const double> p);

struct ModeTrajectory {
    int mode = 0;
    std::vector<double> predicted;  // (1 - mu*lambda_k)^n * v_k(0)
    std::vector<double> measured;   // (Q^T (W(n) - W_o))_k
};

// Projects a weight-vector history onto the natural modes and pairs each
// measured series with its closed-form prediction.
std::vector<ModeTrajectory> mode_trajectories(std::span<const std::vector<double>> weight_history,
                                              std::span<const double> w_opt,
                                              const EigenDecomposition& eig, double mu);

struct StabilityOutcome {
    double mu = 0.0;
    bool converged = false;
    int diverged_at = -1;  // first step the error norm exceeded its start
};

// Runs the deterministic weight-error recursion c <- (I - mu R) c for each
// candidate mu and classifies convergence by the final error norm.
std::vector<StabilityOutcome> stability_probe(const SymMatrix& r, std::span<const double> mus,
                                              int steps = 400);

}  // namespace mlns
