#include "mlns/modal.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlns {

std::string to_string(ModeClass c) {
    switch (c) {
        case ModeClass::zero: return "zero";
        case ModeClass::converging: return "converging";
        case ModeClass::oscillatory: return "oscillatory";
        case ModeClass::divergent: return "divergent";
    }
    return "?";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

ModeInfo classify_mode(double lambda, double mu, double zero_clamp) {
    ModeInfo m;
    m.lambda = lambda;
    if (lambda <= zero_clamp) {
        m.cls = ModeClass::zero;
        m.tau = kInf;
        return m;
    }
    const double p = mu * lambda;
    if (p > 0.0 && p < 1.0) {
        m.cls = ModeClass::converging;
        m.tau = -1.0 / std::log1p(-p);
    } else if (p >= 1.0 && p < 2.0) {
        m.cls = ModeClass::oscillatory;
        m.tau = kNan;
    } else {
        m.cls = ModeClass::divergent;
        m.tau = kNan;
    }
    return m;
}

}  // namespace

ModalReport analyze_layer(std::span<const UnrolledInput> batch, double mu) {
    ModalReport rep;
    rep.mu = mu;

    const SymMatrix r = autocorrelation(batch);
    const EigenDecomposition eig = sym_eig(r);
    rep.eigenvalues = eig.eigenvalues;
    rep.lambda_min = eig.lambda_min();
    rep.lambda_max = eig.lambda_max();
    rep.mu_max = rep.lambda_max > 0.0 ? 2.0 / rep.lambda_max : kInf;

    const double zero_clamp = 1e-12 * std::max(rep.lambda_max, 0.0);
    for (double lambda : rep.eigenvalues) rep.modes.push_back(classify_mode(lambda, mu, zero_clamp));
    rep.tau_max = rep.modes.front().tau;  // slowest mode = smallest eigenvalue

    rep.block_energy = block_energy_ratio(r, batch.front().channel_blocks);
    rep.channel_variances = channel_moments(batch).variance;
    return rep;
}

std::vector<double> wiener_solve(const SymMatrix& r, std::span<const double> p) {
    const int n = r.n;
    if (static_cast<int>(p.size()) != n)
        throw std::invalid_argument("wiener_solve: vector length does not match matrix order");

    // Cholesky factorization; a failed pivot means R is not positive definite.
    std::vector<double> l(static_cast<size_t>(n) * n, 0.0);
    auto L = [&](int i, int j) -> double& { return l[static_cast<size_t>(i) * n + j]; };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = r.at(i, j);
            for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) {
                    const auto eig = sym_eig(r);
                    throw std::runtime_error(
                        "wiener_solve: matrix is singular or indefinite (smallest eigenvalue " +
                        std::to_string(eig.lambda_min()) + ")");
                }
                L(i, j) = std::sqrt(s);
            } else {
                L(i, j) = s / L(j, j);
            }
        }
    }

    std::vector<double> y(n), w(n);
    for (int i = 0; i < n; ++i) {
        double s = p[i];
        for (int k = 0; k < i; ++k) s -= L(i, k) * y[k];
        y[i] = s / L(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        double s = y[i];
        for (int k = i + 1; k < n; ++k) s -= L(k, i) * w[k];
        w[i] = s / L(i, i);
    }

    double res_sq = 0.0, p_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double ri = -p[i];
        for (int j = 0; j < n; ++j) ri += r.at(i, j) * w[j];
        res_sq += ri * ri;
        p_sq += p[i] * p[i];
    }
    if (std::sqrt(res_sq) > 1e-10 * std::sqrt(p_sq) + 1e-300)
        throw std::runtime_error("wiener_solve: residual " + std::to_string(std::sqrt(res_sq)) +
                                 " exceeds tolerance (ill-conditioned system)");
    return w;
}

std::vector<ModeTrajectory> mode_trajectories(std::span<const std::vector<double>> weight_history,
                                              std::span<const double> w_opt,
                                              const EigenDecomposition& eig, double mu) {
    const int n = eig.n;
    if (weight_history.empty()) throw std::invalid_argument("mode_trajectories: empty history");
    for (const auto& w : weight_history)
        if (static_cast<int>(w.size()) != n)
            throw std::invalid_argument("mode_trajectories: weight length does not match modes");
    if (static_cast<int>(w_opt.size()) != n)
        throw std::invalid_argument("mode_trajectories: optimum length does not match modes");

    const size_t steps = weight_history.size();
    std::vector<ModeTrajectory> out(n);
    for (int k = 0; k < n; ++k) {
        out[k].mode = k;
        out[k].predicted.resize(steps);
        out[k].measured.resize(steps);
    }
    std::vector<double> c(n);
    for (size_t t = 0; t < steps; ++t) {
        for (int i = 0; i < n; ++i) c[i] = weight_history[t][i] - w_opt[i];
        for (int k = 0; k < n; ++k) {
            double v = 0.0;
            for (int i = 0; i < n; ++i) v += eig.q_at(i, k) * c[i];
            out[k].measured[t] = v;
        }
    }
    for (int k = 0; k < n; ++k) {
        const double factor = 1.0 - mu * eig.eigenvalues[k];
        double pred = out[k].measured[0];
        for (size_t t = 0; t < steps; ++t) {
            out[k].predicted[t] = pred;
            pred *= factor;
        }
    }
    return out;
}

std::vector<StabilityOutcome> stability_probe(const SymMatrix& r, std::span<const double> mus,
                                              int steps) {
    const int n = r.n;
    std::vector<StabilityOutcome> out;
    for (double mu : mus) {
        StabilityOutcome oc;
        oc.mu = mu;
        std::vector<double> c(n, 1.0), next(n);
        double norm0 = std::sqrt(static_cast<double>(n));
        for (int t = 1; t <= steps; ++t) {
            for (int i = 0; i < n; ++i) {
                double s = c[i];
                for (int j = 0; j < n; ++j) s -= mu * r.at(i, j) * c[j];
                next[i] = s;
            }
            c.swap(next);
            double norm = 0.0;
            for (double x : c) norm += x * x;
            norm = std::sqrt(norm);
            if (!std::isfinite(norm) || norm > 1e12 * norm0) {
                oc.diverged_at = t;
                break;
            }
        }
        if (oc.diverged_at < 0) {
            double norm = 0.0;
            for (double x : c) norm += x * x;
            oc.converged = std::sqrt(norm) < norm0;
            if (!oc.converged) oc.diverged_at = steps;
        }
        out.push_back(oc);
    }
    return out;
}

}  // namespace mlns
