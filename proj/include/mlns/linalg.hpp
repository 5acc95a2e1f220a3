#pragma once

#include <span>
#include <vector>

#include "mlns/tensor.hpp"

namespace mlns {

// Dense symmetric matrix; symmetrized on construction.
struct SymMatrix {
    int n = 0;
    std::vector<double> a;  // row-major n x n

    SymMatrix() = default;
    explicit SymMatrix(int order) : n(order), a(static_cast<size_t>(order) * order, 0.0) {}
    SymMatrix(int order, std::vector<double> raw);

    double& at(int i, int j) { return a[static_cast<size_t>(i) * n + j]; }
    double at(int i, int j) const { return a[static_cast<size_t>(i) * n + j]; }

    double trace() const;
    double frobenius_norm() const;
};

struct EigenDecomposition {
    int n = 0;
    std::vector<double> eigenvalues;  // ascending
    std::vector<double> q;            // row-major n x n; column k = eigenvector k

    double lambda_min() const { return eigenvalues.front(); }
    double lambda_max() const { return eigenvalues.back(); }
    double q_at(int i, int k) const { return q[static_cast<size_t>(i) * n + k]; }
};

// Mean-removed autocorrelation over every column of the batch: the mean is
// taken jointly across all B*M columns and the normalization is 1/N
// (population), so BatchNorm-whitened inputs give a unit diagonal in
// expectation.
SymMatrix autocorrelation(std::span<const UnrolledInput> batch);

// Cyclic-by-row Jacobi. Sweeps until the largest off-diagonal entry falls
// below 1e-12 * ||m||_F, at most 50 sweeps; non-convergence is an error that
// reports the residual. Eigenvalues ascending, eigenvector columns permuted
// to match, each column's sign fixed so its largest-magnitude entry is
// positive.
EigenDecomposition sym_eig(const SymMatrix& m);

// Fraction of the matrix's squared Frobenius norm carried by the diagonal
// channel blocks. 1.0 for block-diagonal matrices, 0.0 when the diagonal
// blocks are all zero.
double block_energy_ratio(const SymMatrix& r, std::span<const ChannelBlock> blocks);

}  // namespace mlns
