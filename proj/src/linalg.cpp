#include "mlns/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mlns {

SymMatrix::SymMatrix(int order, std::vector<double> raw) : n(order), a(std::move(raw)) {
    if (a.size() != static_cast<size_t>(n) * n)
        throw std::invalid_argument("SymMatrix: data length does not match order");
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (at(i, j) + at(j, i));
            at(i, j) = avg;
            at(j, i) = avg;
        }
    }
    if (!all_finite(a)) throw std::invalid_argument("SymMatrix: non-finite entries");
}

double SymMatrix::trace() const {
    double t = 0.0;
    for (int i = 0; i < n; ++i) t += at(i, i);
    return t;
}

double SymMatrix::frobenius_norm() const {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

SymMatrix autocorrelation(std::span<const UnrolledInput> batch) {
    if (batch.empty() || batch.front().cols == 0)
        throw std::invalid_argument("autocorrelation: no columns");
    const int k = batch.front().rows;
    size_t total_cols = 0;
    for (const auto& u : batch) {
        if (u.rows != k) throw std::invalid_argument("autocorrelation: inconsistent row counts");
        total_cols += static_cast<size_t>(u.cols);
    }
    const double inv_n = 1.0 / static_cast<double>(total_cols);

    std::vector<double> mean(k, 0.0);
    for (const auto& u : batch) {
        for (int r = 0; r < k; ++r) {
            const double* row = u.row(r);
            double s = 0.0;
            for (int c = 0; c < u.cols; ++c) s += row[c];
            mean[r] += s;
        }
    }
    for (double& m : mean) m *= inv_n;

    // Accumulate sum of x x^T on centered columns, upper triangle only.
    SymMatrix r(k);
    std::vector<double> col(k);
    for (const auto& u : batch) {
        for (int c = 0; c < u.cols; ++c) {
            for (int i = 0; i < k; ++i) col[i] = u.at(i, c) - mean[i];
            for (int i = 0; i < k; ++i) {
                const double xi = col[i];
                double* row = &r.at(i, 0);
                for (int j = i; j < k; ++j) row[j] += xi * col[j];
            }
        }
    }
    for (int i = 0; i < k; ++i) {
        for (int j = i; j < k; ++j) {
            const double v = r.at(i, j) * inv_n;
            r.at(i, j) = v;
            r.at(j, i) = v;
        }
    }
    return r;
}

EigenDecomposition sym_eig(const SymMatrix& m) {
    const int n = m.n;
    if (n == 0) throw std::invalid_argument("sym_eig: empty matrix");
    if (!all_finite(m.a)) throw std::invalid_argument("sym_eig: non-finite entries");

    std::vector<double> a = m.a;
    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

    auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
    auto V = [&](int i, int j) -> double& { return v[static_cast<size_t>(i) * n + j]; };

    const double tol = 1e-12 * m.frobenius_norm();
    auto max_offdiag = [&]() {
        double mx = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) mx = std::max(mx, std::abs(A(i, j)));
        return mx;
    };

    const int max_sweeps = 50;
    int sweep = 0;
    double off = max_offdiag();
    while (off > tol && sweep < max_sweeps) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) < 1e-300) {
                    A(p, q) = A(q, p) = 0.0;
                    continue;
                }
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                const double tau = s / (1.0 + c);

                const double app = A(p, p), aqq = A(q, q);
                A(p, p) = app - t * apq;
                A(q, q) = aqq + t * apq;
                A(p, q) = A(q, p) = 0.0;
                for (int r = 0; r < n; ++r) {
                    if (r != p && r != q) {
                        const double arp = A(r, p), arq = A(r, q);
                        A(r, p) = A(p, r) = arp - s * (arq + tau * arp);
                        A(r, q) = A(q, r) = arq + s * (arp - tau * arq);
                    }
                    const double vrp = V(r, p), vrq = V(r, q);
                    V(r, p) = vrp - s * (vrq + tau * vrp);
                    V(r, q) = vrq + s * (vrp - tau * vrq);
                }
            }
        }
        ++sweep;
        off = max_offdiag();
    }
    if (off > tol)
        throw std::runtime_error("sym_eig: Jacobi did not converge after " +
                                 std::to_string(max_sweeps) +
                                 " sweeps, off-diagonal residual " + std::to_string(off));

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return A(i, i) < A(j, j); });

    EigenDecomposition d;
    d.n = n;
    d.eigenvalues.resize(n);
    d.q.resize(static_cast<size_t>(n) * n);
    for (int k = 0; k < n; ++k) {
        const int src = order[k];
        d.eigenvalues[k] = A(src, src);
        // sign convention: largest-magnitude component positive
        int imax = 0;
        double vmax = 0.0;
        for (int i = 0; i < n; ++i) {
            if (std::abs(V(i, src)) > vmax) {
                vmax = std::abs(V(i, src));
                imax = i;
            }
        }
        const double sign = V(imax, src) < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < n; ++i) d.q[static_cast<size_t>(i) * n + k] = sign * V(i, src);
    }
    return d;
}

double block_energy_ratio(const SymMatrix& r, std::span<const ChannelBlock> blocks) {
    std::vector<ChannelBlock> sorted(blocks.begin(), blocks.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const ChannelBlock& a, const ChannelBlock& b) { return a.row_begin < b.row_begin; });
    int expect = 0;
    for (const auto& b : sorted) {
        if (b.row_begin != expect || b.row_end <= b.row_begin)
            throw std::invalid_argument("block_energy_ratio: blocks do not partition rows");
        expect = b.row_end;
    }
    if (expect != r.n)
        throw std::invalid_argument("block_energy_ratio: blocks cover " + std::to_string(expect) +
                                    " rows, matrix has " + std::to_string(r.n));

    double diag = 0.0;
    for (const auto& b : sorted) {
        for (int i = b.row_begin; i < b.row_end; ++i)
            for (int j = b.row_begin; j < b.row_end; ++j) diag += r.at(i, j) * r.at(i, j);
    }
    double total = 0.0;
    for (double x : r.a) total += x * x;
    if (total == 0.0) return 1.0;  // zero matrix is trivially block-diagonal
    return diag / total;
}

}  // namespace mlns
