#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mlns/common.hpp"
#include "mlns/data.hpp"
#include "mlns/modal.hpp"

using namespace mlns;

namespace {

SymMatrix random_spd(int n, Rng& rng, double spread = 10.0) {
    // Q diag(lambda) Q^T with a random rotation built from Gaussian columns
    std::vector<double> q(static_cast<size_t>(n) * n);
    for (double& v : q) v = rng.normal();
    // Gram-Schmidt
    for (int j = 0; j < n; ++j) {
        for (int k = 0; k < j; ++k) {
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += q[i * n + j] * q[i * n + k];
            for (int i = 0; i < n; ++i) q[i * n + j] -= dot * q[i * n + k];
        }
        double norm = 0.0;
        for (int i = 0; i < n; ++i) norm += q[i * n + j] * q[i * n + j];
        norm = std::sqrt(norm);
        for (int i = 0; i < n; ++i) q[i * n + j] /= norm;
    }
    std::vector<double> lambda(n);
    for (int i = 0; i < n; ++i) lambda[i] = 1.0 + rng.uniform01() * (spread - 1.0);
    std::vector<double> a(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) a[i * n + j] += q[i * n + k] * lambda[k] * q[j * n + k];
    return SymMatrix(n, std::move(a));
}

// deterministic full-gradient LMS on fixed R: w <- w - mu (R w - R w_o)
std::vector<std::vector<double>> lms_history(const SymMatrix& r, const std::vector<double>& w_opt,
                                             std::vector<double> w, double mu, int steps) {
    const int n = r.n;
    std::vector<std::vector<double>> hist{w};
    for (int t = 0; t < steps; ++t) {
        std::vector<double> grad(n, 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) grad[i] += r.at(i, j) * (w[j] - w_opt[j]);
        for (int i = 0; i < n; ++i) w[i] -= mu * grad[i];
        hist.push_back(w);
    }
    return hist;
}

}  // namespace

TEST_CASE("analyze_layer bound arithmetic") {
    // two uncorrelated unit-power channels scaled to give lambda = {1, 2}
    SyntheticSpec spec;
    spec.channels = 2;
    spec.powers = {1.0, 2.0};
    spec.block_size = 1;
    spec.samples = 200000;
    spec.seed = 7;
    auto u = synth_channels(spec);
    std::vector<UnrolledInput> batch{u};
    auto rep = analyze_layer(batch, 0.1);
    CHECK(rep.lambda_max == doctest::Approx(2.0).epsilon(0.05));
    CHECK(rep.mu_max == doctest::Approx(2.0 / rep.lambda_max).epsilon(1e-12));
    CHECK(rep.mu_max * rep.lambda_max == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("time constant values") {
    // mu*lambda = 1 - 1/e gives tau = 1; mu*lambda = 0.5 gives 1/ln 2
    SymMatrix r1(1, {1.0 - std::exp(-1.0)});
    UnrolledInput u(1, 2);
    u.channel_blocks = {{0, 0, 1}};

    const double p1 = 1.0 - std::exp(-1.0);
    const double tau1 = -1.0 / std::log(1.0 - p1);
    CHECK(tau1 == doctest::Approx(1.0).epsilon(1e-12));
    const double tau2 = -1.0 / std::log(1.0 - 0.5);
    CHECK(tau2 == doctest::Approx(1.0 / std::log(2.0)).epsilon(1e-12));

    // through the report path: diag R with known eigenvalues at mu = 1
    SyntheticSpec spec;
    spec.channels = 1;
    spec.powers = {0.5};
    spec.samples = 400000;
    spec.seed = 3;
    auto syn = synth_channels(spec);
    std::vector<UnrolledInput> batch{syn};
    auto rep = analyze_layer(batch, 1.0);
    CHECK(rep.modes[0].cls == ModeClass::converging);
    CHECK(rep.modes[0].tau == doctest::Approx(1.0 / std::log(2.0)).epsilon(0.02));
}

TEST_CASE("mode classification flags") {
    SyntheticSpec spec;
    spec.channels = 2;
    spec.powers = {1.0, 3.0};
    spec.samples = 100000;
    spec.seed = 11;
    auto u = synth_channels(spec);
    std::vector<UnrolledInput> batch{u};
    auto rep = analyze_layer(batch, 1.2);  // mu*lambda ~ {1.2, 3.6}
    CHECK(rep.modes[0].cls == ModeClass::oscillatory);
    CHECK(std::isnan(rep.modes[0].tau));
    CHECK(rep.modes[1].cls == ModeClass::divergent);
    CHECK(std::isnan(rep.tau_max));
}

TEST_CASE("zero-clamped eigenvalues report infinite tau") {
    // rank-deficient: two identical rows
    UnrolledInput u(2, 50);
    u.channel_blocks = {{0, 0, 2}};
    Rng rng(13);
    for (int m = 0; m < 50; ++m) {
        const double v = rng.normal();
        u.at(0, m) = v;
        u.at(1, m) = v;
    }
    std::vector<UnrolledInput> batch{u};
    auto rep = analyze_layer(batch, 0.1);
    CHECK(rep.modes[0].cls == ModeClass::zero);
    CHECK(std::isinf(rep.modes[0].tau));
    CHECK(std::isinf(rep.tau_max));
}

TEST_CASE("wiener_solve") {
    SUBCASE("identity gives back the cross-correlation") {
        SymMatrix r(3);
        for (int i = 0; i < 3; ++i) r.at(i, i) = 1.0;
        std::vector<double> p{1.0, -2.0, 0.5};
        auto w = wiener_solve(r, p);
        for (int i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(p[i]));
    }
    SUBCASE("diagonal scaling") {
        SymMatrix r(2);
        r.at(0, 0) = 2.0;
        r.at(1, 1) = 4.0;
        std::vector<double> p{2.0, 8.0};
        auto w = wiener_solve(r, p);
        CHECK(w[0] == doctest::Approx(1.0));
        CHECK(w[1] == doctest::Approx(2.0));
    }
    SUBCASE("random SPD checked against the eigen-inverse oracle") {
        Rng rng(17);
        for (int trial = 0; trial < 10; ++trial) {
            auto r = random_spd(8, rng);
            std::vector<double> p(8);
            for (double& v : p) v = rng.normal();
            auto w = wiener_solve(r, p);
            // oracle: w = Q diag(1/lambda) Q^T p
            auto eig = sym_eig(r);
            std::vector<double> expect(8, 0.0);
            for (int k = 0; k < 8; ++k) {
                double proj = 0.0;
                for (int i = 0; i < 8; ++i) proj += eig.q_at(i, k) * p[i];
                proj /= eig.eigenvalues[k];
                for (int i = 0; i < 8; ++i) expect[i] += eig.q_at(i, k) * proj;
            }
            for (int i = 0; i < 8; ++i)
                CHECK(w[i] == doctest::Approx(expect[i]).epsilon(1e-8));
            double res = 0.0, pn = 0.0;
            for (int i = 0; i < 8; ++i) {
                double ri = -p[i];
                for (int j = 0; j < 8; ++j) ri += r.at(i, j) * w[j];
                res += ri * ri;
                pn += p[i] * p[i];
            }
            CHECK(std::sqrt(res) <= 1e-10 * std::sqrt(pn));
        }
    }
    SUBCASE("singular matrix rejected with its smallest eigenvalue") {
        SymMatrix r(2, {1.0, 1.0, 1.0, 1.0});
        std::vector<double> p{1.0, 1.0};
        CHECK_THROWS_WITH_AS(wiener_solve(r, p), doctest::Contains("smallest eigenvalue"),
                             std::runtime_error);
    }
}

TEST_CASE("mode trajectories") {
    SUBCASE("closed-form decay factors") {
        // single mode, factor 0.5, v(0) = 1: prediction at n = 3 is 0.125
        SymMatrix r(1, {1.0});
        auto eig = sym_eig(r);
        std::vector<std::vector<double>> hist{{2.0}, {1.5}, {1.25}, {1.125}};
        std::vector<double> w_opt{1.0};
        auto tr = mode_trajectories(hist, w_opt, eig, 0.5);
        REQUIRE(tr.size() == 1);
        CHECK(tr[0].predicted[0] == doctest::Approx(1.0));
        CHECK(tr[0].measured[0] == doctest::Approx(tr[0].predicted[0]));  // equal at n = 0
        CHECK(tr[0].predicted[3] == doctest::Approx(0.125));
        CHECK(tr[0].measured[3] == doctest::Approx(0.125));
    }
    SUBCASE("noiseless full-gradient recursion matches the prediction exactly") {
        Rng rng(23);
        for (int trial = 0; trial < 5; ++trial) {
            auto r = random_spd(6, rng, 50.0);
            auto eig = sym_eig(r);
            std::vector<double> w_opt(6), w0(6);
            for (double& v : w_opt) v = rng.normal();
            for (double& v : w0) v = rng.normal();
            const double mu = 0.5 / eig.lambda_max();
            auto hist = lms_history(r, w_opt, w0, mu, 100);
            auto tr = mode_trajectories(hist, w_opt, eig, mu);
            for (const auto& mode : tr)
                for (size_t t = 0; t < mode.predicted.size(); ++t)
                    CHECK(std::abs(mode.predicted[t] - mode.measured[t]) <= 1e-8);
        }
    }
    SUBCASE("modes are decoupled") {
        Rng rng(29);
        auto r = random_spd(4, rng);
        auto eig = sym_eig(r);
        std::vector<double> w_opt(4, 0.0);
        const double mu = 0.3 / eig.lambda_max();

        // start at w0, then perturb only mode 2's initial coordinate
        std::vector<double> w0(4);
        for (double& v : w0) v = rng.normal();
        std::vector<double> w0p = w0;
        for (int i = 0; i < 4; ++i) w0p[i] += 0.37 * eig.q_at(i, 2);

        auto t1 = mode_trajectories(lms_history(r, w_opt, w0, mu, 40), w_opt, eig, mu);
        auto t2 = mode_trajectories(lms_history(r, w_opt, w0p, mu, 40), w_opt, eig, mu);
        for (int k : {0, 1, 3})
            for (size_t t = 0; t < t1[k].measured.size(); ++t)
                CHECK(std::abs(t1[k].measured[t] - t2[k].measured[t]) <= 1e-10);
    }
}

TEST_CASE("tau decreases as lambda grows at fixed mu") {
    const double mu = 0.9;
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {0.1, 0.3, 0.6, 0.9, 1.05}) {
        const double tau = -1.0 / std::log(1.0 - mu * lambda);
        CHECK(tau < prev);
        prev = tau;
    }
}

TEST_CASE("stability probe brackets the theoretical bound") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto r = random_spd(5, rng, 100.0);
        auto eig = sym_eig(r);
        const double mu_max = 2.0 / eig.lambda_max();

        std::vector<double> mus{0.9 * mu_max, 1.1 * mu_max};
        auto outcomes = stability_probe(r, mus);
        CHECK(outcomes[0].converged);
        CHECK_FALSE(outcomes[1].converged);

        // bisection within 1%
        double lo = 0.5 * mu_max, hi = 1.5 * mu_max;
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            std::vector<double> one{mid};
            if (stability_probe(r, one)[0].converged)
                lo = mid;
            else
                hi = mid;
        }
        CHECK(std::abs(0.5 * (lo + hi) - mu_max) <= 0.01 * mu_max);
    }
}

TEST_CASE("deterministic weight-error recursion matches the matrix-power closed form") {
    Rng rng(37);
    auto r = random_spd(5, rng, 100.0);  // condition number <= 100 here
    const double mu = 1.0 / sym_eig(r).lambda_max();
    const int n = r.n;

    std::vector<double> c(n);
    for (double& v : c) v = rng.normal();
    const std::vector<double> c0 = c;

    // closed form via eigenbasis: c(t) = Q (I - mu L)^t Q^T c(0)
    auto eig = sym_eig(r);
    for (int t = 1; t <= 100; ++t) {
        std::vector<double> next(n, 0.0);
        for (int i = 0; i < n; ++i) {
            double s = c[i];
            for (int j = 0; j < n; ++j) s -= mu * r.at(i, j) * c[j];
            next[i] = s;
        }
        c = next;

        std::vector<double> closed(n, 0.0);
        for (int k = 0; k < n; ++k) {
            double proj = 0.0;
            for (int i = 0; i < n; ++i) proj += eig.q_at(i, k) * c0[i];
            proj *= std::pow(1.0 - mu * eig.eigenvalues[k], t);
            for (int i = 0; i < n; ++i) closed[i] += eig.q_at(i, k) * proj;
        }
        for (int i = 0; i < n; ++i) CHECK(std::abs(c[i] - closed[i]) <= 1e-10);
    }
}
