#include "ergwalk/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ergwalk/errors.hpp"
#include "ergwalk/rng.hpp"
#include "ergwalk/stats.hpp"

namespace ergwalk {

CompanionMatrix build_A(const SiteRates& site, long index) {
    const int L = site.L(), R = site.R();
    const int n = L + R - 1;
    const double muL = site.mu[L - 1];
    if (!(muL > 0.0)) {
        throw SingularNormalizationError("mu^L = 0 at site " + std::to_string(index) + ": companion matrix undefined");
    }
    CompanionMatrix out;
    out.site = index;
    out.A = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r + 1 < n; ++r) out.A(r, r + 1) = 1.0;
    for (int k = 1; k <= n; ++k) {
        double b = 0.0;
        if (k <= R) {
            for (int j = R - k + 1; j <= R; ++j) b += site.lambda[j - 1];
        } else {
            for (int j = k - R; j <= L; ++j) b -= site.mu[j - 1];
        }
        out.A(n - 1, k - 1) = b / muL;
    }
    return out;
}

LyapunovSpectrum lyapunov_spectrum(const MatrixSequence& A, int dim, long n_products, long burn_in,
                                   std::uint64_t seed, int batches) {
    if (dim < 1) throw ConfigError("lyapunov_spectrum: dimension must be >= 1");
    if (burn_in < 0 || n_products < burn_in + 100) throw ConfigError("lyapunov_spectrum needs n_products >= burn_in + 100");
    if (batches < 2) throw ConfigError("lyapunov_spectrum needs at least 2 batches");
    const long kept = n_products - burn_in;
    if (kept < batches) throw ConfigError("lyapunov_spectrum: fewer kept products than batches");

    Rng rng(seed);
    Eigen::MatrixXd Q(dim, dim);
    for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) Q(i, j) = rng.uniform() - 0.5;
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr;
    qr.compute(Q);
    Q = qr.householderQ();

    // sums[b][c]: log growth of column c accumulated in batch b.
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(batches), std::vector<double>(dim, 0.0));
    std::vector<long> lens(static_cast<std::size_t>(batches), 0);
    for (long k = 1; k <= n_products; ++k) {
        const Eigen::MatrixXd M = A(k) * Q;
        qr.compute(M);
        const Eigen::MatrixXd Rm = qr.matrixQR().triangularView<Eigen::Upper>();
        Q = qr.householderQ();
        for (int c = 0; c < dim; ++c) {
            const double d = Rm(c, c);
            if (d < 0.0) Q.col(c) = -Q.col(c);
        }
        if (k <= burn_in) continue;
        const long pos = k - burn_in - 1;
        const auto b = static_cast<std::size_t>(std::min<long>(pos * batches / kept, batches - 1));
        ++lens[b];
        for (int c = 0; c < dim; ++c) sums[b][c] += std::log(std::abs(Rm(c, c)));
    }

    std::vector<double> mean(dim), se(dim);
    for (int c = 0; c < dim; ++c) {
        std::vector<double> per_batch;
        for (std::size_t b = 0; b < sums.size(); ++b) per_batch.push_back(sums[b][c] / static_cast<double>(lens[b]));
        const MeanSe ms = mean_se(per_batch);
        mean[c] = ms.mean;
        se[c] = ms.se;
    }
    std::vector<int> order(dim);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean[a] < mean[b]; });

    LyapunovSpectrum out;
    out.n = n_products;
    out.burn_in = burn_in;
    out.batches = batches;
    for (int c : order) {
        out.gammas.push_back(mean[c]);
        out.ses.push_back(se[c]);
    }
    return out;
}

LyapunovSpectrum lyapunov_spectrum(const Environment& env, long n_products, long burn_in, std::uint64_t seed,
                                   int batches) {
    if (env.model() != Model::bdp) throw ConfigError("lyapunov_spectrum needs a bdp environment");
    const int dim = env.L() + env.R() - 1;
    return lyapunov_spectrum([&env](long i) { return build_A(env.rates(i), i).A; }, dim, n_products, burn_in, seed,
                             batches);
}

Classification classify(const LyapunovSpectrum& spectrum, int R, double floor) {
    if (R < 1 || static_cast<std::size_t>(R) > spectrum.gammas.size()) {
        throw ConfigError("classify: spectrum has fewer than R entries");
    }
    Classification c;
    c.gamma_R = spectrum.gammas[static_cast<std::size_t>(R - 1)];
    c.se = spectrum.ses[static_cast<std::size_t>(R - 1)];
    c.lo = c.gamma_R - kCiZ99 * c.se;
    c.hi = c.gamma_R + kCiZ99 * c.se;
    if (c.lo > floor) {
        c.verdict = "transient-right";
    } else if (c.hi < -floor) {
        c.verdict = "transient-left";
    } else if (c.lo >= -floor && c.hi <= floor) {
        c.verdict = "recurrent";
    } else {
        c.verdict = "boundary-undetermined";
    }
    return c;
}

}  // namespace ergwalk
