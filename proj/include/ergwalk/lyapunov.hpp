#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ergwalk/env_core.hpp"

namespace ergwalk {

struct CompanionMatrix {
    Eigen::MatrixXd A;  // (L+R-1) square
    long site = 0;
};

// Ones on the superdiagonal of rows 1..L+R-2, last row (b(1), ..., b(L+R-1)) with
// b(k) = sum_{j=R-k+1}^{R} lambda^j / mu^L for k <= R and
// b(k) = -sum_{j=k-R}^{L} mu^j / mu^L for k > R.
// Throws SingularNormalizationError when mu^L = 0.
CompanionMatrix build_A(const SiteRates& site, long index = 0);

struct LyapunovSpectrum {
    std::vector<double> gammas;  // ascending
    std::vector<double> ses;     // batch-means standard errors, same order
    long n = 0;                  // products including burn-in
    long burn_in = 0;
    int batches = 0;
};

using MatrixSequence = std::function<Eigen::MatrixXd(long)>;

// Exponents of the product A(n)...A(1) by QR re-orthonormalization each step.
// The random starting frame is drawn from `seed`.
LyapunovSpectrum lyapunov_spectrum(const MatrixSequence& A, int dim, long n_products, long burn_in,
                                   std::uint64_t seed, int batches = 50);

// A(i) = build_A(rates at site i), i = 1..n_products.
LyapunovSpectrum lyapunov_spectrum(const Environment& env, long n_products, long burn_in, std::uint64_t seed,
                                   int batches = 50);

struct Classification {
    std::string verdict;  // transient-right, recurrent, transient-left, boundary-undetermined
    double gamma_R = 0.0;
    double se = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

inline constexpr double kCiZ99 = 2.5758293035489004;
inline constexpr double kZeroFloor = 1e-9;

// Verdict from the 99% CI of gamma_R (R-th smallest exponent). A CI that sits
// inside [-floor, floor] is read as an exact zero; any other CI containing
// zero is boundary-undetermined.
Classification classify(const LyapunovSpectrum& spectrum, int R, double floor = kZeroFloor);

}  // namespace ergwalk
