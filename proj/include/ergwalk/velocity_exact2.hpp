#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ergwalk/env_core.hpp"
#include "ergwalk/report.hpp"

namespace ergwalk {

// Exit distribution of the embedded chain from [a+1, b-1]. L = R = 2 only.
struct ExitProbs {
    double at_b = 0.0;
    double at_b1 = 0.0;  // b + 1
    double at_a = 0.0;
    double at_a1 = 0.0;  // a - 1

    double sum() const { return at_b + at_b1 + at_a + at_a1; }
};

// Absorbing-chain linear solve (sparse LU) over the interior states.
ExitProbs exit_probs_finite(const Environment& env, long a, long b, long start);
// The same solve, returning the exit distribution of every interior start a+1..b-1.
std::vector<ExitProbs> exit_probs_finite_all(const Environment& env, long a, long b);

// Exit probabilities at {b, b+1} from each start, propagated through the
// difference recursion V_k = M_k V_{k+1} with
// M_k = [[-(mu1+mu2)/mu2, (lambda1+lambda2)/mu2, lambda2/mu2], [1,0,0], [0,1,0]].
// Boundary constraints are carried upward from a and re-orthonormalized each
// level. Needs mu^2 > 0 at every interior site (SingularNormalizationError).
std::vector<std::array<double, 2>> exit_probs_transfer(const Environment& env, long a, long b,
                                                       const std::vector<long>& starts);

enum class ExitMethod { automatic, transfer, linear_solve };

// f_k(i,i+1) and f_k(i,i+2) for k = i and k = i-1.
struct FValues {
    long i = 0;
    double f1_i = 0.0;    // f_i(i, i+1)
    double f2_i = 0.0;    // f_i(i, i+2)
    double f1_im1 = 0.0;  // f_{i-1}(i, i+1)
    double f2_im1 = 0.0;  // f_{i-1}(i, i+2)
    int depth = 0;        // interior size of the accepted truncation [i - depth, i + 1]
    double residual = 0.0;  // largest change over the last doubling
    std::string method;
};

// Values on the truncated interval [i - depth, i + 1].
FValues f_truncated(const Environment& env, long i, int depth, ExitMethod method = ExitMethod::automatic);

// Doubles depth from start_depth until successive values differ by < tol.
// The transfer route is used when mu^2 > 0 on the window, else the linear
// solve. Throws TruncationError past max_depth.
FValues f_values(const Environment& env, long i, double tol, int start_depth = 32, int max_depth = 1 << 16,
                 ExitMethod method = ExitMethod::automatic);

struct Coefficients {
    std::array<double, 3> alpha{}, beta{}, gamma{};
    double denominator = 0.0;  // 1 - q^1_{i-1} f_{i-2}(i-2,i-1) - q^2_{i-1} f_{i-3}(i-2,i-1)
};

using Matrix9 = Eigen::Matrix<double, 9, 9>;
using Vector9 = Eigen::Matrix<double, 9, 1>;
using RowVector9 = Eigen::Matrix<double, 1, 9>;

struct CoefficientBundle {
    long i = 0;
    Coefficients c;
    double x = 0, y = 0, z = 0, w = 0, v = 0, s = 0, t = 0;
    Matrix9 Q = Matrix9::Zero();
    Vector9 u1 = Vector9::Zero();        // (alpha_{i,1..3} / sum alpha, 0, ..., 0)
    RowVector9 u_star = RowVector9::Zero();  // (a1/(a1+a2), a2/(a1+a2), 1, 0, ..., 0)
};

Vector9 offset_v1();  // (1,1,1,0,0,0,1,1,1)
Vector9 offset_v2();  // (1,1,0,1,1,0,1,1,0)

// Per-environment cache of f values, coefficients and Q matrices.
class BranchingModel {
public:
    explicit BranchingModel(Environment env, double f_tol = 1e-13, int start_depth = 32, int max_depth = 1 << 16);

    const Environment& env() const { return env_; }
    const FValues& f(long i);
    const Coefficients& coefficients(long i);
    const CoefficientBundle& bundle(long i);
    const Matrix9& Q(long i) { return bundle(i).Q; }
    double max_f_residual() const { return max_residual_; }

private:
    Environment env_;
    double f_tol_;
    int start_depth_;
    int max_depth_;
    double max_residual_ = 0.0;
    std::map<long, FValues> f_;
    std::map<long, Coefficients> coef_;
    std::map<long, CoefficientBundle> bundle_;
};

// Coefficient bundle at site i (throws InfeasibleCoefficientError when the
// shared denominator is not positive).
CoefficientBundle coefficient_bundle(const Environment& env, long i, double tol);

struct SeriesResult {
    double value = 0.0;
    long terms = 0;
    double last_term = 0.0;
    double growth = 0.0;  // per-site growth rate of the running product (spectral-radius estimate)
};

// D = sum_{k<=0} (1/q_k) u* (Q_0...Q_{k+1} v1 + Q_0...Q_k v2), u* from site 1.
SeriesResult d_omega(BranchingModel& model, double tol, long k_max = 10000);
// pi = sum_{k>=0} (1/q_0) u*(k+1) (Q_k...Q_1 v1 + Q_k...Q_0 v2).
SeriesResult pi_omega(BranchingModel& model, double tol, long k_max = 10000);
// u* (Q_0...Q_{k+1} v1 + Q_0...Q_k v2) for k <= 0.
double expected_occupation(BranchingModel& model, long k);

SeriesResult d_omega(const Environment& env, double tol, long k_max = 10000);
SeriesResult pi_omega(const Environment& env, double tol, long k_max = 10000);
double expected_occupation(const Environment& env, long k, double tol);

struct Theorem51Report {
    VelocityReport velocity;
    double D_mean = 0.0;
    double pi_mean = 0.0;
    double drift_mean = 0.0;
    long k_used = 0;             // largest number of series terms used by any draw
    double f_residual = 0.0;     // largest f truncation residual
    double last_term = 0.0;      // largest final series term
    bool diverged = false;
    std::vector<double> D_samples, numerator_samples;
};

// v = E[pi (2 lambda_0^2 + lambda_0^1 - mu_0^1 - 2 mu_0^2)] / E[D].
// Environments not classified transient-right by their Lyapunov spectrum are
// reported as diverged without evaluating the series.
Theorem51Report velocity_theorem51(const EnvSpec& spec, int env_samples, double tol, long k_max, std::uint64_t seed,
                                   unsigned jobs = 1);

}  // namespace ergwalk
