#include "ergwalk/velocity_exact2.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ergwalk/errors.hpp"
#include "ergwalk/lyapunov.hpp"
#include "ergwalk/parallel.hpp"
#include "ergwalk/rng.hpp"
#include "ergwalk/stats.hpp"

namespace ergwalk {

namespace {

struct Embedded {
    double p1, p2, q1, q2;
};

Embedded embedded(const Environment& env, long x) {
    const EmbeddedProbs e = embedded_jump_probs(env.rates(x));
    return {e.p[0], e.p[1], e.q[0], e.q[1]};
}

void require_l2r2(const Environment& env) {
    if (env.model() != Model::bdp || env.L() != 2 || env.R() != 2) {
        throw ConfigError("the exact velocity engine needs a bdp environment with L = R = 2");
    }
}

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

// ---------------------------------------------------------------------------
// Exit probabilities

std::vector<ExitProbs> exit_probs_finite_all(const Environment& env, long a, long b) {
    require_l2r2(env);
    if (b - a < 2) throw ConfigError("exit_probs_finite needs a + 1 <= b - 1");
    using Sp = Eigen::SparseMatrix<double>;
    const long n = b - a - 1;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(5 * n));
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 4);
    for (long x = a + 1; x <= b - 1; ++x) {
        const long row = x - a - 1;
        trip.emplace_back(row, row, 1.0);
        const Embedded e = embedded(env, x);
        const std::array<std::pair<long, double>, 4> moves{{{1, e.p1}, {2, e.p2}, {-1, e.q1}, {-2, e.q2}}};
        for (auto [d, p] : moves) {
            if (p == 0.0) continue;
            const long y = x + d;
            if (y > a && y < b) {
                trip.emplace_back(row, y - a - 1, -p);
            } else {
                const int col = y == b ? 0 : y == b + 1 ? 1 : y == a ? 2 : 3;
                rhs(row, col) += p;
            }
        }
    }
    Sp A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    Eigen::SparseLU<Sp> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw DegenerateSiteError("exit probability system is singular");
    const Eigen::MatrixXd X = lu.solve(rhs);
    std::vector<ExitProbs> out(static_cast<std::size_t>(n));
    for (long r = 0; r < n; ++r) out[static_cast<std::size_t>(r)] = {X(r, 0), X(r, 1), X(r, 2), X(r, 3)};
    return out;
}

ExitProbs exit_probs_finite(const Environment& env, long a, long b, long start) {
    if (start < a + 1 || start > b - 1) throw ConfigError("exit_probs_finite needs a + 1 <= start <= b - 1");
    return exit_probs_finite_all(env, a, b)[static_cast<std::size_t>(start - a - 1)];
}

std::vector<std::array<double, 2>> exit_probs_transfer(const Environment& env, long a, long b,
                                                       const std::vector<long>& starts) {
    require_l2r2(env);
    if (b - a < 2) throw ConfigError("exit_probs_transfer needs a + 1 <= b - 1");
    for (long s : starts) {
        if (s < a + 1 || s > b - 1) throw ConfigError("exit_probs_transfer: start outside the interior");
    }
    // State at level k: W_k = (d_{k-1}, d_k, d_{k+1}, P_{k+1}, F_1..F_n) with
    // d_m = P_m - P_{m-1}; F_j is a frozen copy of P at the j-th start. Rows of
    // C are linear constraints C W_k = 0, mapped to level k+1 by W_k = T_k W_{k+1}.
    const int ns = static_cast<int>(starts.size());
    const int dim = 4 + ns;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(2, dim);
    C(0, 0) = 1.0;  // d_a = 0
    C(1, 1) = -1.0;  // P_a = P_{a+2} - d_{a+2} - d_{a+1} = 0
    C(1, 2) = -1.0;
    C(1, 3) = 1.0;
    Eigen::Matrix4d T = Eigen::Matrix4d::Zero();
    T(1, 0) = 1.0;
    T(2, 1) = 1.0;
    T(3, 2) = -1.0;
    T(3, 3) = 1.0;
    for (long k = a + 1; k <= b - 1; ++k) {
        for (int j = 0; j < ns; ++j) {
            if (starts[static_cast<std::size_t>(j)] != k) continue;
            // F_j = P_k = P_{k+1} - d_{k+1}
            C.conservativeResize(C.rows() + 1, Eigen::NoChange);
            C.row(C.rows() - 1).setZero();
            C(C.rows() - 1, 2) = 1.0;
            C(C.rows() - 1, 3) = -1.0;
            C(C.rows() - 1, 4 + j) = 1.0;
        }
        const SiteRates& s = env.rates(k);
        const double mu1 = s.mu[0], mu2 = s.mu[1], l1 = s.lambda[0], l2 = s.lambda[1];
        if (!(mu2 > 0.0)) {
            throw SingularNormalizationError("mu^2 = 0 at site " + std::to_string(k) + ": transfer matrix undefined");
        }
        T(0, 0) = -(mu1 + mu2) / mu2;
        T(0, 1) = (l1 + l2) / mu2;
        T(0, 2) = l2 / mu2;
        C.leftCols(4) = (C.leftCols(4) * T).eval();
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(C.transpose());
        C = (qr.householderQ() * Eigen::MatrixXd::Identity(dim, C.rows())).transpose();
    }
    // Level b: W_b = (d_{b-1}, d_b, d_{b+1}, P_{b+1}, F); d_{b+1} and P_{b+1} are known.
    const Eigen::Index m = C.rows();
    Eigen::MatrixXd A(m, 2 + ns);
    A.col(0) = C.col(0);
    A.col(1) = C.col(1);
    A.rightCols(ns) = C.rightCols(ns);
    Eigen::MatrixXd rhs(m, 2);
    rhs.col(0) = -(C.col(2) * -1.0 + C.col(3) * 0.0);  // exit at b: P_b = 1, P_{b+1} = 0
    rhs.col(1) = -(C.col(2) * 1.0 + C.col(3) * 1.0);   // exit at b+1: P_b = 0, P_{b+1} = 1
    const Eigen::MatrixXd X = A.colPivHouseholderQr().solve(rhs);
    std::vector<std::array<double, 2>> out(starts.size());
    for (int j = 0; j < ns; ++j) out[static_cast<std::size_t>(j)] = {X(2 + j, 0), X(2 + j, 1)};
    return out;
}

// ---------------------------------------------------------------------------
// f values

FValues f_truncated(const Environment& env, long i, int depth, ExitMethod method) {
    require_l2r2(env);
    if (depth < 1) throw ConfigError("f_truncated needs depth >= 1");
    const long a = i - depth;
    const long b = i + 1;
    bool transfer = method == ExitMethod::transfer;
    if (method == ExitMethod::automatic) {
        transfer = true;
        for (long k = a + 1; k <= b - 1 && transfer; ++k) transfer = env.rates(k).mu[1] > 0.0;
    }
    FValues f;
    f.i = i;
    f.depth = depth;
    f.method = transfer ? "transfer" : "linear-solve";
    const bool has_lower = i - 1 >= a + 1;
    if (transfer) {
        std::vector<long> starts{i};
        if (has_lower) starts.push_back(i - 1);
        const auto r = exit_probs_transfer(env, a, b, starts);
        f.f1_i = r[0][0];
        f.f2_i = r[0][1];
        if (has_lower) {
            f.f1_im1 = r[1][0];
            f.f2_im1 = r[1][1];
        }
    } else {
        const auto all = exit_probs_finite_all(env, a, b);
        const ExitProbs& top = all.back();
        f.f1_i = top.at_b;
        f.f2_i = top.at_b1;
        if (has_lower) {
            f.f1_im1 = all[all.size() - 2].at_b;
            f.f2_im1 = all[all.size() - 2].at_b1;
        }
    }
    return f;
}

FValues f_values(const Environment& env, long i, double tol, int start_depth, int max_depth, ExitMethod method) {
    if (!(tol > 0.0)) throw ConfigError("f_values needs tol > 0");
    if (start_depth < 1 || max_depth < start_depth) throw ConfigError("f_values needs 1 <= start_depth <= max_depth");
    int depth = start_depth;
    FValues prev = f_truncated(env, i, depth, method);
    while (true) {
        if (2L * depth > max_depth) {
            std::ostringstream msg;
            msg << "f values at site " << i << " did not stabilize up to depth " << depth << " (f_i(i,i+1) = " << prev.f1_i
                << ", f_i(i,i+2) = " << prev.f2_i << ")";
            throw TruncationError(msg.str());
        }
        depth *= 2;
        FValues cur = f_truncated(env, i, depth, method);
        const double change = std::max({std::abs(cur.f1_i - prev.f1_i), std::abs(cur.f2_i - prev.f2_i),
                                        std::abs(cur.f1_im1 - prev.f1_im1), std::abs(cur.f2_im1 - prev.f2_im1)});
        if (change < tol) {
            cur.residual = change;
            return cur;
        }
        prev = cur;
    }
}

// ---------------------------------------------------------------------------
// Coefficients and Q

Vector9 offset_v1() {
    Vector9 v;
    v << 1, 1, 1, 0, 0, 0, 1, 1, 1;
    return v;
}

Vector9 offset_v2() {
    Vector9 v;
    v << 1, 1, 0, 1, 1, 0, 1, 1, 0;
    return v;
}

BranchingModel::BranchingModel(Environment env, double f_tol, int start_depth, int max_depth)
    : env_(std::move(env)), f_tol_(f_tol), start_depth_(start_depth), max_depth_(max_depth) {
    require_l2r2(env_);
}

const FValues& BranchingModel::f(long i) {
    auto it = f_.find(i);
    if (it != f_.end()) return it->second;
    FValues v = f_values(env_, i, f_tol_, start_depth_, max_depth_);
    max_residual_ = std::max(max_residual_, v.residual);
    return f_.emplace(i, v).first->second;
}

const Coefficients& BranchingModel::coefficients(long i) {
    auto it = coef_.find(i);
    if (it != coef_.end()) return it->second;
    const Embedded prev = embedded(env_, i - 1);
    const Embedded here = embedded(env_, i);
    const Embedded next = embedded(env_, i + 1);
    const FValues& fv = f(i - 2);
    const double f_near = fv.f1_i;   // f_{i-2}(i-2, i-1)
    const double f_far = fv.f1_im1;  // f_{i-3}(i-2, i-1)
    Coefficients c;
    c.denominator = 1.0 - prev.q1 * f_near - prev.q2 * f_far;
    if (!(c.denominator > 0.0)) {
        std::ostringstream msg;
        msg << "coefficient denominator " << c.denominator << " <= 0 at site " << i;
        throw InfeasibleCoefficientError(msg.str());
    }
    const double den = c.denominator;
    c.alpha[0] = here.q1 * prev.p1 / den;
    c.alpha[2] = here.q1 * prev.p2 / den;
    c.beta[0] = here.q2 * f_near * prev.p1 / den;
    c.beta[2] = here.q2 * f_near * prev.p2 / den;
    c.gamma[0] = next.q2 * prev.p1 / den;
    c.gamma[2] = next.q2 * prev.p2 / den;
    c.alpha[1] = here.q1 - c.alpha[0] - c.alpha[2];
    c.beta[1] = here.q2 - c.beta[0] - c.beta[2];
    c.gamma[1] = next.q2 - c.gamma[0] - c.gamma[2];
    return coef_.emplace(i, c).first->second;
}

const CoefficientBundle& BranchingModel::bundle(long i) {
    auto it = bundle_.find(i);
    if (it != bundle_.end()) return it->second;
    CoefficientBundle B;
    B.i = i;
    B.c = coefficients(i);
    const double beta_next2 = coefficients(i + 1).beta[1];
    const auto& al = B.c.alpha;
    const auto& be = B.c.beta;
    const auto& ga = B.c.gamma;
    const double den = 1.0 - al[0] - al[1] - be[0] - be[1];
    if (!(den > 0.0)) {
        std::ostringstream msg;
        msg << "1 - alpha_1 - alpha_2 - beta_1 - beta_2 = " << den << " <= 0 at site " << i;
        throw InfeasibleCoefficientError(msg.str());
    }
    B.x = al[0] / den;
    B.y = al[1] / den;
    B.z = be[0] / den;
    B.w = be[1] / den;
    B.v = 1.0 - safe_ratio(ga[2], beta_next2);
    B.s = safe_ratio(al[2], al[2] + be[2]);
    B.t = safe_ratio(ga[0], ga[0] + ga[1]);

    const double x = B.x, y = B.y, z = B.z, w = B.w, s = B.s, t = B.t, v = B.v;
    Matrix9& Q = B.Q;
    Q.setZero();
    for (int r : {0, 2, 6, 8}) Q.row(r) << x, y, 0, z, w, 0, 0, 0, 0;
    for (int r : {1, 7}) Q.row(r) << x, y, s, z, w, 1 - s, 0, 0, 0;
    for (int r : {3, 5}) Q.row(r) << x, y, 0, z, w, 0, t, 1 - t, 0;
    Q.row(4) << x * v, y * v, s * v, z * v, w * v, (1 - s) * v, t * v, (1 - t) * v, 1 - v;

    const double asum = al[0] + al[1] + al[2];
    B.u1.setZero();
    for (int k = 0; k < 3; ++k) B.u1(k) = safe_ratio(al[static_cast<std::size_t>(k)], asum);
    B.u_star.setZero();
    B.u_star(0) = safe_ratio(al[0], al[0] + al[1]);
    B.u_star(1) = safe_ratio(al[1], al[0] + al[1]);
    B.u_star(2) = 1.0;
    return bundle_.emplace(i, B).first->second;
}

CoefficientBundle coefficient_bundle(const Environment& env, long i, double tol) {
    BranchingModel model(env, tol);
    return model.bundle(i);
}

// ---------------------------------------------------------------------------
// Series

namespace {

double growth_estimate(const std::vector<double>& log_norms) {
    const std::size_t n = log_norms.size();
    if (n < 4) return 0.0;
    const std::size_t h = n / 2;
    const double d = log_norms[n - 1] - log_norms[h - 1];
    return std::isfinite(d) ? std::exp(d / static_cast<double>(n - h)) : 0.0;
}

[[noreturn]] void throw_divergence(const char* what, long k_max, double last, double growth) {
    std::ostringstream msg;
    msg << what << " did not decay within " << k_max << " terms (last term " << last << ", growth " << growth << ")";
    throw DivergenceError(msg.str());
}

}  // namespace

SeriesResult d_omega(BranchingModel& model, double tol, long k_max) {
    if (!(tol > 0.0) || k_max < 1) throw ConfigError("d_omega needs tol > 0 and k_max >= 1");
    const Vector9 v1 = offset_v1(), v2 = offset_v2();
    RowVector9 r = model.bundle(1).u_star;  // u* Q_0 ... Q_{k+1}
    CompensatedSum total;
    SeriesResult res;
    std::vector<double> log_norms;
    for (long k = 0; k > -k_max; --k) {
        const double q = model.env().rates(k).total_rate();
        const RowVector9 rq = r * model.Q(k);
        const double term = (r.dot(v1) + rq.dot(v2)) / q;
        total.add(term);
        r = rq;
        res.terms = 1 - k;
        res.last_term = term;
        log_norms.push_back(std::log(r.lpNorm<1>()));
        const double tot = total.value();
        if (term <= tol * tot && r.lpNorm<1>() / q <= tol * tot) {
            res.value = tot;
            res.growth = growth_estimate(log_norms);
            return res;
        }
    }
    throw_divergence("D series", k_max, res.last_term, growth_estimate(log_norms));
}

SeriesResult pi_omega(BranchingModel& model, double tol, long k_max) {
    if (!(tol > 0.0) || k_max < 1) throw ConfigError("pi_omega needs tol > 0 and k_max >= 1");
    const double q0 = model.env().rates(0).total_rate();
    Vector9 c1 = offset_v1();                // Q_k ... Q_1 v1
    Vector9 c2 = model.Q(0) * offset_v2();   // Q_k ... Q_0 v2
    CompensatedSum total;
    SeriesResult res;
    std::vector<double> log_norms;
    for (long k = 0; k < k_max; ++k) {
        const double term = model.bundle(k + 1).u_star.dot(c1 + c2) / q0;
        total.add(term);
        res.terms = k + 1;
        res.last_term = term;
        const Matrix9& Qn = model.Q(k + 1);
        c1 = Qn * c1;
        c2 = Qn * c2;
        const double bound = 2.0 * (c1 + c2).lpNorm<Eigen::Infinity>() / q0;
        log_norms.push_back(std::log((c1 + c2).lpNorm<Eigen::Infinity>()));
        const double tot = total.value();
        if (term <= tol * tot && bound <= tol * tot) {
            res.value = tot;
            res.growth = growth_estimate(log_norms);
            return res;
        }
    }
    throw_divergence("pi series", k_max, res.last_term, growth_estimate(log_norms));
}

double expected_occupation(BranchingModel& model, long k) {
    if (k > 0) throw ConfigError("expected_occupation needs k <= 0");
    RowVector9 r = model.bundle(1).u_star;
    for (long j = 0; j > k; --j) r = r * model.Q(j);
    return r.dot(offset_v1()) + (r * model.Q(k)).dot(offset_v2());
}

SeriesResult d_omega(const Environment& env, double tol, long k_max) {
    BranchingModel model(env, std::min(tol, 1e-12));
    return d_omega(model, tol, k_max);
}

SeriesResult pi_omega(const Environment& env, double tol, long k_max) {
    BranchingModel model(env, std::min(tol, 1e-12));
    return pi_omega(model, tol, k_max);
}

double expected_occupation(const Environment& env, long k, double tol) {
    BranchingModel model(env, tol);
    return expected_occupation(model, k);
}

// ---------------------------------------------------------------------------
// Velocity

Theorem51Report velocity_theorem51(const EnvSpec& spec, int env_samples, double tol, long k_max, std::uint64_t seed,
                                   unsigned jobs) {
    if (spec.model != Model::bdp || spec.L != 2 || spec.R != 2) {
        throw ConfigError("theorem51 velocity needs a bdp spec with L = R = 2");
    }
    if (env_samples < 1) throw ConfigError("env_samples must be >= 1");
    std::vector<Environment> envs;
    const Environment base(spec, spec.seed);
    if (spec.mode == Mode::periodic) {
        for (long p = 0; p < static_cast<long>(spec.atom_count()); ++p) envs.push_back(base.shifted(p));
    } else if (spec.is_random()) {
        for (int i = 0; i < env_samples; ++i) {
            envs.emplace_back(spec, derive_seed(seed, stream::env_draw, static_cast<std::uint64_t>(i)));
        }
    } else {
        envs.push_back(base);
    }

    Theorem51Report rep;
    VelocityReport& v = rep.velocity;
    v.method = "theorem51";
    v.seed = seed;
    v.replicas = static_cast<int>(envs.size());
    v.horizon = static_cast<double>(k_max);

    // The series only converge for right-transient environments; elsewhere the
    // truncations creep towards max depth at every site.
    const Classification regime = classify(lyapunov_spectrum(envs.front(), 50000, 1000, seed), spec.R);
    if (regime.verdict != "transient-right") {
        std::ostringstream msg;
        msg << "divergence: environment classified " << regime.verdict << " (gamma_R CI [" << regime.lo << ", "
            << regime.hi << "]); series need a right-transient environment; velocity zero or undefined";
        rep.diverged = true;
        v.truncations = v.replicas;
        v.verdict = msg.str();
        return rep;
    }

    struct Draw {
        double D = 0.0, pi = 0.0, drift = 0.0;
        long terms = 0;
        double f_residual = 0.0, last_term = 0.0;
        std::string failure;
    };
    auto draws = parallel_map(envs.size(), jobs, [&](std::size_t i) {
        Draw d;
        try {
            BranchingModel model(envs[i], std::min(tol, 1e-12));
            const SeriesResult D = d_omega(model, tol, k_max);
            const SeriesResult P = pi_omega(model, tol, k_max);
            d.D = D.value;
            d.pi = P.value;
            d.drift = envs[i].rates(0).drift();
            d.terms = std::max(D.terms, P.terms);
            d.f_residual = model.max_f_residual();
            d.last_term = std::max(std::abs(D.last_term), std::abs(P.last_term));
        } catch (const TruncationError& e) {
            d.failure = e.what();
        } catch (const DivergenceError& e) {
            d.failure = e.what();
        } catch (const InfeasibleCoefficientError& e) {
            d.failure = e.what();
        }
        return d;
    });

    std::vector<double> pis, drifts;
    std::string first_failure;
    for (const auto& d : draws) {
        if (!d.failure.empty()) {
            ++v.truncations;
            if (first_failure.empty()) first_failure = d.failure;
            continue;
        }
        rep.D_samples.push_back(d.D);
        rep.numerator_samples.push_back(d.pi * d.drift);
        pis.push_back(d.pi);
        drifts.push_back(d.drift);
        rep.k_used = std::max(rep.k_used, d.terms);
        rep.f_residual = std::max(rep.f_residual, d.f_residual);
        rep.last_term = std::max(rep.last_term, d.last_term);
    }
    if (v.truncations > 0) {
        rep.diverged = true;
        v.velocity = 0.0;
        v.se = 0.0;
        v.verdict = "divergence: series did not converge in " + std::to_string(v.truncations) + " of " +
                    std::to_string(v.replicas) + " environments (" + first_failure +
                    "); velocity zero or undefined";
        return rep;
    }
    rep.D_mean = mean_se(rep.D_samples).mean;
    rep.pi_mean = mean_se(pis).mean;
    rep.drift_mean = mean_se(drifts).mean;
    const MeanSe ratio = ratio_of_means(rep.numerator_samples, rep.D_samples);
    v.velocity = ratio.mean;
    v.se = spec.is_random() ? ratio.se : 0.0;
    v.samples = rep.numerator_samples;
    v.verdict = "converged";
    return rep;
}

}  // namespace ergwalk
