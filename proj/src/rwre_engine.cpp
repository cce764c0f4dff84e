#include "ergwalk/rwre_engine.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <sstream>

#include "ergwalk/errors.hpp"
#include "ergwalk/parallel.hpp"
#include "ergwalk/rng.hpp"
#include "ergwalk/stats.hpp"

namespace ergwalk {

WalkTrajectory run_walk(const Environment& env, long n_steps, std::uint64_t seed) {
    if (n_steps < 0) throw ConfigError("run_walk: n_steps must be >= 0");
    if (env.model() != Model::rwre) throw ConfigError("run_walk needs an rwre environment");
    WalkTrajectory traj{{}, env, seed};
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    Rng rng(seed);
    long x = 0;
    traj.states.push_back(x);
    for (long n = 0; n < n_steps; ++n) {
        x += env.law(x).sample(rng.uniform());
        traj.states.push_back(x);
    }
    return traj;
}

HittingRecord hitting_time_T(const Environment& env, std::uint64_t seed, long step_cap) {
    if (step_cap < 1) throw ConfigError("hitting_time_T: step_cap must be >= 1");
    HittingRecord rec;
    Rng rng(seed);
    long x = 0;
    for (long n = 0; n < step_cap; ++n) {
        const auto m = static_cast<std::size_t>(-x);
        if (m >= rec.U.size()) rec.U.resize(m + 1, 0);
        ++rec.U[m];
        x += env.law(x).sample(rng.uniform());
        if (x > 0) {
            rec.T = n + 1;
            rec.overshoot = x;
            return rec;
        }
    }
    rec.T = step_cap;
    rec.truncated = true;
    return rec;
}

double local_drift(const Environment& env, long x) { return env.law(x).drift(); }

std::vector<double> martingale_residual(const WalkTrajectory& traj) {
    std::vector<double> M;
    M.reserve(traj.states.size());
    CompensatedSum drift;
    const long s0 = traj.states.front();
    for (std::size_t n = 0; n < traj.states.size(); ++n) {
        M.push_back(static_cast<double>(traj.states[n] - s0) - drift.value());
        drift.add(local_drift(traj.env, traj.states[n]));
    }
    return M;
}

VelocityReport estimate_velocity_rwre(const EnvSpec& spec, long n_steps, int replicas, std::uint64_t seed,
                                      unsigned jobs, bool annealed) {
    if (replicas < 1) throw ConfigError("replicas must be >= 1");
    if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
    if (spec.model != Model::rwre) throw ConfigError("estimate_velocity_rwre needs an rwre spec");
    const bool fresh = annealed && spec.is_random();
    const Environment shared(spec, spec.seed);
    constexpr int kBatches = 20;

    struct Out {
        double v = 0.0;
        std::vector<double> batch;
    };
    auto results = parallel_map(static_cast<std::size_t>(replicas), jobs, [&](std::size_t i) {
        const Environment env = fresh ? Environment(spec, derive_seed(seed, stream::environment, i)) : shared;
        Rng rng(derive_seed(seed, stream::walk, i));
        Out out;
        long x = 0, last = 0;
        long next_cut = n_steps / kBatches;
        int cut = 1;
        for (long n = 1; n <= n_steps; ++n) {
            x += env.law(x).sample(rng.uniform());
            if (replicas == 1 && n == next_cut && n_steps >= kBatches) {
                out.batch.push_back(static_cast<double>(x - last) / static_cast<double>(n_steps / kBatches));
                last = x;
                ++cut;
                next_cut = cut <= kBatches ? cut * (n_steps / kBatches) : -1;
            }
        }
        out.v = static_cast<double>(x) / static_cast<double>(n_steps);
        return out;
    });

    VelocityReport rep;
    rep.method = "mc-rwre";
    rep.replicas = replicas;
    rep.horizon = static_cast<double>(n_steps);
    rep.seed = seed;
    for (const auto& r : results) rep.samples.push_back(r.v);
    if (replicas >= 2) {
        const MeanSe ms = mean_se(rep.samples);
        rep.velocity = ms.mean;
        rep.se = ms.se;
    } else {
        rep.velocity = rep.samples[0];
        rep.se = results[0].batch.size() >= 2 ? batch_means(results[0].batch, results[0].batch.size()).se : 0.0;
    }
    rep.verdict = fresh ? "annealed" : "quenched";
    return rep;
}

namespace {

struct BlockSolve {
    std::vector<double> pi;  // pi_0 .. pi_-K
    double sum = 0.0;
    double residual = 0.0;
};

int clamp_target(long t, int K) { return static_cast<int>(t < -K ? K : -t); }

BlockSolve solve_block(const Environment& env, int K) {
    using Sp = Eigen::SparseMatrix<double>;
    std::vector<Eigen::Triplet<double>> trip;
    const int n = K + 1;
    for (int m = 0; m < n; ++m) {
        trip.emplace_back(m, m, 1.0);
        const RwreSiteLaw& law = env.law(-m);
        if (law.max_offset() > 1) {
            throw ConfigError("phi_pi_solve needs jumps of at most +1 (site " + std::to_string(-m) + ")");
        }
        for (std::size_t k = 0; k < law.offsets.size(); ++k) {
            const long t = -m + law.offsets[k];
            if (t > 0 || law.probs[k] == 0.0) continue;
            trip.emplace_back(clamp_target(t, K), m, -law.probs[k]);
        }
    }
    Sp A(n, n);
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    Eigen::SparseLU<Sp> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw TruncationError("phi_pi_solve: singular truncated system");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(0) = 1.0;  // the row of state 1 sends its unit mass to 0
    Eigen::VectorXd x = lu.solve(rhs);

    BlockSolve out;
    out.pi.assign(x.data(), x.data() + n);
    CompensatedSum s;
    for (double v : out.pi) s.add(v);
    out.sum = s.value();

    // pi Phi - pi on the retained block, including the entry of state 1.
    std::vector<double> flow(static_cast<std::size_t>(n), 0.0);
    flow[0] = 1.0;
    double exit = 0.0;
    for (int m = 0; m < n; ++m) {
        const RwreSiteLaw& law = env.law(-m);
        for (std::size_t k = 0; k < law.offsets.size(); ++k) {
            const long t = -m + law.offsets[k];
            const double f = out.pi[static_cast<std::size_t>(m)] * law.probs[k];
            if (t > 0) {
                exit += f;
            } else {
                flow[static_cast<std::size_t>(clamp_target(t, K))] += f;
            }
        }
    }
    double r = std::abs(exit - 1.0);
    for (int m = 0; m < n; ++m) r = std::max(r, std::abs(flow[static_cast<std::size_t>(m)] - out.pi[static_cast<std::size_t>(m)]));
    out.residual = r;
    return out;
}

}  // namespace

PiVector phi_pi_solve(const Environment& env, int depth_K, double tol, int max_depth) {
    if (depth_K < 1) throw ConfigError("phi_pi_solve: depth_K must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("phi_pi_solve: tol must be > 0");
    if (env.model() != Model::rwre) throw ConfigError("phi_pi_solve needs an rwre environment");
    int K = depth_K;
    BlockSolve prev = solve_block(env, K);
    while (true) {
        if (2L * K > max_depth) {
            std::ostringstream msg;
            msg << "phi_pi_solve: sum of pi did not stabilize up to depth " << K << " (last sum " << prev.sum
                << ")";
            throw TruncationError(msg.str());
        }
        K *= 2;
        BlockSolve cur = solve_block(env, K);
        if (std::abs(cur.sum - prev.sum) < tol) {
            PiVector out;
            out.depth = K;
            out.pi.reserve(cur.pi.size() + 1);
            out.pi.push_back(1.0);
            out.pi.insert(out.pi.end(), cur.pi.begin(), cur.pi.end());
            out.sum = cur.sum;
            out.residual = cur.residual;
            return out;
        }
        prev = std::move(cur);
    }
}

VelocityReport velocity_corollary(const EnvSpec& spec, int samples, int depth_K, double tol, std::uint64_t seed,
                                  unsigned jobs, int max_depth) {
    if (spec.model != Model::rwre) throw ConfigError("velocity_corollary needs an rwre spec");
    if (samples < 1) throw ConfigError("samples must be >= 1");
    VelocityReport rep;
    rep.method = "corollary";
    rep.seed = seed;

    std::vector<Environment> envs;
    const Environment base(spec, spec.seed);
    if (spec.mode == Mode::periodic) {
        for (long p = 0; p < static_cast<long>(spec.atom_count()); ++p) envs.push_back(base.shifted(p));
    } else if (spec.is_random()) {
        for (int i = 0; i < samples; ++i) envs.emplace_back(spec, derive_seed(seed, stream::env_draw, static_cast<std::uint64_t>(i)));
    } else {
        envs.push_back(base);
    }
    rep.replicas = static_cast<int>(envs.size());

    struct Out {
        double sum = 0.0;
        bool diverged = false;
    };
    auto results = parallel_map(envs.size(), jobs, [&](std::size_t i) {
        try {
            return Out{phi_pi_solve(envs[i], depth_K, tol, max_depth).sum, false};
        } catch (const TruncationError&) {
            return Out{0.0, true};
        }
    });
    for (const auto& r : results) {
        if (r.diverged) ++rep.truncations;
        rep.samples.push_back(r.sum);
    }
    if (rep.truncations > 0) {
        rep.velocity = 0.0;
        rep.se = 0.0;
        rep.verdict = "sum of pi diverges in " + std::to_string(rep.truncations) + " of " +
                      std::to_string(rep.replicas) + " environments: zero velocity";
        return rep;
    }
    MeanSe ms = mean_se(rep.samples);
    if (!spec.is_random()) ms.se = 0.0;
    rep.velocity = 1.0 / ms.mean;
    rep.se = ms.se / (ms.mean * ms.mean);
    rep.verdict = "E(sum pi) = " + std::to_string(ms.mean);
    return rep;
}

std::string trajectory_to_csv(const WalkTrajectory& traj) {
    std::ostringstream out;
    out << "step,state\n";
    for (std::size_t n = 0; n < traj.states.size(); ++n) out << n << ',' << traj.states[n] << '\n';
    return out.str();
}

}  // namespace ergwalk
