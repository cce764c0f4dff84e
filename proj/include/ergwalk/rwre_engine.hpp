#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ergwalk/env_core.hpp"
#include "ergwalk/report.hpp"

namespace ergwalk {

struct WalkTrajectory {
    std::vector<long> states;  // S_0 .. S_n
    Environment env;
    std::uint64_t seed = 0;
};

struct HittingRecord {
    long T = 0;              // first n > 0 with S_n > 0, or the step count reached
    long overshoot = 0;      // S_T (0 when truncated)
    std::vector<long> U;     // U[m] = visits to site -m before T
    bool truncated = false;

    long visits(long k) const { return k <= 0 && -k < static_cast<long>(U.size()) ? U[static_cast<std::size_t>(-k)] : 0; }
};

struct PiVector {
    std::vector<double> pi;  // pi_1, pi_0, pi_-1, ..., pi_-K
    int depth = 0;           // K
    double sum = 0.0;        // sum over i <= 0
    double residual = 0.0;   // sup-norm of pi Phi - pi on the retained block
};

WalkTrajectory run_walk(const Environment& env, long n_steps, std::uint64_t seed);

HittingRecord hitting_time_T(const Environment& env, std::uint64_t seed, long step_cap = 1000000);

double local_drift(const Environment& env, long x);

// M_n = S_n - S_0 - sum_{k<n} d(S_k).
std::vector<double> martingale_residual(const WalkTrajectory& traj);

// Mean of S_n/n over replicas. With annealed = true a random environment is
// redrawn for every replica; otherwise all replicas share spec.seed.
VelocityReport estimate_velocity_rwre(const EnvSpec& spec, long n_steps, int replicas, std::uint64_t seed,
                                      unsigned jobs = 1, bool annealed = true);

// Expected visits before T for walks whose jumps are at most +1. The block
// [-K, 0] is solved directly with mass below -K reflected onto -K, and K is
// doubled until the sum stabilizes within tol. Throws TruncationError past
// max_depth.
PiVector phi_pi_solve(const Environment& env, int depth_K, double tol, int max_depth = 1 << 16);

// v = 1 / E(sum_{i<=0} pi_i). Homogeneous and periodic specs are evaluated
// exactly; random specs average over `samples` environment draws.
VelocityReport velocity_corollary(const EnvSpec& spec, int samples, int depth_K, double tol, std::uint64_t seed,
                                  unsigned jobs = 1, int max_depth = 1 << 16);

std::string trajectory_to_csv(const WalkTrajectory& traj);

}  // namespace ergwalk
