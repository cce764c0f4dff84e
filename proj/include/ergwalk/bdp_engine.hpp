#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ergwalk/env_core.hpp"
#include "ergwalk/report.hpp"
#include "ergwalk/stats.hpp"

namespace ergwalk {

inline constexpr long kDefaultEventGuard = 1000000000L;

// Jump epochs and states of a continuous-time path on [0, t_max].
// N_t = chi[n] for tau[n] <= t < tau[n+1].
struct EventPath {
    std::vector<double> tau;  // tau[0] = 0
    std::vector<long> chi;    // chi[0] = starting state
    double t_max = 0.0;
    std::uint64_t seed = 0;

    // Right-continuous evaluation. Grid times within 1e-12 (relative) of an
    // epoch count as at or after it, so k*h rounding does not move jumps.
    long state_at(double t) const;
};

struct LadderStats {
    double T1 = 0.0;           // first time N_t > 0
    long overshoot = 0;        // N_{T_1}
    long embedded_index = 0;   // first n with chi_n > 0
    std::vector<double> occupation;  // occupation[m]: time spent at -m before T_1
    std::vector<long> visits;        // visits[m]: embedded visits to -m before T_1
    bool truncated = false;
};

struct SkeletonSeries {
    double h = 0.0;
    std::vector<long> X;
};

EventPath simulate_bdp(const Environment& env, double t_max, std::uint64_t seed,
                       long event_guard = kDefaultEventGuard);

SkeletonSeries extract_skeleton(const EventPath& path, double h);

LadderStats ladder_stats(const EventPath& path);

// X_n / (n h) for the skeleton of one path, n = floor(t_max / h).
double skeleton_velocity(const EventPath& path, double h);

// Mean of N_{t_max}/t_max over replicas.
VelocityReport estimate_velocity_bdp(const EnvSpec& spec, double t_max, int replicas, std::uint64_t seed,
                                     unsigned jobs = 1, bool annealed = true);

struct TailConstants {
    double epsilon = 0.0, M = 0.0, lambda_bar = -20.0;
    double kappa = 0.0, K = 0.0, c0 = 0.0, c1 = 0.0;
};

// kappa = (L+R) epsilon, K = (L+R) M, c0 = -lambda_bar,
// c1 = (log(kappa - lambda_bar) - log K) / R.
TailConstants tail_constants(int L, int R, double epsilon, double M, double lambda_bar);

struct TailReport {
    double h = 0.0;
    TailConstants constants;
    long samples = 0;
    std::vector<int> m;
    std::vector<double> freq;   // P^(|X_1 - X_0| >= m)
    std::vector<double> se;
    std::vector<long> counts;
    std::vector<double> bound;  // e^{c0 h} e^{-c1 m}
    bool all_below = false;
    double slope = 0.0;         // least squares slope of log freq on m (m with counts > 0)
    int slope_points = 0;
};

// Skeleton increments from `replicas` paths of `steps` grid steps each.
// Bounds are checked for m = max(L,R)+1 .. m_max.
TailReport skeleton_tail_check(const EnvSpec& spec, double h, int replicas, long steps, std::uint64_t seed,
                               double epsilon, double M, double lambda_bar = -20.0, int m_max = 12,
                               unsigned jobs = 1);

struct HRow {
    double h = 0.0;
    MeanSe v_over_h;
};

struct HConsistency {
    std::vector<HRow> rows;
    double max_separation = 0.0;  // largest pairwise |difference| in combined SEs
    bool consistent = false;      // max_separation <= 3
};

HConsistency h_consistency(const EnvSpec& spec, const std::vector<double>& h_list, double t_max, int replicas,
                           std::uint64_t seed, unsigned jobs = 1);

struct RateRow {
    int j = 0;
    double rate = 0.0;    // p^(h,0,j)/h
    double se = 0.0;
    double target = 0.0;  // mean rate of offset j at site 0 over the sampled environments
};

struct SmallHTable {
    double h = 0.0;
    long samples = 0;
    std::vector<RateRow> rows;  // j = -(L+1) .. R+1, j != 0
};

std::vector<SmallHTable> small_h_rates(const EnvSpec& spec, const std::vector<double>& h_list, long replicas,
                                       std::uint64_t seed, unsigned jobs = 1);

std::string path_to_csv(const EventPath& path);

}  // namespace ergwalk
