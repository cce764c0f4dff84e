#include "ergwalk/bdp_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ergwalk/errors.hpp"
#include "ergwalk/parallel.hpp"
#include "ergwalk/rng.hpp"

namespace ergwalk {

namespace {

// Draws the next jump offset at a site given u uniform on [0, q).
long pick_jump(const SiteRates& s, double u) {
    double acc = 0.0;
    for (int l = s.L(); l >= 1; --l) {
        acc += s.mu[l - 1];
        if (u < acc) return -l;
    }
    for (int r = 1; r <= s.R(); ++r) {
        acc += s.lambda[r - 1];
        if (u < acc) return r;
    }
    // u landed on the rounding gap at the top: take the last positive rate.
    for (int r = s.R(); r >= 1; --r) {
        if (s.lambda[r - 1] > 0.0) return r;
    }
    for (int l = 1; l <= s.L(); ++l) {
        if (s.mu[l - 1] > 0.0) return -l;
    }
    return 0;
}

// Gillespie core shared by every simulator so that a given (env, seed) yields
// the same event sequence whether or not the path is stored. on_event(t, x)
// fires after each jump; the loop stops at the first epoch beyond t_max.
template <class OnEvent>
long run_events(const Environment& env, double t_max, Rng& rng, long event_guard, OnEvent&& on_event) {
    long x = 0;
    CompensatedSum t;
    long events = 0;
    while (true) {
        const SiteRates& s = env.rates(x);
        const double q = s.total_rate();
        if (!(q > 0.0)) throw DegenerateSiteError("site " + std::to_string(x) + " has zero total rate");
        CompensatedSum next = t;
        next.add(rng.exponential(q));
        if (next.value() > t_max) return x;
        const long j = pick_jump(s, rng.uniform() * q);
        t = next;
        x += j;
        if (++events > event_guard) {
            std::ostringstream msg;
            msg << "more than " << event_guard << " events before t = " << t.value() << " (t_max " << t_max << ")";
            throw ExplosionError(msg.str());
        }
        if (!on_event(t.value(), x)) return x;
    }
}

long grid_size(double t_max, double h) {
    return static_cast<long>(std::floor(t_max / h * (1.0 + 1e-12)));
}

// Streams the skeleton X_0..X_n of a fresh path, calling on_grid(k, X_k).
template <class OnGrid>
void run_skeleton(const Environment& env, double h, long n, Rng& rng, OnGrid&& on_grid) {
    long k = 0;
    long x = 0;
    const double t_max = static_cast<double>(n) * h;
    auto flush_until = [&](double t_event) {
        // Grid times strictly before the epoch still see the old state.
        while (k <= n) {
            const double g = static_cast<double>(k) * h;
            if (!(g + 1e-12 * std::max(1.0, g) < t_event)) break;
            on_grid(k, x);
            ++k;
        }
    };
    const long final_x = run_events(env, t_max * (1.0 + 1e-12), rng, kDefaultEventGuard, [&](double t, long nx) {
        flush_until(t);
        x = nx;
        return k <= n;
    });
    x = final_x;
    while (k <= n) {
        on_grid(k, x);
        ++k;
    }
}

Environment replica_env(const EnvSpec& spec, const Environment& shared, bool fresh, std::uint64_t master,
                        std::size_t i) {
    return fresh ? Environment(spec, derive_seed(master, stream::environment, i)) : shared;
}

void require_bdp(const EnvSpec& spec) {
    if (spec.model != Model::bdp) throw ConfigError("this operation needs a bdp spec");
}

}  // namespace

long EventPath::state_at(double t) const {
    const double key = t + 1e-12 * std::max(1.0, std::abs(t));
    auto it = std::upper_bound(tau.begin(), tau.end(), key);
    const auto idx = static_cast<std::size_t>(it - tau.begin());
    return chi[idx == 0 ? 0 : idx - 1];
}

EventPath simulate_bdp(const Environment& env, double t_max, std::uint64_t seed, long event_guard) {
    if (!(t_max > 0.0)) throw ConfigError("simulate_bdp: t_max must be > 0");
    if (env.model() != Model::bdp) throw ConfigError("simulate_bdp needs a bdp environment");
    EventPath path;
    path.t_max = t_max;
    path.seed = seed;
    path.tau.push_back(0.0);
    path.chi.push_back(0);
    Rng rng(seed);
    run_events(env, t_max, rng, event_guard, [&](double t, long x) {
        path.tau.push_back(t);
        path.chi.push_back(x);
        return true;
    });
    return path;
}

SkeletonSeries extract_skeleton(const EventPath& path, double h) {
    if (!(h > 0.0) || h > path.t_max * (1.0 + 1e-12)) throw ConfigError("extract_skeleton needs 0 < h <= t_max");
    SkeletonSeries s;
    s.h = h;
    const long n = grid_size(path.t_max, h);
    s.X.reserve(static_cast<std::size_t>(n) + 1);
    std::size_t idx = 0;
    for (long k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) * h;
        const double key = t + 1e-12 * std::max(1.0, t);
        while (idx + 1 < path.tau.size() && path.tau[idx + 1] <= key) ++idx;
        s.X.push_back(path.chi[idx]);
    }
    return s;
}

LadderStats ladder_stats(const EventPath& path) {
    LadderStats st;
    if (path.chi.empty() || path.chi[0] != 0) throw ConfigError("ladder_stats needs a path started at 0");
    std::vector<CompensatedSum> occ;
    for (std::size_t n = 0; n < path.chi.size(); ++n) {
        const long x = path.chi[n];
        if (x > 0) {
            st.T1 = path.tau[n];
            st.overshoot = x;
            st.embedded_index = static_cast<long>(n);
            for (const auto& c : occ) st.occupation.push_back(c.value());
            return st;
        }
        const auto m = static_cast<std::size_t>(-x);
        if (m >= occ.size()) {
            occ.resize(m + 1);
            st.visits.resize(m + 1, 0);
        }
        ++st.visits[m];
        const double end = n + 1 < path.tau.size() ? path.tau[n + 1] : path.t_max;
        occ[m].add(end - path.tau[n]);
    }
    st.truncated = true;
    st.T1 = path.t_max;
    st.embedded_index = static_cast<long>(path.chi.size());
    for (const auto& c : occ) st.occupation.push_back(c.value());
    return st;
}

double skeleton_velocity(const EventPath& path, double h) {
    const SkeletonSeries s = extract_skeleton(path, h);
    const auto n = static_cast<double>(s.X.size() - 1);
    if (n < 1) throw ConfigError("skeleton_velocity needs h <= t_max");
    return static_cast<double>(s.X.back() - s.X.front()) / (n * h);
}

VelocityReport estimate_velocity_bdp(const EnvSpec& spec, double t_max, int replicas, std::uint64_t seed,
                                     unsigned jobs, bool annealed) {
    require_bdp(spec);
    if (replicas < 1) throw ConfigError("replicas must be >= 1");
    if (!(t_max > 0.0)) throw ConfigError("t_max must be > 0");
    const bool fresh = annealed && spec.is_random();
    const Environment shared(spec, spec.seed);
    auto values = parallel_map(static_cast<std::size_t>(replicas), jobs, [&](std::size_t i) {
        const Environment env = replica_env(spec, shared, fresh, seed, i);
        Rng rng(derive_seed(seed, stream::walk, i));
        const long x = run_events(env, t_max, rng, kDefaultEventGuard, [](double, long) { return true; });
        return static_cast<double>(x) / t_max;
    });
    VelocityReport rep;
    rep.method = "mc-bdp";
    rep.replicas = replicas;
    rep.horizon = t_max;
    rep.seed = seed;
    rep.samples = values;
    const MeanSe ms = mean_se(values);
    rep.velocity = ms.mean;
    rep.se = ms.se;
    rep.verdict = fresh ? "annealed" : "quenched";
    return rep;
}

TailConstants tail_constants(int L, int R, double epsilon, double M, double lambda_bar) {
    TailConstants c;
    c.epsilon = epsilon;
    c.M = M;
    c.lambda_bar = lambda_bar;
    c.kappa = (L + R) * epsilon;
    c.K = (L + R) * M;
    c.c0 = -lambda_bar;
    c.c1 = (std::log(c.kappa - lambda_bar) - std::log(c.K)) / R;
    return c;
}

TailReport skeleton_tail_check(const EnvSpec& spec, double h, int replicas, long steps, std::uint64_t seed,
                               double epsilon, double M, double lambda_bar, int m_max, unsigned jobs) {
    require_bdp(spec);
    if (!(h > 0.0)) throw ConfigError("tail check needs h > 0");
    if (replicas < 1 || steps < 1) throw ConfigError("tail check needs replicas >= 1 and steps >= 1");
    if (!(lambda_bar < 0.0)) throw ConfigError("tail check needs lambda_bar < 0");
    if (!(epsilon < M)) throw ConfigError("tail check needs epsilon < M");
    const int jmax = std::max(spec.L, spec.R);
    if (m_max <= jmax) throw ConfigError("tail check needs m_max > max(L, R)");

    // The constants rest on every rate lying in (epsilon, M).
    auto check_atom = [&](const SiteRates& s) {
        for (double v : s.to_tuple()) {
            if (!(v > epsilon && v < M)) {
                throw ConfigError("tail check needs every rate in (epsilon, M); found " + std::to_string(v));
            }
        }
    };
    if (spec.uniform) {
        if (!(spec.uniform->low > epsilon && spec.uniform->high < M)) {
            throw ConfigError("tail check needs the uniform rate box inside (epsilon, M)");
        }
    }
    for (const auto& s : spec.rate_sites) check_atom(s);

    TailReport rep;
    rep.h = h;
    rep.constants = tail_constants(spec.L, spec.R, epsilon, M, lambda_bar);
    const bool fresh = spec.is_random();
    const Environment shared(spec, spec.seed);
    const auto nm = static_cast<std::size_t>(m_max + 1);
    auto counts = parallel_map(static_cast<std::size_t>(replicas), jobs, [&](std::size_t i) {
        const Environment env = replica_env(spec, shared, fresh, seed, i);
        Rng rng(derive_seed(seed, stream::walk, i));
        std::vector<long> c(nm + 1, 0);  // c[d] = increments with |dX| == d, last slot for > m_max
        long prev = 0;
        run_skeleton(env, h, steps, rng, [&](long k, long x) {
            if (k > 0) {
                const auto d = static_cast<std::size_t>(std::abs(x - prev));
                ++c[std::min(d, nm)];
            }
            prev = x;
        });
        return c;
    });
    std::vector<long> total(nm + 1, 0);
    for (const auto& c : counts) {
        for (std::size_t d = 0; d <= nm; ++d) total[d] += c[d];
    }
    rep.samples = static_cast<long>(replicas) * steps;
    const auto n = static_cast<double>(rep.samples);
    rep.all_below = true;
    std::vector<double> xs, ys;
    for (int m = jmax + 1; m <= m_max; ++m) {
        long cnt = 0;
        for (std::size_t d = static_cast<std::size_t>(m); d <= nm; ++d) cnt += total[d];
        const double p = static_cast<double>(cnt) / n;
        const double se = std::sqrt(std::max(p * (1.0 - p), 0.0) / n);
        const double b = std::exp(rep.constants.c0 * h - rep.constants.c1 * m);
        rep.m.push_back(m);
        rep.counts.push_back(cnt);
        rep.freq.push_back(p);
        rep.se.push_back(se);
        rep.bound.push_back(b);
        if (!(p + 3.0 * se < b)) rep.all_below = false;
        if (cnt > 0) {
            xs.push_back(m);
            ys.push_back(std::log(p));
        }
    }
    rep.slope_points = static_cast<int>(xs.size());
    rep.slope = xs.size() >= 2 ? regression_slope(xs, ys) : 0.0;
    return rep;
}

HConsistency h_consistency(const EnvSpec& spec, const std::vector<double>& h_list, double t_max, int replicas,
                           std::uint64_t seed, unsigned jobs) {
    require_bdp(spec);
    if (h_list.empty()) throw ConfigError("h_consistency needs at least one h");
    if (replicas < 1 || !(t_max > 0.0)) throw ConfigError("h_consistency needs replicas >= 1 and t_max > 0");
    for (double h : h_list) {
        if (!(h > 0.0) || h > t_max) throw ConfigError("every h must satisfy 0 < h <= t_max");
    }
    HConsistency out;
    const Environment shared(spec, spec.seed);
    for (std::size_t hi = 0; hi < h_list.size(); ++hi) {
        const double h = h_list[hi];
        const std::uint64_t master = derive_seed(seed, stream::h_grid, hi);
        const long n = grid_size(t_max, h);
        auto values = parallel_map(static_cast<std::size_t>(replicas), jobs, [&](std::size_t i) {
            const Environment env = replica_env(spec, shared, spec.is_random(), master, i);
            Rng rng(derive_seed(master, stream::walk, i));
            long last = 0;
            run_skeleton(env, h, n, rng, [&](long, long x) { last = x; });
            return static_cast<double>(last) / (static_cast<double>(n) * h);
        });
        out.rows.push_back({h, mean_se(values)});
    }
    for (std::size_t a = 0; a < out.rows.size(); ++a) {
        for (std::size_t b = a + 1; b < out.rows.size(); ++b) {
            out.max_separation = std::max(out.max_separation, separation_in_se(out.rows[a].v_over_h, out.rows[b].v_over_h));
        }
    }
    out.consistent = out.max_separation <= 3.0;
    return out;
}

std::vector<SmallHTable> small_h_rates(const EnvSpec& spec, const std::vector<double>& h_list, long replicas,
                                       std::uint64_t seed, unsigned jobs) {
    require_bdp(spec);
    if (replicas < 1) throw ConfigError("small_h_rates needs replicas >= 1");
    for (std::size_t i = 0; i < h_list.size(); ++i) {
        if (!(h_list[i] > 0.0)) throw ConfigError("every h must be > 0");
        if (i > 0 && !(h_list[i] < h_list[i - 1])) throw ConfigError("h_list must be strictly decreasing");
    }
    const int L = spec.L, R = spec.R;
    const auto width = static_cast<std::size_t>(L + R + 3);  // offsets -(L+1) .. R+1
    auto slot = [L](long j) { return static_cast<std::size_t>(j + L + 1); };
    constexpr long kChunk = 10000;
    const long chunks = (replicas + kChunk - 1) / kChunk;
    // Samples in a chunk start at distinct, widely spaced sites of one draw.
    const long stride = 64L * std::max(L, R);

    std::vector<SmallHTable> out;
    for (std::size_t hi = 0; hi < h_list.size(); ++hi) {
        const double h = h_list[hi];
        const std::uint64_t master = derive_seed(seed, stream::h_grid, hi);
        struct Acc {
            std::vector<long> hits;
            std::vector<double> rate_sum;
            long other = 0;
        };
        auto accs = parallel_map(static_cast<std::size_t>(chunks), jobs, [&](std::size_t c) {
            const Environment base(spec, spec.is_random() ? derive_seed(master, stream::environment, c) : spec.seed);
            Rng rng(derive_seed(master, stream::walk, c));
            Acc a{std::vector<long>(width, 0), std::vector<double>(width, 0.0), 0};
            const long begin = static_cast<long>(c) * kChunk;
            const long end = std::min(replicas, begin + kChunk);
            for (long s = begin; s < end; ++s) {
                const Environment env = spec.is_random() ? base.shifted((s - begin) * stride) : base;
                const long x = run_events(env, h, rng, kDefaultEventGuard, [](double, long) { return true; });
                if (x != 0 && x >= -(L + 1) && x <= R + 1) {
                    ++a.hits[slot(x)];
                } else if (x != 0) {
                    ++a.other;
                }
                const SiteRates& s0 = env.rates(0);
                for (int l = 1; l <= L; ++l) a.rate_sum[slot(-l)] += s0.mu[l - 1];
                for (int r = 1; r <= R; ++r) a.rate_sum[slot(r)] += s0.lambda[r - 1];
            }
            return a;
        });
        std::vector<long> hits(width, 0);
        std::vector<double> rate_sum(width, 0.0);
        for (const auto& a : accs) {
            for (std::size_t k = 0; k < width; ++k) {
                hits[k] += a.hits[k];
                rate_sum[k] += a.rate_sum[k];
            }
        }
        SmallHTable tab;
        tab.h = h;
        tab.samples = replicas;
        const auto n = static_cast<double>(replicas);
        for (long j = -(L + 1); j <= R + 1; ++j) {
            if (j == 0) continue;
            const double p = static_cast<double>(hits[slot(j)]) / n;
            RateRow row;
            row.j = static_cast<int>(j);
            row.rate = p / h;
            // A zero count still carries the binomial uncertainty of one hit.
            const double p_se = std::max(p, 1.0 / n);
            row.se = std::sqrt(p_se * (1.0 - p_se) / n) / h;
            row.target = rate_sum[slot(j)] / n;
            tab.rows.push_back(row);
        }
        out.push_back(std::move(tab));
    }
    return out;
}

std::string path_to_csv(const EventPath& path) {
    std::ostringstream out;
    out.precision(17);
    out << "tau,chi\n";
    for (std::size_t n = 0; n < path.tau.size(); ++n) out << path.tau[n] << ',' << path.chi[n] << '\n';
    return out.str();
}

}  // namespace ergwalk
