// Prints one PASS/FAIL line per acceptance criterion; exits nonzero on any failure.
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ergwalk/bdp_engine.hpp"
#include "ergwalk/cli_app.hpp"
#include "ergwalk/config.hpp"
#include "ergwalk/lyapunov.hpp"
#include "ergwalk/rng.hpp"
#include "ergwalk/rwre_engine.hpp"
#include "ergwalk/stats.hpp"
#include "ergwalk/velocity_exact2.hpp"

using namespace ergwalk;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;
};

EnvSpec bdp_homogeneous(std::vector<double> tuple) {
    EnvSpec s;
    s.model = Model::bdp;
    s.mode = Mode::homogeneous;
    s.L = s.R = 2;
    s.rate_sites = {SiteRates::from_tuple(tuple, 2, 2)};
    return s;
}

EnvSpec bdp_iid(std::vector<std::vector<double>> tuples) {
    EnvSpec s;
    s.model = Model::bdp;
    s.mode = Mode::iid;
    s.L = s.R = 2;
    for (auto& t : tuples) s.rate_sites.push_back(SiteRates::from_tuple(t, 2, 2));
    s.weights.assign(tuples.size(), 1.0 / static_cast<double>(tuples.size()));
    return s;
}

std::vector<double> random_tuple(Rng& rng, double lo, double hi) {
    std::vector<double> t(4);
    for (double& x : t) x = lo + (hi - lo) * rng.uniform();
    return t;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// 1. Transfer recursion vs absorbing-chain solve.
Verdict exit_probabilities() {
    Rng rng(derive_seed(101, stream::environment, 0));
    double worst = 0.0;
    for (int e = 0; e < 50; ++e) {
        const double lo = 0.1 + rng.uniform();
        const double hi = lo + 0.5 + 4.0 * rng.uniform();
        EnvSpec s;
        s.model = Model::bdp;
        s.mode = Mode::iid;
        s.L = s.R = 2;
        s.uniform = UniformBox{lo, hi};
        const long width = 2 + static_cast<long>(rng.uniform() * 29.0);
        const long a = -static_cast<long>(rng.uniform() * 100.0);
        const long b = a + width;
        const Environment env = sample_environment(s, derive_seed(101, stream::environment, e + 1), a - 2, b + 2);
        std::vector<long> starts;
        for (long k = a + 1; k <= b - 1; ++k) starts.push_back(k);
        const auto tr = exit_probs_transfer(env, a, b, starts);
        const auto ls = exit_probs_finite_all(env, a, b);
        for (std::size_t j = 0; j < starts.size(); ++j) {
            worst = std::max({worst, std::abs(tr[j][0] - ls[j].at_b), std::abs(tr[j][1] - ls[j].at_b1)});
        }
    }
    return {worst < 1e-10, fmt("max |transfer - solve| = %.3g over 50 environments", worst)};
}

// 2. Coefficient sums against the embedded jump probabilities.
Verdict coefficient_identities() {
    Rng rng(derive_seed(202, stream::environment, 0));
    EnvSpec s;
    s.model = Model::bdp;
    s.mode = Mode::table;
    s.L = s.R = 2;
    s.table_origin = -2500;
    for (int k = 0; k < 3500; ++k) {
        std::vector<double> t = random_tuple(rng, 0.5, 1.5);
        t[3] += 1.5;  // positive drift keeps the truncations short
        s.rate_sites.push_back(SiteRates::from_tuple(t, 2, 2));
    }
    const Environment env(s, 0);
    BranchingModel model(env);
    double worst = 0.0;
    for (long i = -500; i < 500; ++i) {
        const Coefficients& c = model.coefficients(i);
        const EmbeddedProbs here = embedded_jump_probs(env.rates(i));
        const EmbeddedProbs next = embedded_jump_probs(env.rates(i + 1));
        worst = std::max({worst, std::abs(c.alpha[0] + c.alpha[1] + c.alpha[2] - here.q[0]),
                          std::abs(c.beta[0] + c.beta[1] + c.beta[2] - here.q[1]),
                          std::abs(c.gamma[0] + c.gamma[1] + c.gamma[2] - next.q[1])});
    }
    return {worst < 1e-12, fmt("max identity error = %.3g over 1000 sites", worst)};
}

// 3. Homogeneous (1,1,1,2): exact series and simulation both give 2.
Verdict homogeneous_closure() {
    const EnvSpec spec = bdp_homogeneous({1, 1, 1, 2});
    const Theorem51Report t = velocity_theorem51(spec, 1, 1e-10, 10000, 3);
    const VelocityReport mc = estimate_velocity_bdp(spec, 1e4, 200, 3, 1);
    const bool ok = !t.diverged && std::abs(t.velocity.velocity - 2.0) < 1e-6 && std::abs(mc.velocity - 2.0) < 3.0 * mc.se;
    return {ok, fmt("series v = %.12f, mc v = %.5f (se %.2g)", t.velocity.velocity, mc.velocity, mc.se)};
}

// 4. Exact series vs simulation on seeded two-state i.i.d. specs.
Verdict cross_engine() {
    Rng rng(derive_seed(404, stream::environment, 0));
    Verdict v;
    for (int k = 0; k < 5; ++k) {
        // (mu2, mu1, lambda1, lambda2) with lambda2 lifted so both states drift right.
        std::vector<double> a = random_tuple(rng, 0.5, 1.5), b = random_tuple(rng, 0.5, 1.5);
        a[3] += 1.0;
        b[3] += 1.0;
        const EnvSpec spec = bdp_iid({a, b});
        const std::uint64_t seed = derive_seed(404, stream::env_draw, k);
        const Theorem51Report t = velocity_theorem51(spec, 100, 1e-10, 10000, seed);
        const VelocityReport mc = estimate_velocity_bdp(spec, 1000.0, 100, seed, 1);
        const double sep = separation_in_se({t.velocity.velocity, t.velocity.se, 0}, {mc.velocity, mc.se, 0});
        v.pass = v.pass && !t.diverged && sep < 3.0;
        v.detail += fmt("%.4f/%.4f(%.2f se) ", t.velocity.velocity, mc.velocity, sep);
    }
    v.detail = "series/mc: " + v.detail;
    return v;
}

// 5. Nearest-neighbour p = 0.7.
Verdict corollary_closure() {
    EnvSpec s;
    s.model = Model::rwre;
    s.mode = Mode::homogeneous;
    s.law_sites = {RwreSiteLaw::from_map({{1, 0.7}, {-1, 0.3}})};
    const PiVector pi = phi_pi_solve(Environment(s, 0), 32, 1e-12);
    const VelocityReport c = velocity_corollary(s, 1, 32, 1e-12, 5);
    const VelocityReport mc = estimate_velocity_rwre(s, 100000, 50, 5, 1);
    const bool ok = std::abs(pi.sum - 2.5) < 1e-8 && std::abs(c.velocity - 0.4) < 1e-8 &&
                    std::abs(c.velocity - mc.velocity) < 3.0 * mc.se;
    return {ok, fmt("sum pi = %.12f, v = %.12f, mc v = %.5f", pi.sum, c.velocity, mc.velocity)};
}

// 6. Constant-matrix spectrum and sign agreement with simulated drift.
Verdict lyapunov_sanity() {
    Eigen::MatrixXd P(3, 3);
    P << 1, 0.5, 0.2, -0.3, 1, 0.4, 0.1, -0.2, 1;
    const Eigen::MatrixXd A = P * Eigen::Vector3d(2.0, 1.0, 0.25).asDiagonal() * P.inverse();
    const LyapunovSpectrum sp = lyapunov_spectrum([&](long) { return A; }, 3, 100000, 1000, 6);
    Eigen::EigenSolver<Eigen::MatrixXd> es(A);
    std::vector<double> oracle;
    for (int i = 0; i < 3; ++i) oracle.push_back(std::log(std::abs(es.eigenvalues()(i))));
    std::sort(oracle.begin(), oracle.end());
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(sp.gammas[i] - oracle[i]));
    Verdict v{worst < 1e-3, fmt("spectrum error %.2g; ", worst)};

    const std::vector<EnvSpec> specs{
        bdp_homogeneous({1, 1, 1, 2}),       bdp_homogeneous({2, 1, 1, 1}),
        bdp_homogeneous({0.5, 1, 2, 0.5}),   bdp_homogeneous({0.5, 2, 1, 0.5}),
        bdp_homogeneous({1, 2, 1, 1.2}),     bdp_homogeneous({1.5, 0.5, 0.5, 1}),
        bdp_iid({{1, 1, 1, 2}, {1, 1, 1.5, 1}}), bdp_iid({{2, 1, 1, 1}, {1, 1.5, 1, 1}}),
        bdp_iid({{1, 1, 1, 2}, {1.5, 1, 1, 1}}), bdp_iid({{1, 2, 1, 0.5}, {1, 1, 2, 0.2}})};
    int agree = 0;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const Classification c = classify(lyapunov_spectrum(Environment(specs[k], 60 + k), 50000, 1000, 60 + k), 2);
        const VelocityReport mc = estimate_velocity_bdp(specs[k], 300.0, 40, 60 + k, 1);
        const std::string expected = mc.velocity > 0.0 ? "transient-right" : "transient-left";
        const bool clear = std::abs(mc.velocity) > 3.0 * mc.se;
        agree += clear && c.verdict == expected;
    }
    v.pass = v.pass && agree == 10;
    v.detail += fmt("%.0f/10 verdicts match simulated drift", agree);
    return v;
}

// 7. Skeleton tail frequencies under the plug-in bound.
Verdict tail_bound() {
    const TailReport r = skeleton_tail_check(bdp_homogeneous({1, 1, 1, 2}), 0.1, 100, 10000, 7, 0.9, 2.1, -20.0, 12, 1);
    bool below = true;
    for (std::size_t k = 0; k < r.m.size(); ++k) below = below && r.freq[k] + 3.0 * r.se[k] <= r.bound[k];
    const bool ok = r.samples == 1000000 && below && r.all_below && r.slope < 0.0;
    return {ok, fmt("%g skeleton steps, log-frequency slope %.3f, c1 %.4f", static_cast<double>(r.samples), r.slope,
                    r.constants.c1)};
}

// 8. h-consistency and small-h rate recovery.
Verdict h_consistency_check() {
    const EnvSpec spec = bdp_homogeneous({1, 1, 1, 2});
    const HConsistency hc = h_consistency(spec, {0.1, 0.05, 0.01}, 500.0, 100, 8, 1);
    const auto tabs = small_h_rates(spec, {0.001}, 200000, 8, 1);
    double worst = 0.0;
    for (const auto& row : tabs[0].rows) {
        if (std::abs(row.j) <= 2) worst = std::max(worst, std::abs(row.rate - row.target) / row.se);
    }
    return {hc.consistent && worst < 3.0,
            fmt("max h separation %.2f se, max small-h rate deviation %.2f se", hc.max_separation, worst)};
}

// 9. Martingale residual mean and reconstruction.
Verdict martingale() {
    EnvSpec s;
    s.model = Model::rwre;
    s.mode = Mode::iid;
    s.law_sites = {RwreSiteLaw::from_map({{1, 0.6}, {-1, 0.4}}), RwreSiteLaw::from_map({{1, 0.8}, {-1, 0.2}}),
                   RwreSiteLaw::from_map({{1, 0.35}, {-1, 0.65}})};
    s.weights = {0.3, 0.4, 0.3};
    const Environment env(s, 9);
    std::vector<double> last;
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 10000; ++k) {
        const WalkTrajectory t = run_walk(env, 200, derive_seed(9, stream::walk, k));
        const auto M = martingale_residual(t);
        double d = 0.0;
        for (std::size_t n = 0; n < t.states.size(); ++n) {
            worst = std::max(worst, std::abs(static_cast<double>(t.states[n]) - (t.states[0] + M[n] + d)));
            d += local_drift(env, t.states[n]);
        }
        last.push_back(M.back());
    }
    const MeanSe m = mean_se(last);
    return {std::abs(m.mean) < 3.0 * m.se && worst < 1e-12,
            fmt("mean M_200 = %.4f (se %.4f), reconstruction error %.2g", m.mean, m.se, worst)};
}

// 10. Reports re-run from their embedded config are byte-identical.
Verdict determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ergwalk_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Json cfg = {{"seed", 2024},
                      {"environment", {{"model", "bdp"}, {"mode", "iid"}, {"L", 2}, {"R", 2},
                                       {"uniform", {{"low", 0.5}, {"high", 3.0}}}, {"bounds", {{"epsilon", 0.4}, {"M", 4.0}}}}},
                      {"velocity", {{"method", "mc-bdp"}, {"t_max", 100.0}, {"replicas", 24}}},
                      {"classify", {{"n_products", 20000}}},
                      {"tailcheck", {{"replicas", 16}, {"steps", 2000}}},
                      {"hconsistency", {{"t_max", 50.0}, {"replicas", 16}, {"small_h", {0.01}}, {"small_h_replicas", 5000}}}};
    std::ofstream(dir / "config.json") << cfg.dump(2);
    auto run = [&](const std::string& command, const fs::path& config, const std::string& jobs) {
        std::ostringstream out, err;
        const int code = run_cli({"ergwalk", command, "--config", config.string(), "--jobs", jobs}, out, err);
        return std::to_string(code) + out.str();
    };
    Verdict v;
    int identical = 0, total = 0;
    for (const std::string command : {"velocity", "classify", "tailcheck", "hconsistency"}) {
        const std::string first = run(command, dir / "config.json", "1");
        std::ofstream(dir / "report.json") << first.substr(1);
        for (const char* jobs : {"1", "8"}) {
            ++total;
            identical += run(command, dir / "report.json", jobs) == first;
        }
        v.pass = v.pass && first[0] == '0';
    }
    v.pass = v.pass && identical == total;
    v.detail = fmt("%.0f/%.0f re-runs byte-identical at jobs 1 and 8", identical, total);
    return v;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"exit probabilities, transfer vs linear solve", exit_probabilities},
        {"coefficient identities", coefficient_identities},
        {"homogeneous velocity closure", homogeneous_closure},
        {"cross-engine agreement", cross_engine},
        {"nearest-neighbour closure", corollary_closure},
        {"Lyapunov sanity", lyapunov_sanity},
        {"skeleton tail bound", tail_bound},
        {"h-consistency", h_consistency_check},
        {"martingale diagnostics", martingale},
        {"determinism", determinism}};
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[k].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += !v.pass;
        std::printf("criterion %zu: %s  %s  [%s] (%.1fs)\n", k + 1, v.pass ? "PASS" : "FAIL", criteria[k].first,
                    v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
