#include "doctest.h"

#include <cmath>
#include <thread>
#include <vector>

#include "ergwalk/env_core.hpp"
#include "ergwalk/errors.hpp"

using namespace ergwalk;

namespace {

EnvSpec bdp_homogeneous(std::vector<double> tuple, int L = 2, int R = 2) {
    EnvSpec s;
    s.model = Model::bdp;
    s.mode = Mode::homogeneous;
    s.L = L;
    s.R = R;
    s.rate_sites = {SiteRates::from_tuple(tuple, L, R)};
    return s;
}

EnvSpec bdp_periodic(std::vector<std::vector<double>> tuples) {
    EnvSpec s;
    s.model = Model::bdp;
    s.mode = Mode::periodic;
    s.L = 2;
    s.R = 2;
    for (auto& t : tuples) s.rate_sites.push_back(SiteRates::from_tuple(t, 2, 2));
    return s;
}

EnvSpec bdp_uniform_iid(double lo, double hi) {
    EnvSpec s;
    s.model = Model::bdp;
    s.mode = Mode::iid;
    s.L = 2;
    s.R = 2;
    s.uniform = UniformBox{lo, hi};
    return s;
}

EnvSpec rwre_homogeneous(std::map<int, double> law) {
    EnvSpec s;
    s.model = Model::rwre;
    s.mode = Mode::homogeneous;
    s.law_sites = {RwreSiteLaw::from_map(law)};
    return s;
}

}  // namespace

TEST_CASE("site tuples use the order mu^L..mu^1, lambda^1..lambda^R") {
    const SiteRates s = SiteRates::from_tuple({1, 1, 1, 2}, 2, 2);
    CHECK(s.mu[1] == 1.0);
    CHECK(s.lambda[1] == 2.0);
    CHECK(s.total_rate() == 5.0);
    CHECK(s.drift() == 2.0);
    CHECK(s.to_tuple() == std::vector<double>{1, 1, 1, 2});
    const SiteRates t = SiteRates::from_tuple({3, 4, 5}, 2, 1);
    CHECK(t.mu == std::vector<double>{4, 3});
    CHECK(t.lambda == std::vector<double>{5});
    CHECK_THROWS_AS(SiteRates::from_tuple({1, 2, 3}, 2, 2), ConfigError);
}

TEST_CASE("homogeneous mode ignores the seed") {
    const Environment a(bdp_homogeneous({1, 1, 1, 2}), 1);
    const Environment b(bdp_homogeneous({1, 1, 1, 2}), 999);
    for (long x = -50; x <= 50; ++x) {
        CHECK(a.rates(x).to_tuple() == std::vector<double>{1, 1, 1, 2});
        CHECK(a.rates(x) == b.rates(x));
    }
}

TEST_CASE("periodic mode repeats with its period") {
    const Environment env(bdp_periodic({{1, 1, 1, 2}, {2, 1, 1, 1}}), 0);
    CHECK(env.rates(0).to_tuple() == std::vector<double>{1, 1, 1, 2});
    CHECK(env.rates(1).to_tuple() == std::vector<double>{2, 1, 1, 1});
    CHECK(env.rates(2).to_tuple() == std::vector<double>{1, 1, 1, 2});
    CHECK(env.rates(-1).to_tuple() == std::vector<double>{2, 1, 1, 1});
    const Environment s2 = shift(env, 2);
    for (long x = -10; x <= 10; ++x) CHECK(s2.rates(x) == env.rates(x));
}

TEST_CASE("uniform iid environments replay bit-identically") {
    const EnvSpec spec = bdp_uniform_iid(0.5, 3.0);
    const Environment a = sample_environment(spec, 7, -5, 5);
    const Environment b = sample_environment(spec, 7, -5, 5);
    // Materialize in the opposite order: values must depend on the site only.
    const Environment c(spec, 7);
    for (long x = 5; x >= -5; --x) (void)c.rates(x);
    for (long x = -5; x <= 5; ++x) {
        CHECK(a.rates(x) == b.rates(x));
        CHECK(a.rates(x) == c.rates(x));
        for (double v : a.rates(x).to_tuple()) {
            CHECK(v >= 0.5);
            CHECK(v <= 3.0);
        }
    }
    const auto w = a.materialized();
    REQUIRE(w.has_value());
    CHECK(w->first <= -5);
    CHECK(w->second >= 5);
    const Environment d = sample_environment(spec, 8, -5, 5);
    bool differs = false;
    for (long x = -5; x <= 5; ++x) differs = differs || !(a.rates(x) == d.rates(x));
    CHECK(differs);
}

TEST_CASE("iid atom frequencies follow the weights") {
    EnvSpec spec;
    spec.model = Model::bdp;
    spec.mode = Mode::iid;
    spec.L = spec.R = 2;
    spec.rate_sites = {SiteRates::from_tuple({1, 1, 1, 2}, 2, 2), SiteRates::from_tuple({0.8, 1, 1.2, 2}, 2, 2)};
    spec.weights = {0.25, 0.75};
    const Environment env(spec, 3);
    const long n = 40000;
    long second = 0;
    for (long x = -n / 2; x < n / 2; ++x) second += env.rates(x) == spec.rate_sites[1] ? 1 : 0;
    const double f = static_cast<double>(second) / n;
    CHECK(std::abs(f - 0.75) < 4.0 * std::sqrt(0.75 * 0.25 / n));
}

TEST_CASE("markov mode is stationary in both directions") {
    EnvSpec spec;
    spec.model = Model::bdp;
    spec.mode = Mode::markov;
    spec.L = spec.R = 1;
    spec.rate_sites = {SiteRates::from_tuple({1, 2}, 1, 1), SiteRates::from_tuple({2, 1}, 1, 1)};
    spec.transition = {{0.9, 0.1}, {0.3, 0.7}};
    // Stationary law (0.75, 0.25); P(stay in state 0) = 0.9 in either direction.
    const Environment env(spec, 11);
    const long n = 60000;
    long right0 = 0, left0 = 0, stay_left = 0, from0_left = 0;
    for (long x = 0; x < n; ++x) right0 += env.rates(x) == spec.rate_sites[0];
    for (long x = -1; x >= -n; --x) {
        const bool s0 = env.rates(x) == spec.rate_sites[0];
        left0 += s0;
        if (env.rates(x + 1) == spec.rate_sites[0]) {
            ++from0_left;
            stay_left += s0;
        }
    }
    CHECK(std::abs(static_cast<double>(right0) / n - 0.75) < 0.02);
    CHECK(std::abs(static_cast<double>(left0) / n - 0.75) < 0.02);
    CHECK(std::abs(static_cast<double>(stay_left) / from0_left - 0.9) < 0.01);
}

TEST_CASE("shift is a group action") {
    const Environment env(bdp_uniform_iid(0.5, 3.0), 21);
    const Environment same = shift(env, 0);
    const Environment back = shift(shift(env, 3), -3);
    const Environment ab = shift(shift(env, 4), 5);
    const Environment direct = shift(env, 9);
    for (long x = -20; x <= 20; ++x) {
        CHECK(same.rates(x) == env.rates(x));
        CHECK(back.rates(x) == env.rates(x));
        CHECK(ab.rates(x) == direct.rates(x));
        CHECK(shift(env, 3).rates(x) == env.rates(x + 3));
    }
}

TEST_CASE("concurrent readers see one materialization") {
    const Environment env(bdp_uniform_iid(0.5, 3.0), 5);
    std::vector<std::vector<double>> seen(4);
    {
        std::vector<std::jthread> pool;
        for (int t = 0; t < 4; ++t) {
            pool.emplace_back([&, t] {
                for (long x = (t % 2 ? -3000 : 3000); x != 0; x += (t % 2 ? 1 : -1)) seen[t].push_back(env.rates(x).total_rate());
            });
        }
    }
    CHECK(seen[0] == seen[2]);
    CHECK(seen[1] == seen[3]);
    const Environment fresh(bdp_uniform_iid(0.5, 3.0), 5);
    CHECK(fresh.rates(1234).total_rate() == env.rates(1234).total_rate());
}

TEST_CASE("invalid specs are configuration errors") {
    EnvSpec s = bdp_homogeneous({1, 1, 1, 2});
    s.bounds = EllipticBounds{3.0, 2.0};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_THROWS_AS(Environment(s, 0), ConfigError);
    CHECK_THROWS_AS(bdp_uniform_iid(2.0, 1.0).validate(), ConfigError);
    EnvSpec z = bdp_homogeneous({0, 0, 0, 0});
    CHECK_THROWS_AS(z.validate(), ConfigError);
    CHECK_THROWS_AS(RwreSiteLaw::from_map({{1, 0.5}}), ConfigError);
    CHECK_THROWS_AS(sample_environment(bdp_homogeneous({1, 1, 1, 2}), 0, 3, 2), ConfigError);
}

TEST_CASE("random modes stop at the materializable extent") {
    EnvSpec s = bdp_uniform_iid(0.5, 3.0);
    s.max_extent = 100;
    const Environment env(s, 1);
    CHECK_NOTHROW((void)env.rates(100));
    CHECK_THROWS_AS((void)env.rates(101), WindowExhaustedError);
    CHECK_THROWS_AS((void)env.rates(-101), WindowExhaustedError);
}

TEST_CASE("condition C uses strict inequalities") {
    const Environment in_box = sample_environment(bdp_uniform_iid(0.5, 3.0), 2, -20, 20);
    CHECK(validate_condition_C(in_box, 0.4, 4.0, -20, 20).passed());

    const Environment h(bdp_homogeneous({1, 1, 1, 2}), 0);
    const ConditionReport r = validate_condition_C(h, 1.0, 3.0, 0, 0);
    CHECK_FALSE(r.passed());
    CHECK(r.violations.size() == 3);  // mu^2, mu^1, lambda^1 equal epsilon

    EnvSpec t;
    t.model = Model::bdp;
    t.mode = Mode::table;
    t.L = t.R = 2;
    t.table_origin = -1;
    t.rate_sites = {SiteRates::from_tuple({1, 1, 1, 2}, 2, 2), SiteRates::from_tuple({1, 0.3, 1, 2}, 2, 2),
                    SiteRates::from_tuple({1, 1, 1, 2}, 2, 2)};
    const ConditionReport one = validate_condition_C(Environment(t, 0), 0.4, 4.0, -1, 1);
    REQUIRE(one.violations.size() == 1);
    CHECK(one.violations[0].site == 0);
    CHECK(one.violations[0].value == 0.3);
    CHECK_THROWS_AS(validate_condition_C(h, 3.0, 3.0, 0, 0), ConfigError);
}

TEST_CASE("condition C2prime bounds lambda^1 and total rate") {
    const Environment h(bdp_homogeneous({1, 1, 1, 2}), 0);
    CHECK(validate_condition_C2prime(h, 0.5, 6.0, -3, 3).passed());
    CHECK(validate_condition_C2prime(h, 1.0, 6.0, 0, 0).violations.size() == 1);
    CHECK(validate_condition_C2prime(h, 0.5, 5.0, 0, 0).violations.size() == 1);
}

TEST_CASE("condition B checks omega_01 and the power bound") {
    CHECK(validate_condition_B(RwreSiteLaw::from_map({{1, 0.7}, {-1, 0.3}}), 0.5, 1.0, 0.1).passed());

    const RwreSiteLaw far = RwreSiteLaw::from_map({{1, 0.7}, {-1, 0.29}, {-10, 0.01}});
    const ConditionReport r = validate_condition_B(far, 0.5, 1.0, 0.1);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].site == -10);
    CHECK(0.01 > std::pow(10.0, -3.1));

    const ConditionReport b2 = validate_condition_B(RwreSiteLaw::from_map({{1, 0.4}, {-1, 0.6}}), 0.5, 1.0, 0.1);
    REQUIRE(b2.violations.size() == 1);
    CHECK(b2.violations[0].rule.find("B2") != std::string::npos);
}

TEST_CASE("power tails fold the remainder onto plus and minus J") {
    const double a = 0.01, s = 4.0;
    const int from = 2, J = 6;
    double one_side = 0.0;
    for (int j = from; j < 2000000; ++j) one_side += a * std::pow(j, -s);
    double beyond = 0.0;
    for (int j = J + 1; j < 2000000; ++j) beyond += a * std::pow(j, -s);
    const RwreSiteLaw law = RwreSiteLaw::with_power_tail({{1, 0.7}, {-1, 0.3 - 2.0 * one_side}}, a, s, from, J, 1.0, 0.1);
    double total = 0.0;
    for (double p : law.probs) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(law.min_offset() == -J);
    CHECK(law.max_offset() == J);
    CHECK(law.folded_right == doctest::Approx(beyond).epsilon(1e-9));
    CHECK(law.prob(J) == doctest::Approx(a * std::pow(J, -s) + beyond).epsilon(1e-12));
    CHECK(law.unfolded_prob(J) == doctest::Approx(a * std::pow(J, -s)).epsilon(1e-12));
    CHECK(law.prob(3) == doctest::Approx(a * std::pow(3, -s)).epsilon(1e-12));
    // Symmetric tail: drift comes from the core only.
    CHECK(law.drift() == doctest::Approx(0.7 - (0.3 - 2.0 * one_side)).epsilon(1e-12));
}

TEST_CASE("default truncation radius meets the folding error target") {
    const int J = default_truncation_radius(1.0, 0.5, 1 << 30);
    auto err = [](int j) { return 2.0 * std::pow(j, -1.5) / 1.5; };
    CHECK(err(J) < 1e-9);
    CHECK(err(J - 1) >= 1e-9);
    CHECK(default_truncation_radius(1.0, 0.1) == 4096);
}

TEST_CASE("law sampling inverts the cdf") {
    const RwreSiteLaw law = RwreSiteLaw::from_map({{-2, 0.25}, {-1, 0.25}, {0, 0.0}, {1, 0.5}});
    CHECK(law.sample(0.0) == -2);
    CHECK(law.sample(0.2499) == -2);
    CHECK(law.sample(0.25) == -1);
    CHECK(law.sample(0.5) == 1);
    CHECK(law.sample(0.999999) == 1);
    CHECK(law.drift() == doctest::Approx(-0.25));
}

TEST_CASE("embedded jump probabilities") {
    const EmbeddedProbs e = embedded_jump_probs(SiteRates::from_tuple({1, 1, 1, 2}, 2, 2));
    CHECK(e.p[0] == doctest::Approx(0.2));
    CHECK(e.p[1] == doctest::Approx(0.4));
    CHECK(e.q[0] == doctest::Approx(0.2));
    CHECK(e.q[1] == doctest::Approx(0.2));
    const EmbeddedProbs f = embedded_jump_probs(SiteRates::from_tuple({0, 1, 1, 0}, 2, 2));
    CHECK(f.p == std::vector<double>{0.5, 0.0});
    CHECK(f.q == std::vector<double>{0.5, 0.0});
    CHECK_THROWS_AS(embedded_jump_probs(SiteRates::from_tuple({0, 0, 0, 0}, 2, 2)), DegenerateSiteError);

    const Environment env = sample_environment(bdp_uniform_iid(0.01, 50.0), 4, -500, 500);
    for (long x = -500; x <= 500; ++x) {
        const EmbeddedProbs g = embedded_jump_probs(env.rates(x));
        double s = 0.0;
        for (double v : g.p) s += v;
        for (double v : g.q) s += v;
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("condition C bounds give the kappa, K bracket on 1/q") {
    const double eps = 0.5, M = 3.0;
    const Environment env = sample_environment(bdp_uniform_iid(0.51, 2.99), 9, -200, 200);
    REQUIRE(validate_condition_C(env, eps, M, -200, 200).passed());
    for (long x = -200; x <= 200; ++x) {
        const double inv = 1.0 / env.rates(x).total_rate();
        CHECK(inv > 1.0 / (4 * M));
        CHECK(inv < 1.0 / (4 * eps));
    }
}

TEST_CASE("non-explosion partial sums") {
    const Environment h(bdp_homogeneous({1, 1, 1, 2}), 0);
    const DivergenceReport r = check_nonexplosion(h, 100);
    CHECK(r.right_partial_sums.back() == doctest::Approx(20.0));
    CHECK(r.left_partial_sums.back() == doctest::Approx(20.0));
    CHECK(r.divergence_consistent);
    CHECK(r.verdict == "divergence consistent");

    const double M = 3.0;
    const Environment b = sample_environment(bdp_uniform_iid(0.5, M), 1, -3000, 3000);
    const DivergenceReport rb = check_nonexplosion(b, 1000);
    CHECK(rb.right_partial_sums.back() >= 1000.0 / (4 * M));
    CHECK(rb.left_partial_sums.back() >= 1000.0 / (4 * M));
    CHECK(rb.divergence_consistent);

    // Rates growing like x^2: the series converge.
    EnvSpec g;
    g.model = Model::bdp;
    g.mode = Mode::table;
    g.L = g.R = 1;
    const long N = 1000;
    g.table_origin = -N - 1;
    for (long x = -N - 1; x <= N + 1; ++x) {
        const double v = 1.0 + static_cast<double>(x * x);
        g.rate_sites.push_back(SiteRates::from_tuple({v, v}, 1, 1));
    }
    const DivergenceReport rg = check_nonexplosion(Environment(g, 0), static_cast<int>(N));
    double oracle = 0.0;
    for (long n = 1; n <= N; ++n) oracle += 1.0 / (2.0 * (1.0 + static_cast<double>((n - 1) * (n - 1))));
    CHECK(rg.right_partial_sums.back() == doctest::Approx(oracle).epsilon(1e-12));
    CHECK_FALSE(rg.divergence_consistent);
    CHECK(rg.verdict == "divergence NOT observed");
}

TEST_CASE("csv round trip is exact") {
    const Environment env = sample_environment(bdp_uniform_iid(0.5, 3.0), 13, -10, 10);
    const std::string csv = environment_to_csv(env, -10, 10);
    CHECK(csv.rfind("site_index,mu_2,mu_1,lambda_1,lambda_2\n", 0) == 0);
    const Environment back = environment_from_csv(csv, Model::bdp, 2, 2);
    CHECK(back.spec().mode == Mode::table);
    for (long x = -10; x <= 10; ++x) CHECK(back.rates(x) == env.rates(x));
    CHECK_THROWS_AS((void)back.rates(11), WindowExhaustedError);

    EnvSpec r = rwre_homogeneous({{1, 0.7}, {-1, 0.2}, {-3, 0.1}});
    const Environment rw(r, 0);
    const std::string rcsv = environment_to_csv(rw, 0, 3);
    const Environment rback = environment_from_csv(rcsv, Model::rwre, 1, 1);
    for (long x = 0; x <= 3; ++x) CHECK(rback.law(x) == rw.law(x));

    CHECK_THROWS_AS(environment_from_csv("site_index,mu_1,lambda_1\n0,1,1\n2,1,1\n", Model::bdp, 1, 1), ConfigError);
    CHECK_THROWS_AS(environment_from_csv("site_index,mu_1,lambda_1\n0,1,x\n", Model::bdp, 1, 1), ConfigError);
}
