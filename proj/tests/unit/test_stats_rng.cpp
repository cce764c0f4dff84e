#include "doctest.h"

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "ergwalk/parallel.hpp"
#include "ergwalk/rng.hpp"
#include "ergwalk/stats.hpp"

using namespace ergwalk;

TEST_CASE("compensated sum recovers small addends") {
    CompensatedSum s;
    s.add(1e16);
    for (int i = 0; i < 1000; ++i) s.add(1.0);
    s.add(-1e16);
    CHECK(s.value() == 1000.0);
}

TEST_CASE("mean and standard error against hand values") {
    const std::vector<double> xs{1, 2, 3, 4, 5};
    const MeanSe m = mean_se(xs);
    CHECK(m.mean == doctest::Approx(3.0));
    // sd = sqrt(2.5), se = sd / sqrt(5)
    CHECK(m.se == doctest::Approx(std::sqrt(2.5 / 5.0)));
    CHECK(m.n == 5);
    CHECK(mean_se(std::vector<double>{7.0}).se == 0.0);
}

TEST_CASE("batch means use the SE of batch averages") {
    std::vector<double> xs;
    for (int b = 0; b < 4; ++b) {
        for (int k = 0; k < 10; ++k) xs.push_back(static_cast<double>(b));
    }
    const MeanSe m = batch_means(xs, 4);
    CHECK(m.mean == doctest::Approx(1.5));
    CHECK(m.se == doctest::Approx(mean_se(std::vector<double>{0, 1, 2, 3}).se));
}

TEST_CASE("ratio of means is exact for proportional data") {
    const std::vector<double> num{2, 4, 6, 8}, den{1, 2, 3, 4};
    const MeanSe r = ratio_of_means(num, den);
    CHECK(r.mean == doctest::Approx(2.0));
    CHECK(r.se == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("regression slope and SE separation") {
    const std::vector<double> x{0, 1, 2, 3}, y{1, -1, -3, -5};
    CHECK(regression_slope(x, y) == doctest::Approx(-2.0));
    CHECK(separation_in_se({1.0, 0.3, 10}, {1.5, 0.4, 10}) == doctest::Approx(1.0));
    CHECK(separation_in_se({1.0, 0.0, 1}, {1.0, 0.0, 1}) == 0.0);
    CHECK(std::isinf(separation_in_se({1.0, 0.0, 1}, {2.0, 0.0, 1})));
}

TEST_CASE("derived seeds are distinct across streams and indices") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t s : {stream::environment, stream::walk, stream::site, stream::h_grid, stream::env_draw}) {
        for (std::uint64_t i = 0; i < 200; ++i) seen.insert(derive_seed(42, s, i));
    }
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(42, stream::walk, 3) == derive_seed(42, stream::walk, 3));
    CHECK(derive_seed(42, stream::walk, 3) != derive_seed(43, stream::walk, 3));
}

TEST_CASE("uniform and exponential draws have the right first moments") {
    Rng rng(7);
    const int n = 200000;
    double su = 0, se = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        su += u;
        se += rng.exponential(5.0);
    }
    // 5 SE bands: sd(U) = 1/sqrt(12), sd(Exp(5)) = 0.2
    CHECK(std::abs(su / n - 0.5) < 5.0 / std::sqrt(12.0 * n));
    CHECK(std::abs(se / n - 0.2) < 5.0 * 0.2 / std::sqrt(static_cast<double>(n)));
    CHECK(counter_uniform(9, 4) == counter_uniform(9, 4));
}

TEST_CASE("parallel_map keeps index order for any thread count") {
    auto f = [](std::size_t i) { return static_cast<double>(derive_seed(1, 2, i) % 1000); };
    const auto a = parallel_map(257, 1, f);
    const auto b = parallel_map(257, 8, f);
    CHECK(a == b);
    CHECK_THROWS_AS(parallel_map(10, 4, [](std::size_t i) -> int { if (i == 3) throw std::runtime_error("x"); return 0; }),
                    std::runtime_error);
}
