#include "ergwalk/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ergwalk {

void CompensatedSum::add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
        comp_ += (sum_ - t) + x;
    } else {
        comp_ += (x - t) + sum_;
    }
    sum_ = t;
}

MeanSe mean_se(std::span<const double> xs) {
    MeanSe out;
    out.n = xs.size();
    if (xs.empty()) return out;
    CompensatedSum s;
    for (double x : xs) s.add(x);
    out.mean = s.value() / static_cast<double>(xs.size());
    if (xs.size() < 2) return out;
    CompensatedSum ss;
    for (double x : xs) ss.add((x - out.mean) * (x - out.mean));
    const double var = ss.value() / static_cast<double>(xs.size() - 1);
    out.se = std::sqrt(var / static_cast<double>(xs.size()));
    return out;
}

MeanSe batch_means(std::span<const double> xs, std::size_t batches) {
    if (batches == 0) throw std::invalid_argument("batch_means: zero batches");
    if (xs.size() < batches) return mean_se(xs);
    const std::size_t per = xs.size() / batches;
    std::vector<double> means;
    means.reserve(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        CompensatedSum s;
        const std::size_t end = (b + 1 == batches) ? xs.size() : (b + 1) * per;
        for (std::size_t i = b * per; i < end; ++i) s.add(xs[i]);
        means.push_back(s.value() / static_cast<double>(end - b * per));
    }
    MeanSe out = mean_se(means);
    CompensatedSum all;
    for (double x : xs) all.add(x);
    out.mean = all.value() / static_cast<double>(xs.size());
    out.n = xs.size();
    return out;
}

MeanSe ratio_of_means(std::span<const double> num, std::span<const double> den) {
    if (num.size() != den.size() || num.empty()) {
        throw std::invalid_argument("ratio_of_means: size mismatch");
    }
    const MeanSe a = mean_se(num);
    const MeanSe b = mean_se(den);
    MeanSe out;
    out.n = num.size();
    out.mean = a.mean / b.mean;
    if (num.size() < 2) return out;
    std::vector<double> resid(num.size());
    for (std::size_t i = 0; i < num.size(); ++i) resid[i] = num[i] - out.mean * den[i];
    out.se = mean_se(resid).se / std::abs(b.mean);
    return out;
}

double regression_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

double separation_in_se(const MeanSe& a, const MeanSe& b) {
    const double diff = std::abs(a.mean - b.mean);
    const double se = std::sqrt(a.se * a.se + b.se * b.se);
    if (se == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return diff / se;
}

}  // namespace ergwalk
