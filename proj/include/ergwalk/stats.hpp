#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ergwalk {

// Neumaier-compensated running sum.
class CompensatedSum {
public:
    void add(double x);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

// Sample mean with standard error sd/sqrt(n); se = 0 when n < 2.
MeanSe mean_se(std::span<const double> xs);

// Splits xs into `batches` contiguous batches and returns the mean of all
// values with the standard error of the batch means.
MeanSe batch_means(std::span<const double> xs, std::size_t batches);

// Ratio of means mean(num)/mean(den) with a delta-method standard error.
MeanSe ratio_of_means(std::span<const double> num, std::span<const double> den);

// Least-squares slope of y on x.
double regression_slope(std::span<const double> x, std::span<const double> y);

// |a - b| / sqrt(se_a^2 + se_b^2); zero separations with zero SE count as 0.
double separation_in_se(const MeanSe& a, const MeanSe& b);

}  // namespace ergwalk
