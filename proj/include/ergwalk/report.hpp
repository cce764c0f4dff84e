#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ergwalk {

struct VelocityReport {
    std::string method;
    double velocity = 0.0;
    double se = 0.0;
    int replicas = 0;
    double horizon = 0.0;  // n_steps for discrete time, t_max for continuous time
    std::uint64_t seed = 0;
    long truncations = 0;
    std::string verdict;
    std::vector<double> samples;  // per-replica (or per-draw) values in replica order
};

}  // namespace ergwalk
