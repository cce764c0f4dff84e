#pragma once

#include <stdexcept>
#include <string>

namespace ergwalk {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or out-of-bounds configuration; CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// A site whose total jump rate (or probability mass) is zero.
struct DegenerateSiteError : Error {
    using Error::Error;
};

// A walk or a series needed sites outside the materializable window.
struct WindowExhaustedError : Error {
    using Error::Error;
};

// A depth-doubling procedure did not stabilize before its depth cap.
struct TruncationError : Error {
    using Error::Error;
};

// A series that must converge did not decay before its cap; CLI exit code 4.
struct DivergenceError : Error {
    using Error::Error;
};

// Companion/transfer matrices need mu^L > 0.
struct SingularNormalizationError : Error {
    using Error::Error;
};

// 1 - q^1 f - q^2 f <= 0 in a branching coefficient denominator.
struct InfeasibleCoefficientError : Error {
    using Error::Error;
};

// More events than the guard allows in a simulated path.
struct ExplosionError : Error {
    using Error::Error;
};

}  // namespace ergwalk
