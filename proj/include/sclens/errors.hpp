#pragma once

#include "sclens/util.hpp"

namespace sclens {

// geometry / geodesic flow
struct LeftDomain : Error {
    using Error::Error;
};
struct StepTooLarge : Error {
    using Error::Error;
};
struct EmptyInput : Error {
    using Error::Error;
};
struct InsufficientSamples : Error {
    using Error::Error;
};

// phase space
struct Unresolvable : Error {
    using Error::Error;
};
struct NotExited : Error {
    using Error::Error;
};

// propagation
struct SolverDiverged : NumericalError {
    using NumericalError::NumericalError;
};
struct Blowup : NumericalError {
    using NumericalError::NumericalError;
};
struct NotContracting : NumericalError {
    using NumericalError::NumericalError;
};
struct BoundaryContaminated : NumericalError {
    using NumericalError::NumericalError;
};

// analysis
struct TooFewSlices : Error {
    using Error::Error;
};
struct NonPositiveValue : Error {
    using Error::Error;
};
struct TooFewPoints : Error {
    using Error::Error;
};
struct StallDetected : Error {
    using Error::Error;
};

}  // namespace sclens
