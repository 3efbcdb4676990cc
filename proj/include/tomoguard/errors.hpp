#pragma once

#include <stdexcept>
#include <string>

namespace tomoguard {

// Base for all library errors. The CLI maps ValidationError subtypes to
// exit code 1 and everything else to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct RuntimeFailure : Error {
    using Error::Error;
};

// -- topology ---------------------------------------------------------------
struct CycleDetected : ValidationError {
    using ValidationError::ValidationError;
};
struct DisconnectedNode : ValidationError {
    using ValidationError::ValidationError;
};
struct NonPositiveDelay : ValidationError {
    using ValidationError::ValidationError;
};
struct DuplicateEdge : ValidationError {
    using ValidationError::ValidationError;
};
struct InvariantViolation : ValidationError {
    using ValidationError::ValidationError;
};
struct SpaceTooLarge : ValidationError {
    using ValidationError::ValidationError;
};
struct ParseError : ValidationError {
    using ValidationError::ValidationError;
};

// -- vectors / matrices -----------------------------------------------------
struct DimensionMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct LeafSetMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct NegativeEntry : ValidationError {
    using ValidationError::ValidationError;
};

// -- observation ------------------------------------------------------------
struct NotRealizable : ValidationError {
    using ValidationError::ValidationError;
};

// -- numerics ---------------------------------------------------------------
struct NonFiniteValue : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};
struct ConvergenceFailure : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

// -- neural substrate -------------------------------------------------------
struct ShapeMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct CheckpointError : ValidationError {
    using ValidationError::ValidationError;
};
struct NonFiniteOutput : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

// -- defense ----------------------------------------------------------------
struct LeafCountExceedsDim : ValidationError {
    using ValidationError::ValidationError;
};
struct EmptySpace : ValidationError {
    using ValidationError::ValidationError;
};
struct DivergedObjective : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

// -- attackers --------------------------------------------------------------
struct EmptySupport : ValidationError {
    using ValidationError::ValidationError;
};
struct ChainDiverged : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

// -- theory -----------------------------------------------------------------
struct PremiseViolated : ValidationError {
    using ValidationError::ValidationError;
};
struct InsufficientSamples : ValidationError {
    using ValidationError::ValidationError;
};
struct SpaceTooSmall : ValidationError {
    using ValidationError::ValidationError;
};

// -- baselines --------------------------------------------------------------
struct NoCandidate : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

// -- harness / config -------------------------------------------------------
struct ConfigInvalid : ValidationError {
    using ValidationError::ValidationError;
};
struct IoError : RuntimeFailure {
    using RuntimeFailure::RuntimeFailure;
};

}  // namespace tomoguard
