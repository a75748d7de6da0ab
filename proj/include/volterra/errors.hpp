#pragma once

#include <stdexcept>
#include <string>

namespace volterra {

/// A numerical procedure failed to deliver a trustworthy result. The CLI maps
/// these to exit status 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class QuadratureNonConvergence : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class CovarianceNotPSD : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ConditionHViolated : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Caller violated a documented precondition.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DiagonalSingularity : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class InsufficientSamples : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class GridMismatch : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class NegativeTime : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class SegmentUnderflow : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class StepLargerThanDelay : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class EmptyWindow : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class MissingLipschitzConstant : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

class UnstableSystem : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

/// Invalid or missing configuration field. The message starts with the dotted
/// field path, e.g. "solver.seed: required field is missing".
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace volterra
