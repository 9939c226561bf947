#pragma once

#include <stdexcept>
#include <string>

namespace mtlmm {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension or shape mismatch between inputs.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Invalid value in an input (precondition violation, schema violation).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// A covariance matrix that must be invertible is numerically singular.
class SingularMatrixError : public Error {
public:
    explicit SingularMatrixError(const std::string& msg) : Error(msg) {}
};

/// A group label was requested that is not present in the fitted model.
class MissingGroupError : public Error {
public:
    explicit MissingGroupError(const std::string& msg) : Error(msg) {}
};

/// A numeric computation produced a non-finite or undefined result.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

/// File or stream I/O failure.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace mtlmm
