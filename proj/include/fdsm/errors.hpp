#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fdsm {

// Invalid hyperparameters or inconsistent experiment settings.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Operand shapes that do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A primitive produced NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::string primitive, const std::string& detail)
        : std::runtime_error("non-finite value produced by primitive '" + primitive + "'" +
                             (detail.empty() ? std::string{} : ": " + detail)),
          primitive_(std::move(primitive)) {}

    const std::string& primitive() const noexcept { return primitive_; }

private:
    std::string primitive_;
};

// Evaluation protocol violations (e.g. a test sample whose class is not a candidate).
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BadMagicError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class VersionMismatchError : public CheckpointError {
public:
    VersionMismatchError(std::uint32_t found, std::uint32_t expected)
        : CheckpointError("checkpoint format version " + std::to_string(found) +
                          " is not supported (expected " + std::to_string(expected) + ")"),
          found_(found) {}

    std::uint32_t found() const noexcept { return found_; }

private:
    std::uint32_t found_;
};

class TruncatedFileError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

} // namespace fdsm
