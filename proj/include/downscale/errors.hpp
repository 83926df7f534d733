#pragma once

#include <stdexcept>
#include <string>

namespace downscale {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/grid dimension violations (non-divisible axes, rank mismatches, ...).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

/// Invalid configuration values (flags, ArchitectureSpec, TrainingConfig).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

/// Malformed files (bad magic, truncated payload, missing sidecar, bad JSON).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error("parse error: " + msg) {}
};

/// Invalid normalization statistics (std <= 0, zero variance).
class StatsError : public Error {
public:
    explicit StatsError(const std::string& msg) : Error("invalid stats: " + msg) {}
};

/// Undefined metric (zero target variance).
class MetricError : public Error {
public:
    explicit MetricError(const std::string& msg) : Error("undefined metric: " + msg) {}
};

/// Region bounds violations in extraction.
class BoundsError : public Error {
public:
    explicit BoundsError(const std::string& msg) : Error("bounds error: " + msg) {}
};

/// Train/eval leakage detected by a protocol guard.
class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& msg) : Error("protocol error: " + msg) {}
};

/// Filesystem failures (missing checkpoint, unwritable output dir).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

} // namespace downscale
