#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dash {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bytes that do not decode to a raster image.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// Two different byte strings mapped to the same content hash.
class HashCollisionError : public Error {
public:
    using Error::Error;
};

/// Attempt to write into a stage that the manifest already marks complete.
class StageCompleteError : public Error {
public:
    using Error::Error;
};

/// Stage invoked before one of its upstream stages finished.
class DependencyError : public Error {
public:
    DependencyError(std::string stage, std::string missing)
        : Error("stage '" + stage + "' requires '" + missing + "' to be complete"),
          stage_(std::move(stage)), missing_(std::move(missing)) {}

    const std::string& stage() const noexcept { return stage_; }
    const std::string& missing() const noexcept { return missing_; }

private:
    std::string stage_;
    std::string missing_;
};

/// Invalid or inconsistent configuration (bad thresholds, hash mismatch, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Vector or conditioning dimensions disagree with a declaration.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A record points at a parent that does not exist.
class LineageError : public Error {
public:
    using Error::Error;
};

/// Adapter could not be reached or returned a malformed envelope. Retryable,
/// and never confused with an invalid model answer.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Numbered prompt list did not parse; carries the offending indices.
class ParseError : public Error {
public:
    enum class Kind { missing, duplicate, count };

    ParseError(Kind kind, std::vector<int> indices, const std::string& what)
        : Error(what), kind_(kind), indices_(std::move(indices)) {}

    Kind kind() const noexcept { return kind_; }
    const std::vector<int>& indices() const noexcept { return indices_; }

private:
    Kind kind_;
    std::vector<int> indices_;
};

/// Immutable verdict submitted twice, unknown task, and similar label misuse.
class LabelError : public Error {
public:
    using Error::Error;
};

} // namespace dash
