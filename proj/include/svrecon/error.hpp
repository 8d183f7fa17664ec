#ifndef SVRECON_ERROR_HPP
#define SVRECON_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace svrecon {

enum class ErrorKind {
    FileNotFound,
    ParseError,
    EmptyCloud,
    IoError,
    InvalidConfig,
    InsufficientDegree,
    InvalidFrequency,
    DegenerateCell,
    ZeroBasis,
    TooFewPoints,
    MissingNormals,
    EmptyDomain,
    UnnormalizedNormals,
    NotConverged,
    ShapeMismatch,
    EmptyVoxel,
    MissingLabels,
    NoCrossing,
    DegenerateMesh,
    NonWatertight,
    ChecksumMismatch,
};

inline const char* to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyCloud: return "EmptyCloud";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InsufficientDegree: return "InsufficientDegree";
    case ErrorKind::InvalidFrequency: return "InvalidFrequency";
    case ErrorKind::DegenerateCell: return "DegenerateCell";
    case ErrorKind::ZeroBasis: return "ZeroBasis";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::MissingNormals: return "MissingNormals";
    case ErrorKind::EmptyDomain: return "EmptyDomain";
    case ErrorKind::UnnormalizedNormals: return "UnnormalizedNormals";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyVoxel: return "EmptyVoxel";
    case ErrorKind::MissingLabels: return "MissingLabels";
    case ErrorKind::NoCrossing: return "NoCrossing";
    case ErrorKind::DegenerateMesh: return "DegenerateMesh";
    case ErrorKind::NonWatertight: return "NonWatertight";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    }
    return "Unknown";
}

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& reason)
        : Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": " + reason), line_(line)
    {
    }

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Raised by the iterative solver; carries the iterate with the smallest residual seen.
class NotConverged : public Error {
public:
    NotConverged(int iterations, double residual, std::vector<double> best)
        : Error(ErrorKind::NotConverged,
                "after " + std::to_string(iterations) + " iterations, relative residual "
                    + std::to_string(residual)),
          iterations_(iterations), residual_(residual), best_(std::move(best))
    {
    }

    int iterations() const noexcept { return iterations_; }
    double residual() const noexcept { return residual_; }
    const std::vector<double>& best_iterate() const noexcept { return best_; }

private:
    int iterations_;
    double residual_;
    std::vector<double> best_;
};

/// Pipeline failure tagged with the stage that produced it.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause)
        : Error(cause.kind(), "stage=" + stage + ": " + cause.what()), stage_(std::move(stage))
    {
    }

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace svrecon

#endif // SVRECON_ERROR_HPP
