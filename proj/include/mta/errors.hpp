#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mta {

// Every failure the library can raise maps onto a small process status code
// so the C surface and the CLI agree on exit semantics:
//   2  bad parameters, shapes, indices or call ordering
//   3  bad data: corrupt/missing files, contaminated splits, malformed corpora
//   4  numerical divergence during training
//   1  anything else (internal bug)
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual int status() const noexcept { return 1; }
};

class ParameterError : public Error {
public:
    using Error::Error;
    int status() const noexcept override { return 2; }
};

class ShapeError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

class IndexError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

// call made in the wrong pipeline state, e.g. training against an unfrozen
// base or materializing into an already frozen model
class StateError : public ParameterError {
public:
    using ParameterError::ParameterError;
};

class DataError : public Error {
public:
    using Error::Error;
    int status() const noexcept override { return 3; }
};

// anchor users leaking into a test split
class ContaminationError : public DataError {
public:
    using DataError::DataError;
};

class MissingFileError : public DataError {
public:
    using DataError::DataError;
};

// on-disk artifact carries a format version this build does not understand
class FormatVersionError : public DataError {
public:
    using DataError::DataError;
};

// payload does not match its declared shape (truncated or corrupted record)
class IntegrityError : public DataError {
public:
    using DataError::DataError;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& msg, std::size_t step)
        : Error(msg), step_(step) {}
    int status() const noexcept override { return 4; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace mta
