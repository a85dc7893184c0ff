#pragma once

#include <stdexcept>
#include <string>

namespace tridyson {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid sizes, ranges or flags supplied by the caller.
class ParameterError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DegenerateSpectrumError : public Error {
public:
    using Error::Error;
};

class ConditioningError : public Error {
public:
    using Error::Error;
};

class ConfluentInputError : public Error {
public:
    using Error::Error;
};

class StiffnessError : public Error {
public:
    StiffnessError(const std::string& what, std::string dump)
        : Error(what), dump_(std::move(dump)) {}
    const std::string& state_dump() const noexcept { return dump_; }

private:
    std::string dump_;
};

class ContourError : public Error {
public:
    using Error::Error;
};

class ResolutionError : public Error {
public:
    using Error::Error;
};

class PoleError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace tridyson
