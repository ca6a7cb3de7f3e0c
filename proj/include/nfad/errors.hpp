#pragma once

#include <stdexcept>
#include <string>

namespace nfad {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Raised when a forward pass produces inf/nan. Carries the name of the
// layer (or graph node) where the value was first seen.
class NonFiniteActivation : public Error {
public:
    explicit NonFiniteActivation(const std::string& layer)
        : Error("non-finite activation in layer '" + layer + "'"), layer_(layer) {}
    const std::string& layer() const { return layer_; }

private:
    std::string layer_;
};

class NonFiniteGradient : public Error {
public:
    explicit NonFiniteGradient(const std::string& layer)
        : Error("non-finite gradient at '" + layer + "'"), layer_(layer) {}
    const std::string& layer() const { return layer_; }

private:
    std::string layer_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class SampleRateError : public Error {
public:
    using Error::Error;
};

class TooShortError : public Error {
public:
    using Error::Error;
};

class DegenerateFilterError : public Error {
public:
    using Error::Error;
};

class EmptyBatchError : public Error {
public:
    using Error::Error;
};

class CalibrationFailed : public Error {
public:
    using Error::Error;
};

class CheckpointVersionError : public Error {
public:
    using Error::Error;
};

class SingleClassError : public Error {
public:
    using Error::Error;
};

class SpecError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace nfad
