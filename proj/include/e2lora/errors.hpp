#pragma once

#include <stdexcept>
#include <string>

namespace e2lora {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: wrong shape, non-finite entries, out-of-range parameter.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An object is in the wrong state for the requested operation.
class StateError : public Error {
public:
    using Error::Error;
};

class RankDeficiencyError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

/// Iterative solver hit its iteration cap. Carries the off-diagonal residual.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int task, int epoch, std::size_t batch)
        : Error(what), task_(task), epoch_(epoch), batch_(batch) {}
    int task() const noexcept { return task_; }
    int epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    int task_;
    int epoch_;
    std::size_t batch_;
};

}  // namespace e2lora
