#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msd {

// Invalid or unknown configuration. `key()` names the offending field (dotted path).
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

// A caller broke a precondition (shape mismatch, index out of range, t = 0 denoise, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A canvas pixel received zero total merge weight.
class CoverageError : public std::runtime_error {
public:
    CoverageError(std::size_t row, std::size_t col)
        : std::runtime_error("zero merge weight at pixel (" + std::to_string(row) + ", " +
                             std::to_string(col) + ")"),
          row_(row), col_(col) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t col() const noexcept { return col_; }

private:
    std::size_t row_;
    std::size_t col_;
};

// Non-finite values appeared in a canvas during sampling.
class NumericalError : public std::runtime_error {
public:
    NumericalError(int level, int timestep, const std::string& what)
        : std::runtime_error("non-finite values at level " + std::to_string(level) + ", timestep " +
                             std::to_string(timestep) + ": " + what),
          level_(level), timestep_(timestep) {}

    int level() const noexcept { return level_; }
    int timestep() const noexcept { return timestep_; }

private:
    int level_;
    int timestep_;
};

}  // namespace msd
