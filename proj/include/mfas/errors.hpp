#pragma once

#include <stdexcept>
#include <string>

namespace mfas {

// Shape/dimension violations on tensor operations.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Precondition violations (bad arguments, broken call contracts).
struct ContractError : std::invalid_argument {
    explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed or inconsistent files (datasets, models, configs).
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& what) : std::runtime_error(what) {}
};

// Unknown or out-of-range configuration field. Carries the field name.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error("config field '" + field + "': " + what), field_name(field) {}
    std::string field_name;
};

// Metric requested on data where it is undefined (e.g. single-class input).
struct UndefinedMetricError : std::runtime_error {
    explicit UndefinedMetricError(const std::string& what) : std::runtime_error(what) {}
};

// Synthetic data generation failure (e.g. rank-deficient mixing matrix).
struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mfas
