#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace astra {

// Base class for all errors thrown by this library.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Dimension or shape mismatch between operands.
class shape_error : public error {
public:
    explicit shape_error(const std::string& what) : error(what) {}
};

// Invalid values: NaN/Inf where finite data is required, out-of-range
// ranks, non-symmetric input to a symmetric routine, and the like.
class value_error : public error {
public:
    explicit value_error(const std::string& what) : error(what) {}
};

// Iterative routine failed to converge within its iteration cap.
class convergence_error : public error {
public:
    explicit convergence_error(const std::string& what) : error(what) {}
};

// File format or filesystem failure.
class io_error : public error {
public:
    explicit io_error(const std::string& what) : error(what) {}
};

// Configuration validation failure; carries every violation at once.
class config_error : public error {
public:
    config_error(const std::string& what, std::vector<std::string> violations)
        : error(what), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    std::vector<std::string> violations_;
};

}  // namespace astra
