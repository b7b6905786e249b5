#pragma once

#include <stdexcept>
#include <string>

namespace val {

// Dimension/shape disagreement between tensors or layers.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A precondition of an operation was violated by the caller.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid experiment configuration (bad key, incompatible sizes, ...).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Typed persistence failure for dataset and checkpoint files.
class LoadError : public std::runtime_error {
public:
    enum class Kind { BadMagic, Version, Truncated, Architecture, Io };

    LoadError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

}  // namespace val
