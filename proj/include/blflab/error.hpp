#pragma once

#include <stdexcept>
#include <string>

namespace blflab {

// Precondition violation on numeric inputs (non-finite values, bad shapes,
// out-of-range hyperparameters).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Malformed external data (IDX files, checkpoints, configs).
class ParseError : public std::runtime_error {
public:
    enum class Kind { BadMagic, Truncated, CountMismatch, Io, Schema };

    ParseError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace blflab
