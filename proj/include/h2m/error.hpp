#pragma once

#include <stdexcept>
#include <string>

namespace h2m {

// Violated precondition of an operation (bad arguments, wrong call order).
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

// Shape disagreement between operands.
class DimensionError : public ContractError {
   public:
    using ContractError::ContractError;
};

// Object used in a state that does not permit the call (e.g. untrained codec).
class StateError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Bad user input: config files, CLI flags, missing artifacts.
class ValidationError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace h2m
