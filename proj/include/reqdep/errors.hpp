#pragma once

#include <stdexcept>
#include <string>

namespace reqdep {

/// Base of every error the library raises. The CLI maps each subclass to an
/// exit code (see tools/reqdep_cli.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: a row that does not parse, an unknown label string.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Inputs parse but contradict each other (duplicate ids, dangling references).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// A node, id or record was not found.
class LookupError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or parameter combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A precondition on argument values was violated.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// The model endpoint could not be reached within the retry budget.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Similarity is undefined (zero-norm vector).
class UndefinedSimilarity : public Error {
public:
    using Error::Error;
};

}  // namespace reqdep
