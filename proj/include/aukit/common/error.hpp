// Copyright (c) 2026 aukit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace aukit {

/// Base class for all toolkit errors. Subclasses encode the failure
/// domain so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape disagreement; message names both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Out-of-range index (vocab ids, target indices, expert ids).
class IndexError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A corpus record lacks a payload the requested task needs.
class DataError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation's contract (empty mask, bad state).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Network-level failure after retries were exhausted.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Authentication rejected by the remote endpoint; never retried.
class AuthError : public Error {
public:
    using Error::Error;
};

/// Response arrived but could not be decoded against the pinned schema.
class MalformedResponseError : public Error {
public:
    using Error::Error;
};

/// Structured output (JSON reply, file format) failed validation.
class SchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace aukit
