// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ats {

/// Operand extents do not agree (matmul inner dims, weight shapes, ...).
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller broke a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Arithmetic produced NaN/Inf from finite inputs, or a gradient went non-finite.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk artifact.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ats
