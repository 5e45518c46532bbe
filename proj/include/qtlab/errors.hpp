/* Copyright 2026 The qtlab Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace qtlab {

/// Base class for all recoverable qtlab errors. The CLI maps these to exit
/// code 1; anything else escaping main is a bug.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

/// Tensor shapes do not line up (matmul inner dims, batch vs config, ...).
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string &msg) : Error(msg) {}
};

/// An argument is outside its mathematical domain (empty tensor, p not in
/// [0,1], alpha not in [0,1], non-positive range, ...).
class DomainError : public Error {
public:
    explicit DomainError(const std::string &msg) : Error(msg) {}
};

/// Input data is malformed (non-finite values, truncated tensor files).
class DataError : public Error {
public:
    explicit DataError(const std::string &msg) : Error(msg) {}
};

/// A configuration references things that do not exist or is inconsistent
/// (missing quant spec for a weight, unknown site id, bad schedule name).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string &msg) : Error(msg) {}
};

/// An operation was invoked before its prerequisites (e.g. a report on an
/// uncalibrated model).
class StateError : public Error {
public:
    explicit StateError(const std::string &msg) : Error(msg) {}
};

/// The input is technically valid but degenerate for the requested
/// computation (zero-range stats, zero-variance activations).
class DegenerateError : public Error {
public:
    explicit DegenerateError(const std::string &msg) : Error(msg) {}
};

} // namespace qtlab
