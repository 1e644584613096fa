// Copyright 2026 The HMAN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace hman {

// Root of every error the library raises. The CLI maps subclasses to exit
// codes (config -> 2, format/io -> 3, everything else -> 1).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Temporal arithmetic is inconsistent (T < kernel, bad layer dims, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Batch statistics need at least two rows.
class BatchSizeError : public Error {
 public:
  using Error::Error;
};

// A precondition on the caller was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A non-finite value showed up where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Spans measured in different time units were compared.
class UnitError : public Error {
 public:
  using Error::Error;
};

// Profile, params and features disagree, or a config value is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Failure opening, reading or writing a file.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary container; carries the byte offset of the problem.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

}  // namespace hman
