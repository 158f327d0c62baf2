// Copyright 2026 The ftis Authors
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

#ifndef FTIS_ERRORS_H_
#define FTIS_ERRORS_H_

#include <stdexcept>
#include <string>

namespace ftis {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model or task dimensions.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Malformed arguments: out-of-range tokens, length mismatches, empty inputs.
class InputError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid run or topology configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Group assembly found a missing, duplicate or unexpected completion slot.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class EncodeError : public Error {
 public:
  using Error::Error;
};

// Carries the name of the offending wire field.
class DecodeError : public Error {
 public:
  DecodeError(std::string field, const std::string& what)
      : Error("decode: " + field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace ftis

#endif  // FTIS_ERRORS_H_
