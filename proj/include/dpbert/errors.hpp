// Copyright 2026 The dpbert Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPBERT_ERRORS_HPP_
#define DPBERT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dpbert {

// Root of every error the library raises. Each subclass names one failure
// class so callers (and the CLI exit-code mapping) can tell them apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar argument is outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Shapes or names of tensors do not line up.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A documented precondition on call state was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity appeared. `tensor()` names where it was found.
class NumericError : public Error {
 public:
  NumericError(const std::string& tensor, const std::string& what)
      : Error(what + " (tensor: " + tensor + ")"), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Configuration rejected. `key()` is the dotted path of the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpbert

#endif  // DPBERT_ERRORS_HPP_
