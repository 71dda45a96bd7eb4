//
// Copyright 2026 The dpfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef DPFED_ERRORS_HPP_
#define DPFED_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dpfed {

// Base class for every error raised by the library. Callers that only care
// about "something went wrong" catch this; tests match the concrete kinds.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters or settings (bad architecture, S <= 0, empty grid, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Mismatched vector or matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Wrong magic number or otherwise malformed file layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input ended before the declared payload was read.
class TruncationError : public Error {
 public:
  using Error::Error;
};

// Well-formed file carrying values outside the allowed domain.
class DataError : public Error {
 public:
  using Error::Error;
};

// Aggregation invoked in a state the protocol does not allow.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Non-finite intermediate in a numerical routine.
class OverflowError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpfed

#endif  // DPFED_ERRORS_HPP_
