// Copyright 2026 The GPMSeg Authors.
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

#ifndef GPMSEG_ERRORS_H_
#define GPMSEG_ERRORS_H_

#include <stdexcept>
#include <string>

namespace gpmseg {

// Base class for every error raised by the library. Callers that only need
// to distinguish "ours" from "torch's" can catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape, rank, channel or argument contract violated by the caller.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents are readable but semantically wrong (NaN depth, missing
// manifest entry, non-binary mask, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Unknown or malformed configuration key/value.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Checkpoint archive is corrupt or carries an unsupported format version.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A metric has no defined value for the given input (e.g. empty mask).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// The complexity tracer met a layer it has no cost formula for.
class UnsupportedLayerError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpmseg

#endif  // GPMSEG_ERRORS_H_
