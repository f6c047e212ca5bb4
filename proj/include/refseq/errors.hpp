/*
 * Copyright 2026 The refseq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
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

namespace refseq {

// Shape or argument mismatch in a numeric op; message names the op and shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A forward op produced NaN/Inf, or backward was called on an invalid loss.
class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

// Token stream does not parse under the expected grammar. Carries the byte
// or token offset of the first offending element.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long offset)
      : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  long offset() const { return offset_; }

 private:
  long offset_;
};

// A value fell outside its documented domain (coordinates, bins, counts).
class RangeError : public std::runtime_error {
 public:
  explicit RangeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input sequence longer than the configured maximum; never truncated silently.
class TruncationError : public std::runtime_error {
 public:
  explicit TruncationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training loss became non-finite; carries the step at which it happened.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& msg, long step)
      : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Predictions and annotations disagree on which records exist.
class DataMismatchError : public std::runtime_error {
 public:
  explicit DataMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required earlier pipeline stage has not produced its artifact yet.
class DependencyError : public std::runtime_error {
 public:
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace refseq
