// Copyright 2026 The LM-DFL Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

#include <stdexcept>
#include <string>

namespace lmdfl {

// Caller passed a value outside an operation's domain (non-finite sample,
// r outside [0,1], dimension mismatch, ...).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A decoded payload references state it cannot have (level index >= s,
// codebook mismatch, truncated buffer).
class CorruptPayload : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed external file (IDX magic, edge list syntax).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two inputs that must agree do not (IDX image/label counts).
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A closed-form bound evaluated outside the region where it is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Message routed to a node that does not track the sender.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int round, const std::string& what)
      : std::runtime_error("diverged in round " + std::to_string(round) +
                           ": " + what),
        round_(round) {}
  int round() const noexcept { return round_; }

 private:
  int round_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lmdfl
