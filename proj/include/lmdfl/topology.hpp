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

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lmdfl::topology {

enum class TopologyKind { kRing, kComplete, kDisconnected, kCustom };

std::string to_string(TopologyKind kind);
TopologyKind topology_from_string(const std::string& name);

using Edge = std::pair<int, int>;

// Symmetric doubly stochastic mixing matrix C with its cached spectral
// quantity zeta = max(|lambda_2|, |lambda_N|).
class MixingMatrix {
 public:
  MixingMatrix(Eigen::MatrixXd entries, bool disconnected_warning = false);

  const Eigen::MatrixXd& entries() const noexcept { return c_; }
  int n() const noexcept { return static_cast<int>(c_.rows()); }
  double zeta() const noexcept { return zeta_; }
  double weight(int from, int to) const { return c_(from, to); }
  // Nodes j != i with c_ji != 0.
  const std::vector<int>& neighbors(int i) const { return neighbors_[i]; }
  // Set when a custom graph was not connected (zeta == 1).
  bool disconnected_warning() const noexcept { return warning_; }

 private:
  Eigen::MatrixXd c_;
  double zeta_;
  std::vector<std::vector<int>> neighbors_;
  bool warning_;
};

struct BuildOptions {
  double ring_self_weight = 1.0 / 3.0;
  std::vector<Edge> edges;  // custom only
};

MixingMatrix build_mixing(TopologyKind kind, int n,
                          const BuildOptions& options = {});

// Metropolis-Hastings weights c_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
// diagonal residual.
Eigen::MatrixXd metropolis_hastings(int n, const std::vector<Edge>& edges);

struct Validation {
  double row_sum_violation = 0.0;
  double col_sum_violation = 0.0;
  double symmetry_violation = 0.0;
  double negativity_violation = 0.0;
  bool rows_ok = false;
  bool cols_ok = false;
  bool symmetric = false;
  bool nonnegative = false;

  bool ok() const noexcept { return rows_ok && cols_ok && symmetric && nonnegative; }
  std::string describe() const;
};

inline constexpr double kSumTolerance = 1e-10;
inline constexpr double kSymmetryTolerance = 1e-12;

Validation validate_doubly_stochastic(const Eigen::MatrixXd& c);

// Largest absolute eigenvalue of C - J, clamped to [0, 1].
double zeta(const Eigen::MatrixXd& c);

bool is_connected(int n, const std::vector<Edge>& edges);

// "i j" per line, zero-based; blank lines and '#' comments ignored.
std::vector<Edge> read_edge_list(const std::string& path);
std::vector<Edge> parse_edge_list(const std::string& text);
int node_count(const std::vector<Edge>& edges);

}  // namespace lmdfl::topology
