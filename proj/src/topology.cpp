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

#include "lmdfl/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lmdfl/errors.hpp"

namespace lmdfl::topology {

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::kRing: return "ring";
    case TopologyKind::kComplete: return "complete";
    case TopologyKind::kDisconnected: return "disconnected";
    case TopologyKind::kCustom: return "custom";
  }
  return "unknown";
}

TopologyKind topology_from_string(const std::string& name) {
  if (name == "ring") return TopologyKind::kRing;
  if (name == "complete") return TopologyKind::kComplete;
  if (name == "disconnected") return TopologyKind::kDisconnected;
  if (name == "custom") return TopologyKind::kCustom;
  throw InvalidInput("unknown topology '" + name +
                     "' (expected ring, complete, disconnected, custom)");
}

MixingMatrix::MixingMatrix(Eigen::MatrixXd entries, bool disconnected_warning)
    : c_(std::move(entries)), zeta_(0.0), warning_(disconnected_warning) {
  const auto v = validate_doubly_stochastic(c_);
  if (!v.ok()) {
    throw InvalidInput("mixing matrix is not doubly stochastic: " +
                       v.describe());
  }
  zeta_ = topology::zeta(c_);
  neighbors_.resize(static_cast<std::size_t>(n()));
  for (int i = 0; i < n(); ++i) {
    for (int j = 0; j < n(); ++j) {
      if (j != i && c_(j, i) != 0.0) neighbors_[i].push_back(j);
    }
  }
}

Eigen::MatrixXd metropolis_hastings(int n, const std::vector<Edge>& edges) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw InvalidInput("edge (" + std::to_string(a) + "," +
                         std::to_string(b) + ") out of range");
    }
    if (a == b) continue;
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : adj[i]) {
      const auto deg = std::max(adj[i].size(), adj[j].size());
      c(i, j) = 1.0 / (1.0 + static_cast<double>(deg));
    }
  }
  for (int i = 0; i < n; ++i) c(i, i) = 1.0 - (c.row(i).sum() - c(i, i));
  return c;
}

bool is_connected(int n, const std::vector<Edge>& edges) {
  if (n <= 1) return true;
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int components = n;
  for (const auto& [a, b] : edges) {
    const int ra = find(a);
    const int rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  return components == 1;
}

MixingMatrix build_mixing(TopologyKind kind, int n,
                          const BuildOptions& options) {
  if (n < 2) throw InvalidInput("build_mixing: n must be >= 2");
  switch (kind) {
    case TopologyKind::kComplete:
      return MixingMatrix(Eigen::MatrixXd::Constant(n, n, 1.0 / n));
    case TopologyKind::kDisconnected:
      return MixingMatrix(Eigen::MatrixXd::Identity(n, n));
    case TopologyKind::kRing: {
      const double w = options.ring_self_weight;
      if (!(w > 0.0 && w < 1.0)) {
        throw InvalidInput("build_mixing: ring self weight must be in (0,1)");
      }
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        c(i, i) = w;
        // n == 2: both neighbours coincide and their weights add up.
        c(i, (i + 1) % n) += 0.5 * (1.0 - w);
        c(i, (i + n - 1) % n) += 0.5 * (1.0 - w);
      }
      return MixingMatrix(std::move(c));
    }
    case TopologyKind::kCustom: {
      const bool connected = is_connected(n, options.edges);
      return MixingMatrix(metropolis_hastings(n, options.edges), !connected);
    }
  }
  throw InvalidInput("build_mixing: unknown topology");
}

std::string Validation::describe() const {
  std::ostringstream os;
  os << "row_sum=" << row_sum_violation << (rows_ok ? "" : " (FAIL)")
     << " col_sum=" << col_sum_violation << (cols_ok ? "" : " (FAIL)")
     << " symmetry=" << symmetry_violation << (symmetric ? "" : " (FAIL)")
     << " negativity=" << negativity_violation
     << (nonnegative ? "" : " (FAIL)");
  return os.str();
}

Validation validate_doubly_stochastic(const Eigen::MatrixXd& c) {
  if (c.rows() != c.cols() || c.rows() == 0) {
    throw InvalidInput("validate_doubly_stochastic: matrix must be square");
  }
  Validation v;
  v.row_sum_violation = (c.rowwise().sum().array() - 1.0).abs().maxCoeff();
  v.col_sum_violation = (c.colwise().sum().array() - 1.0).abs().maxCoeff();
  v.symmetry_violation = (c - c.transpose()).cwiseAbs().maxCoeff();
  v.negativity_violation = std::max(0.0, -c.minCoeff());
  v.rows_ok = v.row_sum_violation <= kSumTolerance;
  v.cols_ok = v.col_sum_violation <= kSumTolerance;
  v.symmetric = v.symmetry_violation <= kSymmetryTolerance;
  v.nonnegative = v.negativity_violation == 0.0;
  return v;
}

double zeta(const Eigen::MatrixXd& c) {
  const auto n = c.rows();
  const Eigen::MatrixXd centered =
      c - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  // Symmetrize away sub-tolerance asymmetry before the symmetric solver.
  const Eigen::MatrixXd sym = 0.5 * (centered + centered.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      sym, Eigen::EigenvaluesOnly);
  const double z = solver.eigenvalues().cwiseAbs().maxCoeff();
  return std::clamp(z, 0.0, 1.0);
}

std::vector<Edge> parse_edge_list(const std::string& text) {
  std::vector<Edge> edges;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long long a = -1;
    long long b = -1;
    std::string extra;
    if (!(ls >> a >> b) || (ls >> extra) || a < 0 || b < 0) {
      throw FormatError("edge list line " + std::to_string(lineno) +
                        ": expected two non-negative node ids, got '" + line +
                        "'");
    }
    edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
  }
  return edges;
}

std::vector<Edge> read_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open edge list '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_edge_list(ss.str());
}

int node_count(const std::vector<Edge>& edges) {
  int n = 0;
  for (const auto& [a, b] : edges) n = std::max({n, a + 1, b + 1});
  return n;
}

}  // namespace lmdfl::topology
