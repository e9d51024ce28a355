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

#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"

#include "lmdfl/errors.hpp"
#include "lmdfl/random.hpp"
#include "lmdfl/topology.hpp"

using namespace lmdfl;
using namespace lmdfl::topology;

namespace {

// Circulant ring eigenvalues: w + (1 - w) cos(2 pi k / n).
double ring_zeta_closed_form(int n, double w) {
  double best = 0.0;
  for (int k = 1; k < n; ++k) {
    best = std::max(best, std::abs(w + (1.0 - w) * std::cos(2.0 * std::numbers::pi * k / n)));
  }
  return best;
}

Eigen::MatrixXd averaging(int n) {
  return Eigen::MatrixXd::Constant(n, n, 1.0 / n);
}

}  // namespace

TEST_CASE("complete graph") {
  const auto m = build_mixing(TopologyKind::kComplete, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(m.entries()(i, j) == 0.25);
  }
  CHECK(m.zeta() == 0.0);
  CHECK(m.neighbors(0).size() == 3);
}

TEST_CASE("disconnected graph") {
  const auto m = build_mixing(TopologyKind::kDisconnected, 5);
  CHECK(m.entries().isIdentity(0.0));
  CHECK(m.zeta() == 1.0);
  CHECK(m.neighbors(2).empty());
}

TEST_CASE("ring matches the circulant closed form") {
  const auto m = build_mixing(TopologyKind::kRing, 10);
  CHECK(m.zeta() == doctest::Approx((1.0 + 2.0 * std::cos(std::numbers::pi / 5.0)) / 3.0).epsilon(1e-12));
  CHECK(std::abs(m.zeta() - 0.8727) < 1e-4);
  for (int n : {3, 4, 7, 12, 25}) {
    for (double w : {0.2, 1.0 / 3.0, 0.5, 0.8}) {
      BuildOptions o;
      o.ring_self_weight = w;
      const auto r = build_mixing(TopologyKind::kRing, n, o);
      CAPTURE(n);
      CAPTURE(w);
      CHECK(r.zeta() == doctest::Approx(ring_zeta_closed_form(n, w)).epsilon(1e-10));
      CHECK(validate_doubly_stochastic(r.entries()).ok());
    }
  }
  // Two nodes: both neighbours coincide.
  const auto two = build_mixing(TopologyKind::kRing, 2);
  CHECK(validate_doubly_stochastic(two.entries()).ok());
  CHECK(two.entries()(0, 1) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("build_mixing rejects bad arguments") {
  CHECK_THROWS_AS(build_mixing(TopologyKind::kRing, 1), InvalidInput);
  BuildOptions o;
  o.ring_self_weight = 1.0;
  CHECK_THROWS_AS(build_mixing(TopologyKind::kRing, 5, o), InvalidInput);
  BuildOptions loop;
  loop.edges = {{0, 0}};
  // Self-loops carry no exchange and are ignored.
  CHECK(build_mixing(TopologyKind::kCustom, 2, loop).disconnected_warning());
  BuildOptions out_of_range;
  out_of_range.edges = {{0, 7}};
  CHECK_THROWS_AS(build_mixing(TopologyKind::kCustom, 3, out_of_range), InvalidInput);
}

TEST_CASE("Metropolis-Hastings weights on a star") {
  BuildOptions o;
  o.edges = {{0, 1}, {0, 2}, {0, 3}};
  const auto m = build_mixing(TopologyKind::kCustom, 4, o);
  // deg(0) = 3, leaves deg 1: off-diagonal 1 / (1 + 3) = 0.25.
  CHECK(m.entries()(0, 1) == 0.25);
  CHECK(m.entries()(1, 0) == 0.25);
  CHECK(m.entries()(0, 0) == doctest::Approx(0.25));
  CHECK(m.entries()(1, 1) == doctest::Approx(0.75));
  CHECK(m.entries()(1, 2) == 0.0);
  CHECK(validate_doubly_stochastic(m.entries()).ok());
  CHECK(!m.disconnected_warning());
  CHECK(m.zeta() < 1.0);
}

TEST_CASE("custom graphs are doubly stochastic when connected") {
  Rng rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 15));
    std::vector<Edge> edges;
    // Random spanning tree plus extra edges keeps the graph connected.
    for (int i = 1; i < n; ++i) {
      edges.emplace_back(static_cast<int>(uniform_index(rng, i)), i);
    }
    for (int k = 0; k < n; ++k) {
      const int a = static_cast<int>(uniform_index(rng, n));
      const int b = static_cast<int>(uniform_index(rng, n));
      if (a != b) edges.emplace_back(a, b);
    }
    REQUIRE(is_connected(n, edges));
    BuildOptions o;
    o.edges = edges;
    const auto m = build_mixing(TopologyKind::kCustom, n, o);
    const auto v = validate_doubly_stochastic(m.entries());
    CHECK(v.ok());
    CHECK(m.zeta() >= 0.0);
    CHECK(m.zeta() < 1.0);
    CHECK(!m.disconnected_warning());
  }
}

TEST_CASE("disconnected custom graph raises the warning flag") {
  BuildOptions o;
  o.edges = {{0, 1}, {2, 3}};
  const auto m = build_mixing(TopologyKind::kCustom, 4, o);
  CHECK(m.disconnected_warning());
  CHECK(m.zeta() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(!is_connected(4, o.edges));
}

TEST_CASE("validate_doubly_stochastic diagnostics") {
  CHECK(validate_doubly_stochastic(averaging(5)).ok());

  Eigen::MatrixXd row_only(2, 2);
  row_only << 0.5, 0.5, 0.2, 0.8;
  const auto v = validate_doubly_stochastic(row_only);
  CHECK(v.rows_ok);
  CHECK(!v.symmetric);
  CHECK(!v.ok());

  Eigen::MatrixXd bumped = averaging(4);
  bumped(1, 2) += 1e-3;
  const auto b = validate_doubly_stochastic(bumped);
  CHECK(!b.rows_ok);
  CHECK(b.row_sum_violation == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(!b.describe().empty());

  Eigen::MatrixXd neg(2, 2);
  neg << 1.5, -0.5, -0.5, 1.5;
  CHECK(!validate_doubly_stochastic(neg).nonnegative);
  CHECK_THROWS_AS(MixingMatrix{neg}, InvalidInput);
}

TEST_CASE("zeta on direct matrices") {
  CHECK(zeta(averaging(6)) == 0.0);
  CHECK(zeta(Eigen::MatrixXd::Identity(6, 6)) == 1.0);
}

TEST_CASE("consensus contraction is bounded by zeta^k") {
  Rng rng(3);
  std::vector<MixingMatrix> mats{build_mixing(TopologyKind::kRing, 10),
                                 build_mixing(TopologyKind::kComplete, 6)};
  BuildOptions o;
  o.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}, {3, 4}};
  mats.push_back(build_mixing(TopologyKind::kCustom, 5, o));
  for (const auto& m : mats) {
    const int n = m.n();
    Eigen::MatrixXd x(7, n);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * uniform01(rng) - 1.0;
    const Eigen::MatrixXd centre =
        Eigen::MatrixXd::Identity(n, n) - averaging(n);
    const double base = (x * centre).norm();
    Eigen::MatrixXd xc = x;
    for (int k = 1; k <= 20; ++k) {
      xc = xc * m.entries();
      CHECK((xc * centre).norm() <= std::pow(m.zeta(), k) * base * (1.0 + 1e-9) + 1e-12);
    }
  }
}

TEST_CASE("edge list parsing") {
  const auto edges = parse_edge_list("# ring\n0 1\n1 2\n\n2 0  # close\n");
  REQUIRE(edges.size() == 3);
  CHECK(edges[2] == Edge{2, 0});
  CHECK(node_count(edges) == 3);
  CHECK_THROWS_AS(parse_edge_list("0 1\n1 x\n"), FormatError);
  CHECK_THROWS_AS(parse_edge_list("0 1 2\n"), FormatError);
  CHECK_THROWS_AS(parse_edge_list("-1 2\n"), FormatError);
  try {
    parse_edge_list("0 1\n1 x\n");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS(read_edge_list("/nonexistent/edges.txt"));
}

TEST_CASE("topology names round trip") {
  for (auto k : {TopologyKind::kRing, TopologyKind::kComplete,
                 TopologyKind::kDisconnected, TopologyKind::kCustom}) {
    CHECK(topology_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(topology_from_string("mesh"), InvalidInput);
}
