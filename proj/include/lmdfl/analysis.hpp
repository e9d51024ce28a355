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

// Closed-form convergence bounds and constants for quantized decentralized
// SGD with tau local steps. All calculators are pure functions.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmdfl/learning.hpp"
#include "lmdfl/random.hpp"

namespace lmdfl::analysis {

struct BoundInputs {
  double L = 1.0;        // smoothness constant
  double sigma2 = 1.0;   // gradient-estimation variance
  double delta2 = 0.0;   // gradient divergence across nodes
  double N = 10.0;       // node count
  double tau = 4.0;      // local updates per round
  double eta = 0.01;     // learning rate
  double zeta = 0.0;     // mixing spectral value, in [0, 1)
  double omega = 0.0;    // quantizer distortion factor
  double K = 100.0;      // rounds
  double d = 1.0;        // model dimension
  double s = 16.0;       // level count
  double F_gap = 1.0;    // F(u_1) - F_inf
  double B = 1e6;        // total bit budget per directed edge
  double B0 = 0.0;       // bits per communication interval (0: unset)

  void validate() const;
};

// Results above this are reported as +infinity.
inline constexpr double kPoleThreshold = 1e12;

// zeta^2 / (1 - zeta^2) + zeta / (1 - zeta)^2; throws DomainError for
// zeta >= 1 or zeta < 0.
double alpha(double zeta);

// Largest constant learning rate for which the general bound holds.
double qdfl_lr_cap(const BoundInputs& in);

struct Evaluation {
  double value = 0.0;
  // Set when the inputs violate the bound's learning-rate precondition; the
  // value is still evaluated.
  std::vector<std::string> warnings;
};

// 2 F_gap/(eta K tau) + L eta tau sigma^2 (omega + N)/N
//   + (2 alpha + 2/3) L^2 eta^2 sigma^2 tau^2 + delta^2
Evaluation qdfl_convergence_bound(const BoundInputs& in);

// Fixed-rate bound with eta = 1/(L sqrt K), delta = 0, omega = d/(12 s^2):
// 2 L F_gap/(tau sqrt K) + tau sigma^2 d/(12 s^2 N sqrt K) + tau sigma^2/sqrt K
//   + (2 alpha + 2/3) sigma^2 tau^2 / K
double lmdfl_convergence_bound(const BoundInputs& in);

struct BitBudgetBound {
  double A1 = 0.0;
  double A2 = 0.0;
  double A3 = 0.0;
  // A1 log2(2 s) + A2 / s^2 + A3
  double operator()(double s) const;
};

BitBudgetBound thm4_constants_and_bound(const BoundInputs& in);

struct OptimalLevels {
  double A4 = 0.0;     // L eta^2 tau^2 sigma^2 B
  double A5 = 0.0;     // 24 N^2 log2(e)
  double s_star = 0.0;
  // Exact stationary point of the bit-budget bound, s_star * sqrt(N).
  double s_stationary = 0.0;
  // Per-interval optimum using B0 instead of B; NaN when B0 is unset.
  double s_interval = 0.0;
};

// s* = sqrt(A4 / (A5 F_gap)). Throws DomainError for F_gap <= 0.
OptimalLevels optimal_s(const BoundInputs& in);

// s_k for an interval budget B0 and the current gap F(u_k) - F_inf.
double interval_s(const BoundInputs& in, double current_gap);

// Variable learning-rate bound (weighted by eta_k):
//   2 F_gap/(tau sum eta) + L tau sigma^2 sum(eta^2 d/s^2)/(12 N sum eta)
//   + L tau sigma^2 sum eta^2 / sum eta
//   + (2 alpha + 2/3) L^2 tau^2 sigma^2 sum eta^3 / sum eta
// Each eta_k is checked against the cap with omega_k = d / (12 s_k^2).
Evaluation variable_lr_bound(const BoundInputs& in, std::span<const double> eta,
                             std::span<const double> s);

// Largest value of the constants over the observed trace.
struct ConstantEstimates {
  double L = 0.0;
  double sigma2 = 0.0;
  double delta2 = 0.0;
  int skipped_pairs = 0;
};

using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// max over snapshot pairs of ||g(x) - g(y)|| / ||x - y||; identical pairs are
// skipped and counted.
double estimate_smoothness(std::span<const Eigen::VectorXd> points,
                           const GradientFn& gradient, int* skipped = nullptr);

// Estimates L, sigma^2 and delta^2 at the supplied parameter snapshots:
//   sigma^2  mean over nodes/points/draws of ||minibatch - full shard||^2
//   delta^2  mean over nodes/points of ||grad F_i - grad F||^2
ConstantEstimates estimate_constants(
    const learning::ModelShape& shape,
    const std::vector<learning::Dataset>& shards,
    std::span<const Eigen::VectorXd> points, std::size_t batch_size, int draws,
    Rng& rng);

}  // namespace lmdfl::analysis
