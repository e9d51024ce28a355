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

#include "lmdfl/analysis.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "lmdfl/errors.hpp"

namespace lmdfl::analysis {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double finite_or_inf(double v) { return v > kPoleThreshold ? kInf : v; }

std::string cap_warning(double eta, double cap, const char* where) {
  std::ostringstream os;
  os << where << ": learning rate " << eta << " exceeds the cap " << cap
     << "; the bound is evaluated outside its regime";
  return os.str();
}

double cap_formula(double omega, double N, double L, double tau, double a) {
  const double k = 2.0 * a + 1.0;
  if (!std::isfinite(k)) return 0.0;
  const double root = std::sqrt((omega + N) * (omega + N) + 4.0 * N * N * k);
  return (root - omega - N) / (2.0 * N * L * tau * k);
}

}  // namespace

void BoundInputs::validate() const {
  const double values[] = {L, sigma2, delta2, N, tau, eta, zeta, omega,
                           K, d, s, B, B0};
  for (double v : values) {
    if (!(v >= 0.0) || std::isnan(v)) {
      throw InvalidInput("bound inputs must be nonnegative");
    }
  }
  if (!std::isfinite(sigma2) || !std::isfinite(delta2)) {
    throw InvalidInput("sigma2 and delta2 must be finite");
  }
  if (zeta >= 1.0) throw DomainError("zeta must lie in [0, 1)");
}

double alpha(double zeta) {
  if (!(zeta >= 0.0)) throw DomainError("alpha: zeta must be >= 0");
  if (zeta >= 1.0) throw DomainError("alpha: undefined for zeta >= 1");
  const double a = zeta * zeta / (1.0 - zeta * zeta) +
                   zeta / ((1.0 - zeta) * (1.0 - zeta));
  return finite_or_inf(a);
}

double qdfl_lr_cap(const BoundInputs& in) {
  if (!(in.L > 0.0) || !(in.tau > 0.0)) {
    throw InvalidInput("qdfl_lr_cap: L and tau must be > 0");
  }
  if (!(in.N > 0.0)) throw InvalidInput("qdfl_lr_cap: N must be > 0");
  return cap_formula(in.omega, in.N, in.L, in.tau, alpha(in.zeta));
}

Evaluation qdfl_convergence_bound(const BoundInputs& in) {
  in.validate();
  if (!(in.eta > 0.0) || !(in.K > 0.0) || !(in.tau > 0.0) || !(in.N > 0.0)) {
    throw InvalidInput("qdfl_convergence_bound: eta, K, tau, N must be > 0");
  }
  Evaluation out;
  const double a = alpha(in.zeta);
  const double cap = qdfl_lr_cap(in);
  if (in.eta > cap) out.warnings.push_back(cap_warning(in.eta, cap, "qdfl"));
  out.value = 2.0 * in.F_gap / (in.eta * in.K * in.tau) +
              in.L * in.eta * in.tau * in.sigma2 * (in.omega + in.N) / in.N +
              (2.0 * a + 2.0 / 3.0) * in.L * in.L * in.eta * in.eta *
                  in.sigma2 * in.tau * in.tau +
              in.delta2;
  out.value = finite_or_inf(out.value);
  return out;
}

double lmdfl_convergence_bound(const BoundInputs& in) {
  in.validate();
  if (!(in.K >= 1.0)) throw InvalidInput("lmdfl_convergence_bound: K must be >= 1");
  if (!(in.tau > 0.0) || !(in.N > 0.0) || !(in.s > 0.0)) {
    throw InvalidInput("lmdfl_convergence_bound: tau, N, s must be > 0");
  }
  const double a = alpha(in.zeta);
  const double rk = std::sqrt(in.K);
  const double v =
      2.0 * in.L * in.F_gap / (in.tau * rk) +
      in.tau * in.sigma2 * in.d / (12.0 * in.s * in.s * in.N * rk) +
      in.tau * in.sigma2 / rk +
      (2.0 * a + 2.0 / 3.0) * in.sigma2 * in.tau * in.tau / in.K;
  return finite_or_inf(v);
}

double BitBudgetBound::operator()(double s) const {
  if (!(s > 0.0)) throw InvalidInput("bound(s): s must be > 0");
  return A1 * std::log2(2.0 * s) + A2 / (s * s) + A3;
}

BitBudgetBound thm4_constants_and_bound(const BoundInputs& in) {
  in.validate();
  if (!(in.B > 0.0)) throw InvalidInput("thm4: B must be > 0");
  if (!(in.eta > 0.0) || !(in.tau > 0.0) || !(in.N > 0.0) || !(in.d > 0.0)) {
    throw InvalidInput("thm4: eta, tau, N, d must be > 0");
  }
  const double a = alpha(in.zeta);
  BitBudgetBound b;
  b.A1 = 4.0 * in.F_gap * in.d / (in.eta * in.tau * in.B);
  b.A2 = in.L * in.eta * in.tau * in.sigma2 * in.d / (12.0 * in.N);
  b.A3 = (b.A1 / in.d) * (in.d + 32.0) +
         (2.0 * a + 2.0 / 3.0) * in.L * in.L * in.eta * in.eta * in.sigma2 *
             in.tau * in.tau +
         in.delta2 + in.L * in.eta * in.tau * in.sigma2;
  return b;
}

OptimalLevels optimal_s(const BoundInputs& in) {
  in.validate();
  if (!(in.F_gap > 0.0)) throw DomainError("optimal_s: F_gap must be > 0");
  if (!(in.N > 0.0)) throw InvalidInput("optimal_s: N must be > 0");
  OptimalLevels o;
  o.A4 = in.L * in.eta * in.eta * in.tau * in.tau * in.sigma2 * in.B;
  o.A5 = 24.0 * in.N * in.N * std::numbers::log2e;
  o.s_star = std::sqrt(o.A4 / (o.A5 * in.F_gap));
  // d/ds of A1 log2(2s) + A2/s^2 vanishes at s^2 = 2 A2 / (A1 log2 e).
  o.s_stationary = o.s_star * std::sqrt(in.N);
  o.s_interval = in.B0 > 0.0 ? interval_s(in, in.F_gap)
                             : std::numeric_limits<double>::quiet_NaN();
  return o;
}

double interval_s(const BoundInputs& in, double current_gap) {
  if (!(current_gap > 0.0)) throw DomainError("interval_s: gap must be > 0");
  if (!(in.B0 > 0.0)) throw InvalidInput("interval_s: B0 must be > 0");
  const double a4 = in.L * in.eta * in.eta * in.tau * in.tau * in.sigma2 * in.B0;
  const double a5 = 24.0 * in.N * in.N * std::numbers::log2e;
  return std::sqrt(a4 / (a5 * current_gap));
}

Evaluation variable_lr_bound(const BoundInputs& in, std::span<const double> eta,
                             std::span<const double> s) {
  if (eta.empty()) throw InvalidInput("variable_lr_bound: empty eta sequence");
  if (eta.size() != s.size()) {
    throw InvalidInput("variable_lr_bound: eta and s sequences differ in length");
  }
  in.validate();
  if (!(in.tau > 0.0) || !(in.N > 0.0) || !(in.L > 0.0)) {
    throw InvalidInput("variable_lr_bound: L, tau, N must be > 0");
  }
  const double a = alpha(in.zeta);
  Evaluation out;
  double sum1 = 0.0, sum2 = 0.0, sum3 = 0.0, sum_q = 0.0;
  for (std::size_t k = 0; k < eta.size(); ++k) {
    const double e = eta[k];
    if (!(e > 0.0)) throw InvalidInput("variable_lr_bound: eta_k must be > 0");
    if (!(s[k] > 0.0)) throw InvalidInput("variable_lr_bound: s_k must be > 0");
    const double w = in.d / (12.0 * s[k] * s[k]);
    const double cap = cap_formula(w, in.N, in.L, in.tau, a);
    if (e > cap) {
      out.warnings.push_back(cap_warning(e, cap, ("round " + std::to_string(k + 1)).c_str()));
    }
    sum1 += e;
    sum2 += e * e;
    sum3 += e * e * e;
    sum_q += e * e * (in.d / (s[k] * s[k]));
  }
  out.value = 2.0 * in.F_gap / (in.tau * sum1) +
              in.L * in.tau * in.sigma2 * sum_q / (12.0 * in.N * sum1) +
              in.L * in.tau * in.sigma2 * sum2 / sum1 +
              (2.0 * a + 2.0 / 3.0) * in.L * in.L * in.tau * in.tau *
                  in.sigma2 * sum3 / sum1;
  out.value = finite_or_inf(out.value);
  return out;
}

double estimate_smoothness(std::span<const Eigen::VectorXd> points,
                           const GradientFn& gradient, int* skipped) {
  if (points.size() < 2) {
    throw InvalidInput("estimate_smoothness: need at least 2 snapshots");
  }
  std::vector<Eigen::VectorXd> grads;
  grads.reserve(points.size());
  for (const auto& p : points) grads.push_back(gradient(p));
  double best = 0.0;
  int skip = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double dx = (points[i] - points[j]).norm();
      if (dx == 0.0) {
        ++skip;
        continue;
      }
      best = std::max(best, (grads[i] - grads[j]).norm() / dx);
    }
  }
  if (skipped != nullptr) *skipped = skip;
  return best;
}

ConstantEstimates estimate_constants(
    const learning::ModelShape& shape,
    const std::vector<learning::Dataset>& shards,
    std::span<const Eigen::VectorXd> points, std::size_t batch_size, int draws,
    Rng& rng) {
  if (shards.empty()) throw InvalidInput("estimate_constants: no shards");
  if (draws < 1) throw InvalidInput("estimate_constants: draws must be >= 1");
  ConstantEstimates est;

  // Global objective: sample-weighted mean of the shard losses.
  double total = 0.0;
  for (const auto& sh : shards) total += static_cast<double>(sh.size());
  auto global_grad = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    for (const auto& sh : shards) {
      g += (static_cast<double>(sh.size()) / total) *
           learning::full_gradient(shape, x, sh);
    }
    return g;
  };
  est.L = estimate_smoothness(points, global_grad, &est.skipped_pairs);

  double var_sum = 0.0, div_sum = 0.0;
  std::size_t var_n = 0, div_n = 0;
  for (const auto& x : points) {
    const Eigen::VectorXd g = global_grad(x);
    for (const auto& sh : shards) {
      const Eigen::VectorXd gi = learning::full_gradient(shape, x, sh);
      div_sum += (gi - g).squaredNorm();
      ++div_n;
      const std::size_t b = std::min(batch_size, sh.size());
      for (int r = 0; r < draws; ++r) {
        const Eigen::VectorXd mb =
            learning::minibatch_gradient(shape, x, sh, b, rng);
        var_sum += (mb - gi).squaredNorm();
        ++var_n;
      }
    }
  }
  est.sigma2 = var_sum / static_cast<double>(var_n);
  est.delta2 = div_sum / static_cast<double>(div_n);
  return est;
}

}  // namespace lmdfl::analysis
