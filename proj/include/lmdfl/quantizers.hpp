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

// Vector quantizers of the form Q(v)_i = ||v|| * sign(v_i) * q(|v_i| / ||v||)
// with pluggable scalar quantizers q: Lloyd-Max (deterministic, fitted to the
// data), QSGD (uniform, stochastic), natural compression (binary geometric,
// stochastic), ALQ (adaptive, stochastic) and a lossless reference.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmdfl/random.hpp"

namespace lmdfl::quant {

// Quantization levels l_1 < ... < l_s in [0, 1] with bin boundaries
// b_0 = 0 < b_1 < ... < b_s = 1. Level j (1-based) owns the half-open bin
// (b_{j-1}, b_j]; r = 0 belongs to the first bin.
struct LevelTable {
  std::vector<double> levels;
  std::vector<double> boundaries;

  std::size_t size() const noexcept { return levels.size(); }

  // Content fingerprint; payloads carry it so a decoder can refuse a
  // mismatched codebook.
  std::uint64_t id() const noexcept;

  // Builds the table whose interior boundaries are level midpoints.
  static LevelTable from_levels(std::vector<double> levels);

  // Throws InvalidInput when an ordering or range invariant is broken.
  void validate() const;
};

enum class Scheme { kLloydMax, kQsgd, kNatural, kAlq, kLossless };

std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& name);

struct QuantizerKind {
  Scheme scheme = Scheme::kLloydMax;
  int s = 16;
  // Lloyd-Max stopping rule: relative decrease of the empirical distortion.
  double tol = 1e-6;
  int max_iter = 100;

  bool stochastic() const noexcept {
    return scheme == Scheme::kQsgd || scheme == Scheme::kNatural ||
           scheme == Scheme::kAlq;
  }
};

// Wire-level representation of Q(v). For the lossless scheme `magnitudes`
// carries the exact r_i and `indices` is unused (all zero).
struct QuantizedVector {
  double norm = 0.0;
  std::vector<bool> negative;  // one bit per element; sign(0) = +1
  std::vector<std::uint32_t> indices;
  std::vector<double> magnitudes;
  std::uint32_t level_count = 0;
  std::uint64_t codebook_id = 0;
  bool lossless = false;

  std::size_t dim() const noexcept { return negative.size(); }
};

struct LloydMaxFit {
  LevelTable table;
  // Empirical distortion D after every completed iteration; non-increasing.
  std::vector<double> distortion_history;
  int iterations = 0;
  bool converged = false;
};

// Lloyd-Max fit on an empirical sample set in [0, 1]. `weights` may be
// empty (unit weights). Boundaries start uniform on [0, max sample]; each
// iteration moves levels to bin centroids, then boundaries to level
// midpoints. A bin that captures no samples gets its level at the bin
// midpoint.
LloydMaxFit fit_lloyd_max(std::span<const double> samples,
                          std::span<const double> weights, int s,
                          double tol = 1e-6, int max_iter = 100);

// Weighted empirical distortion sum_i w_i (q(r_i) - r_i)^2 / sum_i w_i.
double table_distortion(std::span<const double> samples,
                        std::span<const double> weights,
                        const LevelTable& table);

// Zero-based index of the bin containing r.
std::size_t quantize_scalar_lm(double r, const LevelTable& table);

// QSGD scalar quantizer on the grid {0, 1/s, ..., 1}; returns the value.
double qsgd_scalar(double r, int s, Rng& rng);
std::uint32_t qsgd_index(double r, int s, Rng& rng);
LevelTable qsgd_levels(int s);

// Natural compression on {0, 2^(1-s), ..., 1/2, 1}; returns the value.
double natural_scalar(double r, int s, Rng& rng);
LevelTable natural_levels(int s);

// Unbiased stochastic rounding of r onto the surrounding pair of levels.
std::uint32_t stochastic_index(double r, std::span<const double> levels,
                               Rng& rng);

// Empirical CDF over a sample set; ALQ's coordinate step uses its exact sums.
class EmpiricalCdf {
 public:
  explicit EmpiricalCdf(std::vector<double> samples);

  double operator()(double x) const;
  // Mean of (r - a) / (b - a) over samples r in [a, b], scaled by 1/n.
  double ramp_mass(double a, double b) const;
  std::span<const double> sorted() const { return sorted_; }

 private:
  std::vector<double> sorted_;
};

// Initial ALQ table: s uniformly spaced levels with fixed endpoints 0 and 1.
LevelTable alq_initial_levels(int s);

// One ALQ coordinate-descent sweep. Every interior level moves to
//   Phi^-1( Phi(l_{j+1}) - int_{l_{j-1}}^{l_{j+1}} (r - l_{j-1}) /
//           (l_{j+1} - l_{j-1}) dPhi(r) )
// using the previous sweep's neighbours. The generic overload integrates
// with composite Simpson quadrature; the empirical overload sums exactly.
LevelTable alq_coordinate_step(const LevelTable& table,
                               const std::function<double(double)>& cdf);
LevelTable alq_coordinate_step(const LevelTable& table,
                               const EmpiricalCdf& cdf);

// Grid used to decode a fixed-grid scheme (QSGD, natural). Lloyd-Max and
// ALQ tables are data dependent and must be supplied by the caller.
LevelTable fixed_grid(const QuantizerKind& kind);

// `table` is required for Lloyd-Max and ALQ; `rng` for stochastic schemes.
QuantizedVector quantize_vector(const Eigen::VectorXd& v,
                                const QuantizerKind& kind,
                                const LevelTable* table, Rng* rng);

// `table` may be null only for lossless payloads.
Eigen::VectorXd dequantize(const QuantizedVector& q, const LevelTable* table);

// Normalized magnitudes r_i = |v_i| / ||v||; empty for the zero vector.
std::vector<double> normalized_magnitudes(const Eigen::VectorXd& v);

// Bits of one message: d * ceil(log2 s) + d + 32.
std::uint64_t encoded_bits(std::uint64_t d, std::uint64_t s);
// Lossless messages ship each magnitude as a 32-bit float.
std::uint64_t lossless_bits(std::uint64_t d);
std::uint32_t index_width(std::uint64_t level_count);

// Monte Carlo mean of ||Q(v) - v||^2. Deterministic schemes are evaluated
// once regardless of `trials`.
double empirical_distortion(const QuantizerKind& kind, const LevelTable* table,
                            const Eigen::VectorXd& v, int trials, Rng& rng);

// Normalized (per ||v||^2) worst-case distortion:
//   Lloyd-Max  d / (12 s^2)
//   QSGD       min(d / s^2, sqrt(d) / s)
//   natural    1/8 + min(sqrt(d) / 2^(s-1), d / 2^(2(s-1)))
//   ALQ        (rho - 1)^2 / (4 rho) on the supplied table
//   lossless   0
double distortion_bound(const QuantizerKind& kind, std::uint64_t d,
                        const LevelTable* table = nullptr);

// ((rho - 1) / (rho + 1))^2 with rho the largest ratio of consecutive
// strictly positive levels. Returns 0 when fewer than two positive levels.
double ratio_distortion_bound(const LevelTable& table);
double max_level_ratio(const LevelTable& table);

}  // namespace lmdfl::quant
