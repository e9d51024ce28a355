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

#include "lmdfl/quantizers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "lmdfl/errors.hpp"

namespace lmdfl::quant {
namespace {

void require_unit_interval(double r, const char* what) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw InvalidInput(std::string(what) + ": r=" + std::to_string(r) +
                       " outside [0,1]");
  }
}

void require_levels(int s, const char* what) {
  if (s < 1) {
    throw InvalidInput(std::string(what) + ": s must be >= 1");
  }
}

// Sample positions of the half-open bins (b_{j-1}, b_j] over sorted data.
std::vector<std::size_t> bin_edges(const std::vector<double>& sorted,
                                   const std::vector<double>& boundaries) {
  const std::size_t s = boundaries.size() - 1;
  std::vector<std::size_t> edges(s + 1);
  edges[0] = 0;
  for (std::size_t j = 1; j < s; ++j) {
    edges[j] = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), boundaries[j]) -
        sorted.begin());
  }
  edges[s] = sorted.size();
  return edges;
}

}  // namespace

std::uint64_t LevelTable::id() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<double>(levels.size()));
  for (double l : levels) feed(l);
  return h;
}

LevelTable LevelTable::from_levels(std::vector<double> levels) {
  if (levels.empty()) throw InvalidInput("level table needs >= 1 level");
  LevelTable t;
  t.boundaries.resize(levels.size() + 1);
  t.boundaries.front() = 0.0;
  t.boundaries.back() = 1.0;
  for (std::size_t j = 1; j < levels.size(); ++j) {
    t.boundaries[j] = 0.5 * (levels[j - 1] + levels[j]);
  }
  t.levels = std::move(levels);
  t.validate();
  return t;
}

void LevelTable::validate() const {
  const std::size_t s = levels.size();
  if (s == 0 || boundaries.size() != s + 1) {
    throw InvalidInput("level table: need s >= 1 levels and s+1 boundaries");
  }
  if (boundaries.front() != 0.0 || boundaries.back() != 1.0) {
    throw InvalidInput("level table: boundaries must span [0,1]");
  }
  for (std::size_t j = 0; j < s; ++j) {
    if (!(levels[j] >= 0.0 && levels[j] <= 1.0)) {
      throw InvalidInput("level table: level outside [0,1]");
    }
    if (j > 0 && !(levels[j] > levels[j - 1])) {
      throw InvalidInput("level table: levels not strictly increasing");
    }
    if (!(boundaries[j + 1] > boundaries[j])) {
      throw InvalidInput("level table: boundaries not strictly increasing");
    }
    const bool in_bin = (j == 0 ? levels[j] >= boundaries[j]
                                : levels[j] > boundaries[j]) &&
                        levels[j] <= boundaries[j + 1];
    if (!in_bin) throw InvalidInput("level table: level outside its bin");
  }
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kLloydMax: return "lloyd_max";
    case Scheme::kQsgd: return "qsgd";
    case Scheme::kNatural: return "natural";
    case Scheme::kAlq: return "alq";
    case Scheme::kLossless: return "lossless";
  }
  return "unknown";
}

Scheme scheme_from_string(const std::string& name) {
  if (name == "lloyd_max" || name == "lm") return Scheme::kLloydMax;
  if (name == "qsgd") return Scheme::kQsgd;
  if (name == "natural") return Scheme::kNatural;
  if (name == "alq") return Scheme::kAlq;
  if (name == "lossless") return Scheme::kLossless;
  throw InvalidInput("unknown quantizer '" + name +
                     "' (expected lloyd_max, qsgd, natural, alq, lossless)");
}

double table_distortion(std::span<const double> samples,
                        std::span<const double> weights,
                        const LevelTable& table) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double e = table.levels[quantize_scalar_lm(samples[i], table)] -
                     samples[i];
    num += w * e * e;
    den += w;
  }
  return den > 0.0 ? num / den : 0.0;
}

LloydMaxFit fit_lloyd_max(std::span<const double> samples,
                          std::span<const double> weights, int s, double tol,
                          int max_iter) {
  require_levels(s, "fit_lloyd_max");
  if (samples.empty()) throw InvalidInput("fit_lloyd_max: no samples");
  if (!weights.empty() && weights.size() != samples.size()) {
    throw InvalidInput("fit_lloyd_max: weights/samples length mismatch");
  }
  if (!(tol > 0.0)) throw InvalidInput("fit_lloyd_max: tol must be > 0");

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw InvalidInput("fit_lloyd_max: non-finite sample at " +
                         std::to_string(i));
    }
    require_unit_interval(samples[i], "fit_lloyd_max");
    if (!weights.empty() && !(weights[i] >= 0.0 && std::isfinite(weights[i]))) {
      throw InvalidInput("fit_lloyd_max: weights must be finite and >= 0");
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return samples[a] < samples[b];
  });
  std::vector<double> r(samples.size());
  std::vector<double> w(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    r[i] = samples[order[i]];
    w[i] = weights.empty() ? 1.0 : weights[order[i]];
  }

  const auto us = static_cast<std::size_t>(s);
  // Uniform initial boundaries over the support of the samples. Magnitudes
  // of a long vector sit far below 1, and a [0, 1] grid would leave most
  // bins empty for good.
  const double top = r.back() > 0.0 ? r.back() : 1.0;
  std::vector<double> boundaries(us + 1);
  for (std::size_t j = 0; j < us; ++j) {
    boundaries[j] = top * static_cast<double>(j) / static_cast<double>(us);
  }
  boundaries.back() = 1.0;

  LloydMaxFit fit;
  std::vector<double> levels(us);
  LevelTable best;
  double prev = 0.0;

  for (int it = 1; it <= std::max(1, max_iter); ++it) {
    const auto edges = bin_edges(r, boundaries);
    for (std::size_t j = 0; j < us; ++j) {
      double mass = 0.0;
      double moment = 0.0;
      for (std::size_t i = edges[j]; i < edges[j + 1]; ++i) {
        mass += w[i];
        moment += w[i] * r[i];
      }
      if (mass > 0.0) {
        // The mean lies between the bin's extreme samples; clamp away
        // rounding so the level stays inside its bin.
        levels[j] = std::clamp(moment / mass, r[edges[j]], r[edges[j + 1] - 1]);
      } else {
        levels[j] = 0.5 * (boundaries[j] + boundaries[j + 1]);
      }
    }
    for (std::size_t j = 1; j < us; ++j) {
      boundaries[j] = 0.5 * (levels[j - 1] + levels[j]);
    }

    LevelTable table;
    table.levels = levels;
    table.boundaries = boundaries;
    const double dist = table_distortion(r, w, table);

    if (it > 1 && dist > prev) {
      // Exact arithmetic never increases D; a rise is rounding at the fixed
      // point. Keep the previous table and stop.
      fit.converged = true;
      break;
    }
    fit.distortion_history.push_back(dist);
    fit.iterations = it;
    best = std::move(table);
    if (it > 1) {
      const double decrease = prev - dist;
      if (prev <= 0.0 || decrease <= tol * prev) {
        fit.converged = true;
        prev = dist;
        break;
      }
    } else if (dist == 0.0) {
      fit.converged = true;
      prev = dist;
      break;
    }
    prev = dist;
  }
  fit.table = std::move(best);
  return fit;
}

std::size_t quantize_scalar_lm(double r, const LevelTable& table) {
  require_unit_interval(r, "quantize_scalar_lm");
  // Interior boundaries b_1..b_{s-1}: the bin index is the number of them
  // strictly below r, which puts r == b_j into bin j (half-open on the left).
  const auto first = table.boundaries.begin() + 1;
  const auto last = table.boundaries.end() - 1;
  if (first >= last) return 0;
  return static_cast<std::size_t>(std::lower_bound(first, last, r) - first);
}

std::uint32_t stochastic_index(double r, std::span<const double> levels,
                               Rng& rng) {
  const double u = uniform01(rng);
  // Largest j with levels[j] <= r.
  auto it = std::upper_bound(levels.begin(), levels.end(), r);
  if (it == levels.begin()) return 0;
  const auto j = static_cast<std::uint32_t>(it - levels.begin() - 1);
  if (j + 1 >= levels.size() || levels[j] == r) return j;
  const double lo = levels[j];
  const double hi = levels[j + 1];
  const double p_up = (r - lo) / (hi - lo);
  return u < p_up ? j + 1 : j;
}

std::uint32_t qsgd_index(double r, int s, Rng& rng) {
  require_unit_interval(r, "qsgd_scalar");
  require_levels(s, "qsgd_scalar");
  const double u = uniform01(rng);
  const double scaled = r * s;
  // r in (j/s, (j+1)/s]: lower level j/s with probability j + 1 - s r.
  double upper = std::ceil(scaled);
  if (upper == 0.0) return 0;
  const double j = upper - 1.0;
  const double p_low = j + 1.0 - scaled;
  return static_cast<std::uint32_t>(u < p_low ? j : j + 1.0);
}

double qsgd_scalar(double r, int s, Rng& rng) {
  return static_cast<double>(qsgd_index(r, s, rng)) / s;
}

LevelTable qsgd_levels(int s) {
  require_levels(s, "qsgd_levels");
  std::vector<double> levels(static_cast<std::size_t>(s) + 1);
  for (int j = 0; j <= s; ++j) levels[j] = static_cast<double>(j) / s;
  levels.back() = 1.0;
  return LevelTable::from_levels(std::move(levels));
}

LevelTable natural_levels(int s) {
  require_levels(s, "natural_levels");
  if (s > 1000) throw InvalidInput("natural_levels: s too large");
  std::vector<double> levels;
  levels.reserve(static_cast<std::size_t>(s) + 1);
  levels.push_back(0.0);
  for (int j = s - 1; j >= 0; --j) levels.push_back(std::ldexp(1.0, -j));
  return LevelTable::from_levels(std::move(levels));
}

double natural_scalar(double r, int s, Rng& rng) {
  require_unit_interval(r, "natural_scalar");
  const auto grid = natural_levels(s);
  return grid.levels[stochastic_index(r, grid.levels, rng)];
}

EmpiricalCdf::EmpiricalCdf(std::vector<double> samples)
    : sorted_(std::move(samples)) {
  if (sorted_.empty()) throw InvalidInput("EmpiricalCdf: no samples");
  std::sort(sorted_.begin(), sorted_.end());
}

double EmpiricalCdf::operator()(double x) const {
  const auto k = std::upper_bound(sorted_.begin(), sorted_.end(), x) -
                 sorted_.begin();
  return static_cast<double>(k) / static_cast<double>(sorted_.size());
}

double EmpiricalCdf::ramp_mass(double a, double b) const {
  auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), a);
  auto hi = std::upper_bound(sorted_.begin(), sorted_.end(), b);
  double sum = 0.0;
  for (auto it = lo; it != hi; ++it) sum += (*it - a) / (b - a);
  return sum / static_cast<double>(sorted_.size());
}

LevelTable alq_initial_levels(int s) {
  if (s < 2) throw InvalidInput("alq: s must be >= 2 (endpoints 0 and 1)");
  std::vector<double> levels(static_cast<std::size_t>(s));
  for (int j = 0; j < s; ++j) levels[j] = static_cast<double>(j) / (s - 1);
  levels.back() = 1.0;
  return LevelTable::from_levels(std::move(levels));
}

namespace {

// Smallest x in [a, b] with cdf(x) >= target, to 1e-9.
double invert_cdf(const std::function<double(double)>& cdf, double target,
                  double a, double b) {
  double lo = a;
  double hi = b;
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) >= target) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

template <typename Ramp>
LevelTable alq_sweep(const LevelTable& table,
                     const std::function<double(double)>& cdf, Ramp ramp) {
  const auto& old = table.levels;
  std::vector<double> next = old;
  for (std::size_t j = 1; j + 1 < old.size(); ++j) {
    const double a = old[j - 1];
    const double b = old[j + 1];
    if (!(b > a)) continue;
    const double target = cdf(b) - ramp(a, b);
    double x = invert_cdf(cdf, target, a, b);
    // Keep strict ordering when the distribution has no mass in (a, b).
    if (!(x > a) || !(x < b)) x = old[j];
    next[j] = x;
  }
  for (std::size_t j = 1; j < next.size(); ++j) {
    if (!(next[j] > next[j - 1])) next[j] = old[j];
  }
  return LevelTable::from_levels(std::move(next));
}

}  // namespace

LevelTable alq_coordinate_step(const LevelTable& table,
                               const std::function<double(double)>& cdf) {
  // int_a^b (r - a)/(b - a) dPhi = Phi(b) - (1/(b - a)) int_a^b Phi(r) dr.
  auto ramp = [&cdf](double a, double b) {
    constexpr int kIntervals = 2048;
    const double h = (b - a) / kIntervals;
    double acc = cdf(a) + cdf(b);
    for (int i = 1; i < kIntervals; ++i) {
      acc += (i % 2 ? 4.0 : 2.0) * cdf(a + i * h);
    }
    const double integral = acc * h / 3.0;
    return cdf(b) - integral / (b - a);
  };
  return alq_sweep(table, cdf, ramp);
}

LevelTable alq_coordinate_step(const LevelTable& table,
                               const EmpiricalCdf& cdf) {
  std::function<double(double)> phi = [&cdf](double x) { return cdf(x); };
  return alq_sweep(table, phi,
                   [&cdf](double a, double b) { return cdf.ramp_mass(a, b); });
}

LevelTable fixed_grid(const QuantizerKind& kind) {
  switch (kind.scheme) {
    case Scheme::kQsgd: return qsgd_levels(kind.s);
    case Scheme::kNatural: return natural_levels(kind.s);
    default:
      throw InvalidInput("fixed_grid: " + to_string(kind.scheme) +
                         " has no fixed grid");
  }
}

std::vector<double> normalized_magnitudes(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  std::vector<double> r;
  if (norm == 0.0) return r;
  r.resize(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    r[i] = std::min(1.0, std::abs(v[i]) / norm);
  }
  return r;
}

QuantizedVector quantize_vector(const Eigen::VectorXd& v,
                                const QuantizerKind& kind,
                                const LevelTable* table, Rng* rng) {
  const auto d = static_cast<std::size_t>(v.size());
  if (d == 0) throw InvalidInput("quantize_vector: empty vector");
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::isfinite(v[i])) {
      throw InvalidInput("quantize_vector: non-finite element at " +
                         std::to_string(i));
    }
  }
  if (kind.stochastic() && rng == nullptr) {
    throw InvalidInput("quantize_vector: stochastic scheme needs an rng");
  }

  QuantizedVector q;
  q.norm = v.norm();
  q.negative.resize(d);
  q.indices.assign(d, 0);
  for (std::size_t i = 0; i < d; ++i) q.negative[i] = v[i] < 0.0;
  const auto r = normalized_magnitudes(v);

  if (kind.scheme == Scheme::kLossless) {
    q.lossless = true;
    q.magnitudes = r.empty() ? std::vector<double>(d, 0.0) : r;
    return q;
  }

  LevelTable grid;
  const LevelTable* levels = table;
  if (kind.scheme == Scheme::kQsgd || kind.scheme == Scheme::kNatural) {
    grid = fixed_grid(kind);
    levels = &grid;
  } else if (levels == nullptr) {
    throw InvalidInput("quantize_vector: " + to_string(kind.scheme) +
                       " needs a level table");
  }
  q.level_count = static_cast<std::uint32_t>(levels->size());
  q.codebook_id = levels->id();
  if (r.empty()) return q;

  for (std::size_t i = 0; i < d; ++i) {
    switch (kind.scheme) {
      case Scheme::kLloydMax:
        q.indices[i] =
            static_cast<std::uint32_t>(quantize_scalar_lm(r[i], *levels));
        break;
      case Scheme::kQsgd:
        q.indices[i] = qsgd_index(r[i], kind.s, *rng);
        break;
      case Scheme::kNatural:
      case Scheme::kAlq:
        q.indices[i] = stochastic_index(r[i], levels->levels, *rng);
        break;
      case Scheme::kLossless:
        break;
    }
  }
  return q;
}

Eigen::VectorXd dequantize(const QuantizedVector& q, const LevelTable* table) {
  const auto d = q.dim();
  if (q.indices.size() != d) {
    throw CorruptPayload("dequantize: sign/index length mismatch");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  if (q.lossless) {
    if (q.magnitudes.size() != d) {
      throw CorruptPayload("dequantize: lossless payload missing magnitudes");
    }
    if (q.norm == 0.0) return out;
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = (q.negative[i] ? -q.norm : q.norm) * q.magnitudes[i];
    }
    return out;
  }
  if (table == nullptr) throw CorruptPayload("dequantize: no codebook");
  if (table->id() != q.codebook_id || table->size() != q.level_count) {
    throw CorruptPayload("dequantize: codebook mismatch");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (q.indices[i] >= q.level_count) {
      throw CorruptPayload("dequantize: index " + std::to_string(q.indices[i]) +
                           " >= s=" + std::to_string(q.level_count));
    }
  }
  if (q.norm == 0.0) return out;
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = (q.negative[i] ? -q.norm : q.norm) * table->levels[q.indices[i]];
  }
  return out;
}

std::uint32_t index_width(std::uint64_t level_count) {
  if (level_count <= 1) return 0;
  return static_cast<std::uint32_t>(std::bit_width(level_count - 1));
}

std::uint64_t encoded_bits(std::uint64_t d, std::uint64_t s) {
  return d * index_width(s) + d + 32;
}

std::uint64_t lossless_bits(std::uint64_t d) { return d * 32 + d + 32; }

double empirical_distortion(const QuantizerKind& kind, const LevelTable* table,
                            const Eigen::VectorXd& v, int trials, Rng& rng) {
  if (trials < 1) throw InvalidInput("empirical_distortion: trials >= 1");
  LevelTable grid;
  const LevelTable* levels = table;
  if (kind.scheme == Scheme::kQsgd || kind.scheme == Scheme::kNatural) {
    grid = fixed_grid(kind);
    levels = &grid;
  }
  const int n = kind.stochastic() ? trials : 1;
  double acc = 0.0;
  for (int t = 0; t < n; ++t) {
    const auto q = quantize_vector(v, kind, levels, &rng);
    acc += (dequantize(q, levels) - v).squaredNorm();
  }
  return acc / n;
}

double max_level_ratio(const LevelTable& table) {
  double rho = 1.0;
  for (std::size_t j = 1; j < table.levels.size(); ++j) {
    if (table.levels[j - 1] > 0.0) {
      rho = std::max(rho, table.levels[j] / table.levels[j - 1]);
    }
  }
  return rho;
}

double ratio_distortion_bound(const LevelTable& table) {
  const double rho = max_level_ratio(table);
  const double x = (rho - 1.0) / (rho + 1.0);
  return x * x;
}

double distortion_bound(const QuantizerKind& kind, std::uint64_t d,
                        const LevelTable* table) {
  require_levels(kind.s, "distortion_bound");
  const double dd = static_cast<double>(d);
  const double s = kind.s;
  switch (kind.scheme) {
    case Scheme::kLloydMax:
      return dd / (12.0 * s * s);
    case Scheme::kQsgd:
      return std::min(dd / (s * s), std::sqrt(dd) / s);
    case Scheme::kNatural:
      return 0.125 + std::min(std::sqrt(dd) / std::ldexp(1.0, kind.s - 1),
                              dd / std::ldexp(1.0, 2 * (kind.s - 1)));
    case Scheme::kAlq: {
      if (table == nullptr) {
        throw InvalidInput("distortion_bound: ALQ needs its level table");
      }
      const double rho = max_level_ratio(*table);
      return (rho - 1.0) * (rho - 1.0) / (4.0 * rho);
    }
    case Scheme::kLossless:
      return 0.0;
  }
  return 0.0;
}

}  // namespace lmdfl::quant
