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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"

#include "lmdfl/errors.hpp"
#include "lmdfl/learning.hpp"

using namespace lmdfl;
using namespace lmdfl::learning;

namespace {

// Plain-loop reference for the mean cross-entropy of every model kind.
double reference_loss(const ModelShape& s, const Eigen::VectorXd& w,
                      const Dataset& data) {
  const int p = s.inputs, c = s.classes, h = s.hidden;
  double total = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    std::vector<double> x(p);
    for (int j = 0; j < p; ++j) x[j] = data.features(static_cast<Eigen::Index>(n), j);
    const int y = data.labels[n];
    if (s.kind == ModelKind::kLogistic && c == 2) {
      double z = w[p];
      for (int j = 0; j < p; ++j) z += w[j] * x[j];
      const double prob1 = 1.0 / (1.0 + std::exp(-z));
      total -= std::log(y == 1 ? prob1 : 1.0 - prob1);
      continue;
    }
    std::vector<double> logits(c);
    if (s.kind == ModelKind::kLogistic) {
      for (int k = 0; k < c; ++k) {
        double z = w[c * p + k];
        for (int j = 0; j < p; ++j) z += w[k * p + j] * x[j];
        logits[k] = z;
      }
    } else {
      std::vector<double> a(h);
      for (int u = 0; u < h; ++u) {
        double z = w[h * p + u];
        for (int j = 0; j < p; ++j) z += w[u * p + j] * x[j];
        a[u] = std::tanh(z);
      }
      const int off = h * p + h;
      for (int k = 0; k < c; ++k) {
        double z = w[off + c * h + k];
        for (int u = 0; u < h; ++u) z += w[off + k * h + u] * a[u];
        logits[k] = z;
      }
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    total -= logits[y] - mx - std::log(sum);
  }
  return total / static_cast<double>(data.size());
}

Eigen::VectorXd random_params(std::size_t d, Rng& rng, double scale) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return w;
}

Dataset tiny(int classes, int p, std::size_t n, std::uint64_t seed) {
  return gen_synthetic(n, p, classes, 2.0, seed);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lmdfl_test_" + name);
}

}  // namespace

TEST_CASE("dimension arithmetic") {
  CHECK(ModelShape{ModelKind::kLogistic, 5, 2, 0}.dim() == 6);
  CHECK(ModelShape{ModelKind::kLogistic, 5, 3, 0}.dim() == 18);
  CHECK(ModelShape{ModelKind::kMlp, 5, 3, 4}.dim() == 4 * 5 + 4 + 3 * 4 + 3);
}

TEST_CASE("loss matches a plain-loop reference") {
  Rng rng(1);
  for (auto shape : {ModelShape{ModelKind::kLogistic, 4, 2, 0},
                     ModelShape{ModelKind::kLogistic, 4, 5, 0},
                     ModelShape{ModelKind::kMlp, 4, 3, 6}}) {
    const auto data = tiny(shape.classes, 4, 40, 3);
    const auto w = random_params(shape.dim(), rng, 0.7);
    CHECK(loss(shape, w, data) == doctest::Approx(reference_loss(shape, w, data)).epsilon(1e-12));
  }
}

TEST_CASE("zero logistic parameters give ln 2 on binary data") {
  const auto data = tiny(2, 3, 50, 1);
  const ModelShape shape{ModelKind::kLogistic, 3, 2, 0};
  CHECK(loss(shape, Eigen::VectorXd::Zero(4), data) == doctest::Approx(std::log(2.0)));
  const ModelShape multi{ModelKind::kLogistic, 3, 4, 0};
  const auto d4 = tiny(4, 3, 40, 2);
  CHECK(loss(multi, Eigen::VectorXd::Zero(16), d4) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("confident correct prediction has zero loss") {
  Dataset d;
  d.features = Eigen::MatrixXd::Constant(1, 1, 1.0);
  d.labels = {1};
  d.num_classes = 2;
  const ModelShape shape{ModelKind::kLogistic, 1, 2, 0};
  Eigen::VectorXd w(2);
  w << 800.0, 0.0;
  CHECK(loss(shape, w, d) == doctest::Approx(0.0));
  CHECK(loss(shape, w, d) >= 0.0);
  w << -5.0, 0.0;
  CHECK(loss(shape, w, d) > 0.0);
}

TEST_CASE("global loss is the size-weighted mean of shard losses") {
  const auto data = tiny(3, 4, 101, 5);
  const auto parts = partition_noniid(data, 4, 0.5, 9);
  Rng rng(2);
  const ModelShape shape{ModelKind::kMlp, 4, 3, 5};
  const auto w = random_params(shape.dim(), rng, 0.5);
  double weighted = 0.0;
  for (const auto& idx : parts) {
    weighted += static_cast<double>(idx.size()) / data.size() * loss(shape, w, subset(data, idx));
  }
  CHECK(weighted == doctest::Approx(loss(shape, w, data)).epsilon(1e-12));
}

TEST_CASE("single-sample logistic gradient at zero") {
  Dataset d;
  d.features.resize(1, 3);
  d.features << 0.5, -2.0, 3.0;
  d.num_classes = 2;
  const ModelShape shape{ModelKind::kLogistic, 3, 2, 0};
  for (int label : {0, 1}) {
    d.labels = {label};
    const double y = label == 1 ? 1.0 : -1.0;
    const auto g = full_gradient(shape, Eigen::VectorXd::Zero(4), d);
    CHECK(g[0] == doctest::Approx(-0.5 * y * 0.5));
    CHECK(g[1] == doctest::Approx(-0.5 * y * -2.0));
    CHECK(g[2] == doctest::Approx(-0.5 * y * 3.0));
    CHECK(g[3] == doctest::Approx(-0.5 * y));
  }
}

TEST_CASE("zero feature vector leaves the weight block zero") {
  Dataset d;
  d.features = Eigen::MatrixXd::Zero(1, 3);
  d.labels = {2};
  d.num_classes = 3;
  const ModelShape shape{ModelKind::kLogistic, 3, 3, 0};
  Rng rng(4);
  const auto w = random_params(shape.dim(), rng, 1.0);
  const auto g = full_gradient(shape, w, d);
  CHECK(g.head(9).isZero(0.0));
  CHECK(g.tail(3).norm() > 0.0);
}

TEST_CASE("finite differences: logistic and mlp") {
  Rng rng(6);
  const auto bin = tiny(2, 5, 10, 7);
  const auto multi = tiny(4, 5, 10, 8);
  const ModelShape lb{ModelKind::kLogistic, 5, 2, 0};
  const ModelShape lm{ModelKind::kLogistic, 5, 4, 0};
  const ModelShape mlp{ModelKind::kMlp, 5, 4, 8};
  CHECK(finite_diff_check(lb, random_params(lb.dim(), rng, 0.5), bin, 1e-5) <= 1e-5);
  CHECK(finite_diff_check(lm, random_params(lm.dim(), rng, 0.5), multi, 1e-5) <= 1e-5);
  Rng init(3);
  CHECK(finite_diff_check(mlp, init_model(mlp, init).params, multi, 1e-5) <= 1e-4);

  // Zero model on all-zero data: both gradients vanish on the weights.
  Dataset zero;
  zero.features = Eigen::MatrixXd::Zero(4, 3);
  zero.labels = {0, 1, 0, 1};
  zero.num_classes = 2;
  const ModelShape zs{ModelKind::kLogistic, 3, 2, 0};
  CHECK(finite_diff_check(zs, Eigen::VectorXd::Zero(4), zero, 1e-5) == doctest::Approx(0.0));
}

TEST_CASE("finite differences agree with an independent probe of the reference loss") {
  Rng rng(12);
  const ModelShape shape{ModelKind::kMlp, 3, 3, 4};
  const auto data = tiny(3, 3, 15, 4);
  const auto w = random_params(shape.dim(), rng, 0.6);
  const auto g = full_gradient(shape, w, data);
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    Eigen::VectorXd up = w, down = w;
    up[k] += 1e-6;
    down[k] -= 1e-6;
    const double num = (reference_loss(shape, up, data) - reference_loss(shape, down, data)) / 2e-6;
    CHECK(g[k] == doctest::Approx(num).epsilon(1e-5).scale(1e-6));
  }
}

TEST_CASE("minibatch gradient: bounds, full batch determinism, unbiasedness") {
  const auto data = tiny(3, 4, 30, 10);
  const ModelShape shape{ModelKind::kLogistic, 4, 3, 0};
  Rng rng(13);
  const auto w = random_params(shape.dim(), rng, 0.3);
  CHECK_THROWS_AS(minibatch_gradient(shape, w, data, 0, rng), InvalidInput);
  CHECK_THROWS_AS(minibatch_gradient(shape, w, data, 31, rng), InvalidInput);

  Rng a(1), b(99);
  const auto ga = minibatch_gradient(shape, w, data, 30, a);
  const auto gb = minibatch_gradient(shape, w, data, 30, b);
  CHECK(ga == gb);
  CHECK(a() == Rng(1)());  // no randomness consumed

  const auto full = full_gradient(shape, w, data);
  const int n = 10000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(w.size());
  Eigen::VectorXd sum2 = Eigen::VectorXd::Zero(w.size());
  for (int i = 0; i < n; ++i) {
    const auto g = minibatch_gradient(shape, w, data, 4, rng);
    sum += g;
    sum2 += g.cwiseProduct(g);
  }
  const Eigen::VectorXd mean = sum / n;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const double var = std::max(0.0, sum2[k] / n - mean[k] * mean[k]);
    CHECK(std::abs(mean[k] - full[k]) <= 4.0 * std::sqrt(var / n) + 1e-12);
  }
}

TEST_CASE("shape checks") {
  const auto data = tiny(2, 3, 10, 1);
  const ModelShape wrong{ModelKind::kLogistic, 4, 2, 0};
  CHECK_THROWS_AS(loss(wrong, Eigen::VectorXd::Zero(5), data), InvalidInput);
  const ModelShape right{ModelKind::kLogistic, 3, 2, 0};
  CHECK_THROWS_AS(loss(right, Eigen::VectorXd::Zero(7), data), InvalidInput);
}

TEST_CASE("init_model") {
  Rng rng(1);
  const ModelShape lg{ModelKind::kLogistic, 3, 4, 0};
  CHECK(init_model(lg, rng).params.isZero(0.0));
  const ModelShape mlp{ModelKind::kMlp, 10, 3, 6};
  const auto m = init_model(mlp, rng);
  const double a1 = std::sqrt(6.0 / 16.0);
  CHECK(m.params.head(60).cwiseAbs().maxCoeff() <= a1);
  CHECK(m.params.segment(60, 6).isZero(0.0));
  CHECK(m.params.head(60).norm() > 0.0);
}

TEST_CASE("gen_synthetic: determinism, balance and separation") {
  const auto a = gen_synthetic(103, 5, 4, 3.0, 77);
  const auto b = gen_synthetic(103, 5, 4, 3.0, 77);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  const auto c = gen_synthetic(103, 5, 4, 3.0, 78);
  CHECK(a.features != c.features);
  std::vector<int> counts(4, 0);
  for (int y : a.labels) ++counts[y];
  CHECK(*std::max_element(counts.begin(), counts.end()) -
            *std::min_element(counts.begin(), counts.end()) <= 1);
  CHECK(a.size() == 103);
  CHECK(a.num_classes == 4);

  // Class means sit `separation` apart (estimated from a large sample).
  for (auto [p, classes] : {std::pair{2, 2}, std::pair{6, 3}, std::pair{2, 5}, std::pair{1, 3}}) {
    const auto big = gen_synthetic(40000, p, classes, 4.0, 5);
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(classes, p);
    std::vector<int> n(classes, 0);
    for (std::size_t i = 0; i < big.size(); ++i) {
      means.row(big.labels[i]) += big.features.row(static_cast<Eigen::Index>(i));
      ++n[big.labels[i]];
    }
    for (int k = 0; k < classes; ++k) means.row(k) /= n[k];
    CAPTURE(p);
    CAPTURE(classes);
    CHECK((means.row(0) - means.row(1)).norm() == doctest::Approx(4.0).epsilon(0.05));
  }
  CHECK_THROWS_AS(gen_synthetic(2, 3, 4, 1.0, 1), InvalidInput);
}

namespace {

// Full-batch gradient descent used to probe separability.
Eigen::VectorXd train(const ModelShape& shape, const Dataset& data, int steps, double lr) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.dim()));
  for (int i = 0; i < steps; ++i) w -= lr * full_gradient(shape, w, data);
  return w;
}

}  // namespace

TEST_CASE("synthetic separability extremes") {
  const auto sep = gen_synthetic(1000, 2, 2, 10.0, 3);
  const ModelShape bin{ModelKind::kLogistic, 2, 2, 0};
  CHECK(accuracy(bin, train(bin, sep, 200, 0.5), sep) >= 0.99);

  const auto none = gen_synthetic(2000, 3, 4, 0.0, 3);
  const ModelShape multi{ModelKind::kLogistic, 3, 4, 0};
  const double acc = accuracy(multi, train(multi, none, 200, 0.5), none);
  CHECK(std::abs(acc - 0.25) <= 0.1);
}

TEST_CASE("partition_noniid") {
  Dataset d;
  d.features = Eigen::MatrixXd::Zero(100, 1);
  d.num_classes = 10;
  for (int i = 0; i < 100; ++i) d.labels.push_back(i / 10);
  const auto parts = partition_noniid(d, 10, 0.5, 1);
  REQUIRE(parts.size() == 10);
  std::vector<std::size_t> all;
  for (int node = 0; node < 10; ++node) {
    int own = 0;
    for (auto i : parts[node]) own += d.labels[i] == node;
    CHECK(own >= 5);
    CHECK(parts[node].size() >= 8);
    CHECK(parts[node].size() <= 12);
    all.insert(all.end(), parts[node].begin(), parts[node].end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(100);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);

  const auto uniform = partition_noniid(d, 7, 0.0, 2);
  std::size_t lo = 1000, hi = 0;
  for (const auto& p : uniform) {
    lo = std::min(lo, p.size());
    hi = std::max(hi, p.size());
  }
  CHECK(hi - lo <= 1);

  const auto pure = partition_noniid(d, 10, 1.0, 3);
  for (int node = 0; node < 10; ++node) {
    std::set<int> labels;
    for (auto i : pure[node]) labels.insert(d.labels[i]);
    CHECK(labels == std::set<int>{node});
  }
  CHECK(partition_noniid(d, 10, 0.5, 1) == parts);
}

TEST_CASE("load_idx") {
  const auto images = temp_file("images.idx");
  const auto labels = temp_file("labels.idx");
  {
    std::ofstream out(images, std::ios::binary);
    write_be32(out, 2051);
    write_be32(out, 2);
    write_be32(out, 2);
    write_be32(out, 2);
    const unsigned char px[8] = {0, 255, 51, 102, 10, 20, 30, 40};
    out.write(reinterpret_cast<const char*>(px), 8);
  }
  {
    std::ofstream out(labels, std::ios::binary);
    write_be32(out, 2049);
    write_be32(out, 2);
    const unsigned char lb[2] = {3, 7};
    out.write(reinterpret_cast<const char*>(lb), 2);
  }
  const auto d = load_idx(images.string(), labels.string());
  CHECK(d.size() == 2);
  CHECK(d.width() == 4);
  CHECK(d.features(0, 1) == 1.0);
  CHECK(d.features(0, 2) == doctest::Approx(0.2));
  CHECK(d.labels == std::vector<int>{3, 7});
  CHECK(d.num_classes == 8);

  {
    std::ofstream out(labels, std::ios::binary);
    write_be32(out, 2049);
    write_be32(out, 3);
    const unsigned char lb[3] = {1, 2, 3};
    out.write(reinterpret_cast<const char*>(lb), 3);
  }
  CHECK_THROWS_AS(load_idx(images.string(), labels.string()), ConsistencyError);

  {
    std::ofstream out(images, std::ios::binary);
    write_be32(out, 2050);
    write_be32(out, 1);
  }
  try {
    load_idx(images.string(), labels.string());
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("2050") != std::string::npos);
  }
  std::filesystem::remove(images);
  std::filesystem::remove(labels);
}

TEST_CASE("export_csv") {
  const auto path = temp_file("export.csv");
  const auto d = gen_synthetic(4, 2, 2, 1.0, 1);
  export_csv(d, path.string());
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "x0,x1,label");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.back() == ('0' + d.labels[rows - 1]));
  }
  CHECK(rows == 4);
  std::filesystem::remove(path);
}
