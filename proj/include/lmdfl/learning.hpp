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

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmdfl/random.hpp"

namespace lmdfl::learning {

// Row-per-sample feature matrix with integer labels in [0, num_classes).
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  int num_classes = 2;

  std::size_t size() const noexcept { return labels.size(); }
  int width() const noexcept { return static_cast<int>(features.cols()); }
  void validate() const;
};

enum class ModelKind { kLogistic, kMlp };

std::string to_string(ModelKind kind);
ModelKind model_from_string(const std::string& name);

// Parameter layout:
//   logistic, 2 classes  [w (p) | b]                      sigmoid
//   logistic, C classes  [W (C x p, row major) | b (C)]   softmax
//   mlp(h)               [W1 (h x p) | b1 (h) | W2 (C x h) | b2 (C)]
//                        tanh hidden layer, softmax output
struct ModelShape {
  ModelKind kind = ModelKind::kLogistic;
  int inputs = 1;
  int classes = 2;
  int hidden = 0;

  std::size_t dim() const noexcept;
};

struct Model {
  ModelShape shape;
  Eigen::VectorXd params;
};

// Logistic models start at zero; MLP weights draw from U(-a, a) with
// a = sqrt(6 / (fan_in + fan_out)).
Model init_model(const ModelShape& shape, Rng& rng);

// Mean cross-entropy.
double loss(const Model& model, const Dataset& data);
double loss(const ModelShape& shape, const Eigen::VectorXd& params,
            const Dataset& data);

double accuracy(const ModelShape& shape, const Eigen::VectorXd& params,
                const Dataset& data);

// Gradient of the mean loss over all samples.
Eigen::VectorXd full_gradient(const ModelShape& shape,
                              const Eigen::VectorXd& params,
                              const Dataset& data);

// Mean gradient over `batch_size` samples drawn with replacement. When
// batch_size equals the shard size the full gradient is returned and no
// randomness is consumed.
Eigen::VectorXd minibatch_gradient(const ModelShape& shape,
                                   const Eigen::VectorXd& params,
                                   const Dataset& data, std::size_t batch_size,
                                   Rng& rng);

// Central differences on min(d, 200) sampled coordinates; returns the max of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
double finite_diff_check(const ModelShape& shape,
                         const Eigen::VectorXd& params, const Dataset& data,
                         double step);

// Gaussian class blobs (unit variance) whose means sit `separation` apart.
Dataset gen_synthetic(std::size_t n, int p, int num_classes, double separation,
                      std::uint64_t seed);

// IDX image/label pair; pixels scaled to [0, 1].
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

// `label_fraction` of every class goes to node (class mod n_nodes); the rest
// is shuffled and dealt round-robin. Returns disjoint index sets that cover
// the dataset.
std::vector<std::vector<std::size_t>> partition_noniid(const Dataset& data,
                                                       int n_nodes,
                                                       double label_fraction,
                                                       std::uint64_t seed);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

// Header x0..x{p-1},label; label column last.
void export_csv(const Dataset& data, const std::string& path);

}  // namespace lmdfl::learning
