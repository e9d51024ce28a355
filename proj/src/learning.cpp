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

#include "lmdfl/learning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lmdfl/errors.hpp"

namespace lmdfl::learning {
namespace {

void check_shape(const ModelShape& shape, const Eigen::VectorXd& params,
                 const Dataset& data) {
  if (data.width() != shape.inputs) {
    throw InvalidInput("model expects " + std::to_string(shape.inputs) +
                       " features, data has " + std::to_string(data.width()));
  }
  if (data.num_classes > shape.classes) {
    throw InvalidInput("data has more classes than the model");
  }
  if (static_cast<std::size_t>(params.size()) != shape.dim()) {
    throw InvalidInput("parameter vector has " +
                       std::to_string(params.size()) + " entries, model needs " +
                       std::to_string(shape.dim()));
  }
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Numerically stable log-softmax in place; returns -log p[label].
double log_softmax_loss(Eigen::VectorXd& logits, int label) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  logits.array() -= lse;
  return -logits[label];
}

// Loss and (optionally) gradient contribution of one sample.
double sample_term(const ModelShape& shape, const Eigen::VectorXd& params,
                   const Eigen::Ref<const Eigen::VectorXd>& x, int label,
                   Eigen::VectorXd* grad) {
  const int p = shape.inputs;
  const int c = shape.classes;
  if (shape.kind == ModelKind::kLogistic && c == 2) {
    const double y = label == 1 ? 1.0 : -1.0;
    const double z = params.head(p).dot(x) + params[p];
    if (grad != nullptr) {
      const double g = -y * sigmoid(-y * z);
      grad->head(p) += g * x;
      (*grad)[p] += g;
    }
    return softplus(-y * z);
  }
  if (shape.kind == ModelKind::kLogistic) {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        w(params.data(), c, p);
    Eigen::VectorXd logits = w * x + params.segment(c * p, c);
    const double l = log_softmax_loss(logits, label);
    if (grad != nullptr) {
      Eigen::VectorXd delta = logits.array().exp();
      delta[label] -= 1.0;
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>
          gw(grad->data(), c, p);
      gw += delta * x.transpose();
      grad->segment(c * p, c) += delta;
    }
    return l;
  }
  const int h = shape.hidden;
  using RowMat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> w1(params.data(), h, p);
  const auto b1 = params.segment(h * p, h);
  Eigen::Map<const RowMat> w2(params.data() + h * p + h, c, h);
  const auto b2 = params.segment(h * p + h + c * h, c);
  const Eigen::VectorXd a = (w1 * x + b1).array().tanh().matrix();
  Eigen::VectorXd logits = w2 * a + b2;
  const double l = log_softmax_loss(logits, label);
  if (grad != nullptr) {
    Eigen::VectorXd delta = logits.array().exp();
    delta[label] -= 1.0;
    Eigen::Map<RowMat> gw2(grad->data() + h * p + h, c, h);
    gw2 += delta * a.transpose();
    grad->segment(h * p + h + c * h, c) += delta;
    const Eigen::VectorXd back =
        (w2.transpose() * delta).array() * (1.0 - a.array().square());
    Eigen::Map<RowMat> gw1(grad->data(), h, p);
    gw1 += back * x.transpose();
    grad->segment(h * p, h) += back;
  }
  return l;
}

Eigen::VectorXd row(const Dataset& data, std::size_t i) {
  return data.features.row(static_cast<Eigen::Index>(i)).transpose();
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw InvalidInput("dataset is empty");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidInput("dataset: feature rows and labels differ");
  }
  if (num_classes < 2) throw InvalidInput("dataset: need >= 2 classes");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw InvalidInput("dataset: label " + std::to_string(y) +
                         " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  if (!features.allFinite()) throw InvalidInput("dataset: non-finite feature");
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kLogistic ? "logistic" : "mlp";
}

ModelKind model_from_string(const std::string& name) {
  if (name == "logistic") return ModelKind::kLogistic;
  if (name == "mlp") return ModelKind::kMlp;
  throw InvalidInput("unknown model '" + name + "' (expected logistic, mlp)");
}

std::size_t ModelShape::dim() const noexcept {
  const auto p = static_cast<std::size_t>(inputs);
  const auto c = static_cast<std::size_t>(classes);
  const auto h = static_cast<std::size_t>(hidden);
  if (kind == ModelKind::kLogistic) return c == 2 ? p + 1 : c * p + c;
  return h * p + h + c * h + c;
}

Model init_model(const ModelShape& shape, Rng& rng) {
  if (shape.inputs < 1 || shape.classes < 2) {
    throw InvalidInput("model needs >= 1 input and >= 2 classes");
  }
  if (shape.kind == ModelKind::kMlp && shape.hidden < 1) {
    throw InvalidInput("mlp needs hidden width >= 1");
  }
  Model m{shape, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.dim()))};
  if (shape.kind == ModelKind::kMlp) {
    const int p = shape.inputs;
    const int h = shape.hidden;
    const int c = shape.classes;
    const double a1 = std::sqrt(6.0 / (p + h));
    const double a2 = std::sqrt(6.0 / (h + c));
    for (int i = 0; i < h * p; ++i) m.params[i] = a1 * (2.0 * uniform01(rng) - 1.0);
    for (int i = 0; i < c * h; ++i) {
      m.params[h * p + h + i] = a2 * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return m;
}

double loss(const ModelShape& shape, const Eigen::VectorXd& params,
            const Dataset& data) {
  check_shape(shape, params, data);
  if (data.size() == 0) throw InvalidInput("loss: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += sample_term(shape, params, row(data, i), data.labels[i], nullptr);
  }
  return total / static_cast<double>(data.size());
}

double loss(const Model& model, const Dataset& data) {
  return loss(model.shape, model.params, data);
}

double accuracy(const ModelShape& shape, const Eigen::VectorXd& params,
                const Dataset& data) {
  check_shape(shape, params, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    // Predicted class: the label with the smallest per-sample loss.
    int best = 0;
    double best_loss = 0.0;
    for (int c = 0; c < shape.classes; ++c) {
      const double l = sample_term(shape, params, row(data, i), c, nullptr);
      if (c == 0 || l < best_loss) {
        best = c;
        best_loss = l;
      }
    }
    correct += best == data.labels[i] ? 1 : 0;
  }
  return data.size() ? static_cast<double>(correct) / data.size() : 0.0;
}

Eigen::VectorXd full_gradient(const ModelShape& shape,
                              const Eigen::VectorXd& params,
                              const Dataset& data) {
  check_shape(shape, params, data);
  if (data.size() == 0) throw InvalidInput("gradient: empty shard");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    sample_term(shape, params, row(data, i), data.labels[i], &g);
  }
  return g / static_cast<double>(data.size());
}

Eigen::VectorXd minibatch_gradient(const ModelShape& shape,
                                   const Eigen::VectorXd& params,
                                   const Dataset& data, std::size_t batch_size,
                                   Rng& rng) {
  if (data.size() == 0) throw InvalidInput("minibatch_gradient: empty shard");
  if (batch_size < 1 || batch_size > data.size()) {
    throw InvalidInput("minibatch_gradient: batch size " +
                       std::to_string(batch_size) + " outside [1, " +
                       std::to_string(data.size()) + "]");
  }
  if (batch_size == data.size()) return full_gradient(shape, params, data);
  check_shape(shape, params, data);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.size());
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t i = uniform_index(rng, data.size());
    sample_term(shape, params, row(data, i), data.labels[i], &g);
  }
  return g / static_cast<double>(batch_size);
}

double finite_diff_check(const ModelShape& shape,
                         const Eigen::VectorXd& params, const Dataset& data,
                         double step) {
  if (!(step > 0.0)) throw InvalidInput("finite_diff_check: step must be > 0");
  const Eigen::VectorXd analytic = full_gradient(shape, params, data);
  const auto d = static_cast<std::size_t>(params.size());
  std::vector<std::size_t> coords(d);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (d > 200) {
    Rng rng(0x5eed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(200);
  }
  double worst = 0.0;
  Eigen::VectorXd probe = params;
  for (std::size_t k : coords) {
    const double orig = probe[k];
    probe[k] = orig + step;
    const double up = loss(shape, probe, data);
    probe[k] = orig - step;
    const double down = loss(shape, probe, data);
    probe[k] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

Dataset gen_synthetic(std::size_t n, int p, int num_classes, double separation,
                      std::uint64_t seed) {
  if (p < 1 || num_classes < 2 || n < static_cast<std::size_t>(num_classes)) {
    throw InvalidInput("gen_synthetic: need p >= 1, classes >= 2, n >= classes");
  }
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, p);
  if (num_classes == 2) {
    means(0, 0) = -0.5 * separation;
    means(1, 0) = 0.5 * separation;
  } else if (p >= num_classes) {
    for (int c = 0; c < num_classes; ++c) means(c, c) = separation / std::sqrt(2.0);
  } else if (p >= 2) {
    const double radius =
        separation / (2.0 * std::sin(std::numbers::pi / num_classes));
    for (int c = 0; c < num_classes; ++c) {
      const double angle = 2.0 * std::numbers::pi * c / num_classes;
      means(c, 0) = radius * std::cos(angle);
      means(c, 1) = radius * std::sin(angle);
    }
  } else {
    for (int c = 0; c < num_classes; ++c) {
      means(c, 0) = separation * (c - 0.5 * (num_classes - 1));
    }
  }

  Rng rng = derive_stream(seed, 0, 0, StreamPurpose::kData);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset data;
  data.num_classes = num_classes;
  data.features.resize(static_cast<Eigen::Index>(n), p);
  data.labels.resize(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = labels[i];
    for (int j = 0; j < p; ++j) {
      data.features(static_cast<Eigen::Index>(i), j) =
          means(labels[i], j) + noise(rng);
    }
  }
  return data;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("'" + path + "': truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("cannot open '" + images_path + "'");
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("cannot open '" + labels_path + "'");

  const std::uint32_t img_magic = read_be32(img, images_path);
  if (img_magic != 2051) {
    throw FormatError("'" + images_path + "': image magic " +
                      std::to_string(img_magic) + ", expected 2051");
  }
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  const std::uint32_t lab_magic = read_be32(lab, labels_path);
  if (lab_magic != 2049) {
    throw FormatError("'" + labels_path + "': label magic " +
                      std::to_string(lab_magic) + ", expected 2049");
  }
  const std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n_labels != n) {
    throw ConsistencyError("IDX count mismatch: " + std::to_string(n) +
                           " images vs " + std::to_string(n_labels) + " labels");
  }

  const std::size_t pixels = std::size_t{rows} * cols;
  Dataset data;
  data.features.resize(n, static_cast<Eigen::Index>(pixels));
  data.labels.resize(n);
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!img.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(pixels))) {
      throw FormatError("'" + images_path + "': truncated pixel data");
    }
    for (std::size_t j = 0; j < pixels; ++j) {
      data.features(i, static_cast<Eigen::Index>(j)) = buf[j] / 255.0;
    }
  }
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    char c;
    if (!lab.get(c)) throw FormatError("'" + labels_path + "': truncated labels");
    data.labels[i] = static_cast<unsigned char>(c);
    max_label = std::max(max_label, data.labels[i]);
  }
  data.num_classes = std::max(2, max_label + 1);
  return data;
}

std::vector<std::vector<std::size_t>> partition_noniid(const Dataset& data,
                                                       int n_nodes,
                                                       double label_fraction,
                                                       std::uint64_t seed) {
  if (n_nodes < 1) throw InvalidInput("partition_noniid: n_nodes must be >= 1");
  if (!(label_fraction >= 0.0 && label_fraction <= 1.0)) {
    throw InvalidInput("partition_noniid: label_fraction must be in [0,1]");
  }
  Rng rng = derive_stream(seed, 0, 0, StreamPurpose::kPartition);
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[data.labels[i]].push_back(i);
  }
  std::vector<std::vector<std::size_t>> shards(static_cast<std::size_t>(n_nodes));
  std::vector<std::size_t> pool;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    const auto own = static_cast<std::size_t>(
        std::llround(label_fraction * static_cast<double>(members.size())));
    auto& target = shards[c % static_cast<std::size_t>(n_nodes)];
    target.insert(target.end(), members.begin(), members.begin() + own);
    pool.insert(pool.end(), members.begin() + own, members.end());
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t k = 0; k < pool.size(); ++k) {
    shards[k % static_cast<std::size_t>(n_nodes)].push_back(pool[k]);
  }
  return shards;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), data.features.cols());
  out.labels.resize(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.features.row(static_cast<Eigen::Index>(k)) =
        data.features.row(static_cast<Eigen::Index>(indices[k]));
    out.labels[k] = data.labels[indices[k]];
  }
  return out;
}

void export_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  for (int j = 0; j < data.width(); ++j) out << 'x' << j << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.width(); ++j) {
      out << data.features(static_cast<Eigen::Index>(i), j) << ',';
    }
    out << data.labels[i] << '\n';
  }
}

}  // namespace lmdfl::learning
