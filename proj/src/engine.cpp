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

#include "lmdfl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <istream>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "lmdfl/errors.hpp"

namespace lmdfl::engine {

using quant::Scheme;

void RunConfig::validate() const {
  if (n_nodes < 2) throw ConfigError("n_nodes: expected integer >= 2");
  if (tau < 1) throw ConfigError("tau: expected integer >= 1");
  if (rounds < 1) throw ConfigError("rounds: expected integer >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ConfigError("eta: expected finite real >= 0");
  }
  if (!eta_schedule.empty() &&
      eta_schedule.size() != static_cast<std::size_t>(rounds)) {
    throw ConfigError("eta_schedule: expected exactly `rounds` entries");
  }
  for (double e : eta_schedule) {
    if (!(e >= 0.0) || !std::isfinite(e)) {
      throw ConfigError("eta_schedule: entries must be finite and >= 0");
    }
  }
  if (batch_size < 1) throw ConfigError("batch_size: expected integer >= 1");
  if (quantizer.scheme != Scheme::kLossless && quantizer.s < 1) {
    throw ConfigError("quantizer.s: expected integer >= 1");
  }
  if (quantizer.scheme == Scheme::kAlq && quantizer.s < 2) {
    throw ConfigError("quantizer.s: ALQ needs s >= 2");
  }
  if (adaptive.enabled) {
    if (adaptive.s_min < 1 || adaptive.s1 < adaptive.s_min ||
        adaptive.s1 > adaptive.s_max) {
      throw ConfigError(
          "adaptive: expected 1 <= s_min <= s1 <= s_max");
    }
    if (quantizer.scheme == Scheme::kLossless) {
      throw ConfigError("adaptive: lossless quantizer has no level count");
    }
  }
  if (topology == topology::TopologyKind::kRing &&
      !(ring_self_weight > 0.0 && ring_self_weight < 1.0)) {
    throw ConfigError("topology.self_weight: expected real in (0,1)");
  }
  if (model == learning::ModelKind::kMlp && hidden < 1) {
    throw ConfigError("model.hidden: expected integer >= 1");
  }
}

double RunConfig::eta_at(int round) const {
  if (eta_schedule.empty()) return eta;
  return eta_schedule.at(static_cast<std::size_t>(round - 1));
}

std::uint64_t RoundRecord::max_edge_bits() const {
  return edge_bits.empty() ? 0
                           : *std::max_element(edge_bits.begin(), edge_bits.end());
}

double RoundRecord::mean_s() const {
  if (s.empty()) return 0.0;
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

void local_update_phase(NodeState& node, const learning::ModelShape& shape,
                        int tau, double eta, std::size_t batch_size, Rng& rng,
                        int round, std::vector<Eigen::VectorXd>* gradients) {
  if (tau < 1) throw InvalidInput("local_update_phase: tau must be >= 1");
  const std::size_t batch = std::min(batch_size, node.shard.size());
  for (int t = 0; t < tau; ++t) {
    Eigen::VectorXd g =
        learning::minibatch_gradient(shape, node.params, node.shard, batch, rng);
    node.params -= eta * g;
    if (!node.params.allFinite()) {
      throw DivergenceError(round, "node " + std::to_string(node.id) +
                                       " produced a non-finite parameter");
    }
    if (gradients != nullptr) gradients->push_back(std::move(g));
  }
}

int adaptive_level_schedule(double f_initial, double f_current, int s1,
                            int s_min, int s_max) {
  if (!(f_initial > 0.0)) {
    throw InvalidInput("adaptive_level_schedule: F_initial must be > 0");
  }
  if (s_min < 1 || s1 < s_min || s1 > s_max) {
    throw InvalidInput("adaptive_level_schedule: need 1 <= s_min <= s1 <= s_max");
  }
  if (!(f_current > 0.0)) return s_max;
  const double raw = std::sqrt(f_initial / f_current) * s1;
  if (!(raw < static_cast<double>(s_max))) return s_max;
  return std::clamp(static_cast<int>(std::lround(raw)), s_min, s_max);
}

Eigen::VectorXd receive(NodeState& receiver, const Message& message) {
  Estimate* est = nullptr;
  if (message.from == receiver.id) {
    est = &receiver.self_estimate;
  } else {
    auto it = receiver.neighbor_estimates.find(message.from);
    if (it == receiver.neighbor_estimates.end()) {
      throw ProtocolError("node " + std::to_string(receiver.id) +
                          " received a payload from untracked node " +
                          std::to_string(message.from));
    }
    est = &it->second;
  }
  const quant::LevelTable* table = message.codebook.get();
  const Eigen::VectorXd drift = quant::dequantize(message.drift, table);
  Eigen::VectorXd displacement = quant::dequantize(message.displacement, table);
  est->value += est->pending + drift;
  Eigen::VectorXd contribution = est->value + displacement;
  est->pending = std::move(displacement);
  return contribution;
}

namespace {

std::shared_ptr<const quant::LevelTable> codebook_for(
    NodeState& node, const quant::QuantizerKind& kind,
    const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (kind.scheme == Scheme::kLossless) return nullptr;
  if (kind.scheme == Scheme::kQsgd || kind.scheme == Scheme::kNatural) {
    return std::make_shared<const quant::LevelTable>(quant::fixed_grid(kind));
  }
  std::vector<double> r = quant::normalized_magnitudes(a);
  const auto rb = quant::normalized_magnitudes(b);
  r.insert(r.end(), rb.begin(), rb.end());
  if (kind.scheme == Scheme::kAlq) {
    if (node.alq_levels.size() != static_cast<std::size_t>(kind.s)) {
      node.alq_levels = quant::alq_initial_levels(kind.s);
    }
    if (!r.empty()) {
      node.alq_levels = quant::alq_coordinate_step(
          node.alq_levels, quant::EmpiricalCdf(std::move(r)));
    }
    return std::make_shared<const quant::LevelTable>(node.alq_levels);
  }
  if (r.empty()) {
    // Both differentials are zero; any valid table decodes them to zero.
    std::vector<double> levels(static_cast<std::size_t>(kind.s));
    for (int j = 0; j < kind.s; ++j) levels[j] = (j + 0.5) / kind.s;
    return std::make_shared<const quant::LevelTable>(
        quant::LevelTable::from_levels(std::move(levels)));
  }
  auto fit = quant::fit_lloyd_max(r, {}, kind.s, kind.tol, kind.max_iter);
  return std::make_shared<const quant::LevelTable>(std::move(fit.table));
}

void add_distortion(std::vector<double>& samples, const Eigen::VectorXd& v,
                    const quant::QuantizedVector& q,
                    const quant::LevelTable* table) {
  const double norm2 = v.squaredNorm();
  if (norm2 == 0.0) return;
  samples.push_back((quant::dequantize(q, table) - v).squaredNorm() / norm2);
}

}  // namespace

CommStats communicate_phase(std::vector<NodeState>& nodes,
                            const topology::MixingMatrix& mixing,
                            const quant::QuantizerKind& quantizer, int round,
                            std::uint64_t seed, bool count_codebook_bits) {
  const auto n = nodes.size();
  if (static_cast<int>(n) != mixing.n()) {
    throw InvalidInput("communicate_phase: node count differs from mixing matrix");
  }
  CommStats stats;
  stats.payload_bits.assign(n, 0);
  stats.codebook_bits.assign(n, 0);

  std::vector<Message> outbox(n);
  for (std::size_t i = 0; i < n; ++i) {
    NodeState& node = nodes[i];
    const Eigen::VectorXd a = node.params - node.round_start;
    const Eigen::VectorXd b = node.round_start - node.prev_round_end;
    quant::QuantizerKind kind = quantizer;
    kind.s = node.s_current;
    auto codebook = codebook_for(node, kind, a, b);
    Rng rng = derive_stream(seed, i, static_cast<std::uint64_t>(round),
                            StreamPurpose::kQuantizer);
    Message& msg = outbox[i];
    msg.from = node.id;
    msg.codebook = codebook;
    msg.displacement = quant::quantize_vector(a, kind, codebook.get(), &rng);
    msg.drift = quant::quantize_vector(b, kind, codebook.get(), &rng);

    const auto d = static_cast<std::uint64_t>(a.size());
    if (kind.scheme == Scheme::kLossless) {
      stats.payload_bits[i] = 2 * quant::lossless_bits(d);
    } else {
      stats.payload_bits[i] =
          2 * quant::encoded_bits(d, static_cast<std::uint64_t>(kind.s));
      if (count_codebook_bits &&
          (kind.scheme == Scheme::kLloydMax || kind.scheme == Scheme::kAlq)) {
        stats.codebook_bits[i] = 2 * 32 * codebook->size();
      }
    }
    add_distortion(stats.distortion_samples, a, msg.displacement, codebook.get());
    add_distortion(stats.distortion_samples, b, msg.drift, codebook.get());
  }

  std::vector<Eigen::VectorXd> mixed(n);
  for (std::size_t i = 0; i < n; ++i) {
    NodeState& node = nodes[i];
    const int id = static_cast<int>(i);
    Eigen::VectorXd acc = mixing.weight(id, id) * receive(node, outbox[i]);
    for (int j : mixing.neighbors(id)) {
      acc += mixing.weight(j, id) * receive(node, outbox[j]);
    }
    mixed[i] = std::move(acc);
  }
  for (std::size_t i = 0; i < n; ++i) {
    nodes[i].prev_round_end = std::move(nodes[i].params);
    nodes[i].params = std::move(mixed[i]);
  }
  return stats;
}

topology::MixingMatrix mixing_for(const RunConfig& config) {
  topology::BuildOptions opts;
  opts.ring_self_weight = config.ring_self_weight;
  opts.edges = config.edges;
  return topology::build_mixing(config.topology, config.n_nodes, opts);
}

Simulation::Simulation(RunConfig config,
                       const std::vector<learning::Dataset>& shards,
                       topology::MixingMatrix mixing)
    : config_(std::move(config)), mixing_(std::move(mixing)) {
  config_.validate();
  if (shards.size() != static_cast<std::size_t>(config_.n_nodes) ||
      mixing_.n() != config_.n_nodes) {
    throw ConfigError("n_nodes: " + std::to_string(config_.n_nodes) +
                      " nodes but " + std::to_string(shards.size()) +
                      " shards and a " + std::to_string(mixing_.n()) +
                      "-node mixing matrix");
  }
  int width = -1;
  int classes = 2;
  std::size_t total = 0;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (shards[i].size() == 0) {
      throw ConfigError("node " + std::to_string(i) + " received an empty shard");
    }
    shards[i].validate();
    if (width >= 0 && shards[i].width() != width) {
      throw ConfigError("shards disagree on feature width");
    }
    width = shards[i].width();
    classes = std::max(classes, shards[i].num_classes);
    total += shards[i].size();
  }
  shape_ = learning::ModelShape{config_.model, width, classes, config_.hidden};

  all_data_.num_classes = classes;
  all_data_.features.resize(static_cast<Eigen::Index>(total), width);
  all_data_.labels.reserve(total);
  Eigen::Index row = 0;
  for (const auto& shard : shards) {
    all_data_.features.middleRows(row, shard.features.rows()) = shard.features;
    row += shard.features.rows();
    all_data_.labels.insert(all_data_.labels.end(), shard.labels.begin(),
                            shard.labels.end());
  }

  // Every node starts from the same model (X_{1,0} has identical columns).
  Rng init = derive_stream(config_.seed, 0, 0, StreamPurpose::kInit);
  const learning::Model model = learning::init_model(shape_, init);
  const auto d = model.params.size();
  const int s_start = config_.adaptive.enabled ? config_.adaptive.s1
                                               : config_.quantizer.s;
  nodes_.resize(shards.size());
  for (std::size_t i = 0; i < shards.size(); ++i) {
    NodeState& node = nodes_[i];
    node.id = static_cast<int>(i);
    node.params = model.params;
    node.round_start = model.params;
    node.prev_round_end = Eigen::VectorXd::Zero(d);
    node.self_estimate = {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    for (int j : mixing_.neighbors(node.id)) {
      node.neighbor_estimates[j] = {Eigen::VectorXd::Zero(d),
                                    Eigen::VectorXd::Zero(d)};
    }
    node.shard = shards[i];
    node.s_current = s_start;
    node.initial_loss = learning::loss(shape_, node.params, node.shard);
  }
  log_.records.push_back(snapshot(nullptr));
}

Eigen::VectorXd Simulation::average_model() const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nodes_.front().params.size());
  for (const auto& node : nodes_) u += node.params;
  return u / static_cast<double>(nodes_.size());
}

Eigen::VectorXd Simulation::average_round_start() const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nodes_.front().params.size());
  for (const auto& node : nodes_) u += node.round_start;
  return u / static_cast<double>(nodes_.size());
}

Eigen::VectorXd Simulation::average_estimate() const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(nodes_.front().params.size());
  for (const auto& node : nodes_) u += node.self_estimate.value;
  return u / static_cast<double>(nodes_.size());
}

double Simulation::global_loss() const {
  return learning::loss(shape_, average_model(), all_data_);
}

RoundRecord Simulation::snapshot(const CommStats* stats) {
  RoundRecord rec;
  rec.round = round_;
  rec.global_loss = global_loss();
  for (const auto& node : nodes_) {
    rec.node_losses.push_back(learning::loss(shape_, node.params, node.shard));
    rec.s.push_back(config_.quantizer.scheme == Scheme::kLossless
                        ? 0
                        : node.s_current);
  }
  const auto n = nodes_.size();
  if (log_.records.empty()) {
    rec.edge_bits.assign(n, 0);
    rec.codebook_bits.assign(n, 0);
  } else {
    rec.edge_bits = log_.records.back().edge_bits;
    rec.codebook_bits = log_.records.back().codebook_bits;
  }
  if (stats != nullptr) {
    for (std::size_t i = 0; i < n; ++i) {
      rec.edge_bits[i] += stats->payload_bits[i];
      rec.codebook_bits[i] += stats->codebook_bits[i];
    }
    const auto& ds = stats->distortion_samples;
    rec.distortion = ds.empty() ? 0.0
                                : std::accumulate(ds.begin(), ds.end(), 0.0) /
                                      static_cast<double>(ds.size());
    rec.eta = config_.eta_at(round_);
  }
  return rec;
}

void Simulation::run_round() {
  const int k = round_ + 1;
  if (k > config_.rounds) throw ConfigError("rounds: all rounds already run");
  const double eta = config_.eta_at(k);

  for (auto& node : nodes_) {
    node.round_start = node.params;
    if (config_.adaptive.enabled) {
      const double f = learning::loss(shape_, node.params, node.shard);
      node.s_current = adaptive_level_schedule(
          node.initial_loss, f, config_.adaptive.s1, config_.adaptive.s_min,
          config_.adaptive.s_max);
    }
  }

  auto local = [&](NodeState& node) {
    Rng rng = derive_stream(config_.seed, static_cast<std::uint64_t>(node.id),
                            static_cast<std::uint64_t>(k),
                            StreamPurpose::kSampling);
    local_update_phase(node, shape_, config_.tau, eta, config_.batch_size, rng,
                       k);
  };
  if (config_.parallel) {
    std::vector<std::future<void>> jobs;
    jobs.reserve(nodes_.size());
    for (auto& node : nodes_) {
      jobs.push_back(std::async(std::launch::async, local, std::ref(node)));
    }
    for (auto& job : jobs) job.get();
  } else {
    for (auto& node : nodes_) local(node);
  }

  const CommStats stats = communicate_phase(nodes_, mixing_, config_.quantizer,
                                            k, config_.seed,
                                            config_.count_codebook_bits);
  for (const auto& node : nodes_) {
    if (!node.params.allFinite()) {
      throw DivergenceError(k, "non-finite parameter after mixing");
    }
  }
  round_ = k;
  log_.records.push_back(snapshot(&stats));
}

const MetricsLog& Simulation::run(const learning::Dataset* test) {
  while (round_ < config_.rounds) run_round();
  if (test != nullptr) {
    log_.test_accuracy = learning::accuracy(shape_, average_model(), *test);
  }
  return log_;
}

MetricsLog run_simulation(const RunConfig& config,
                          const std::vector<learning::Dataset>& shards,
                          const learning::Dataset* test) {
  config.validate();
  Simulation sim(config, shards, mixing_for(config));
  return sim.run(test);
}

void write_jsonl(const MetricsLog& log, std::ostream& out) {
  for (const auto& rec : log.records) {
    nlohmann::json j;
    j["arm"] = log.arm;
    j["round"] = rec.round;
    j["global_loss"] = rec.global_loss;
    j["node_losses"] = rec.node_losses;
    j["distortion"] = rec.distortion;
    j["edge_bits"] = rec.edge_bits;
    j["codebook_bits"] = rec.codebook_bits;
    j["s"] = rec.s;
    j["eta"] = rec.eta;
    if (log.test_accuracy && &rec == &log.records.back()) {
      j["test_accuracy"] = *log.test_accuracy;
    }
    out << j.dump() << '\n';
  }
}

MetricsLog read_jsonl(std::istream& in, const std::string& arm) {
  MetricsLog log;
  log.arm = arm;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    RoundRecord rec;
    rec.round = j.at("round").get<int>();
    rec.global_loss = j.at("global_loss").get<double>();
    rec.node_losses = j.at("node_losses").get<std::vector<double>>();
    rec.distortion = j.at("distortion").get<double>();
    rec.edge_bits = j.at("edge_bits").get<std::vector<std::uint64_t>>();
    rec.codebook_bits = j.at("codebook_bits").get<std::vector<std::uint64_t>>();
    rec.s = j.at("s").get<std::vector<int>>();
    rec.eta = j.at("eta").get<double>();
    if (j.contains("test_accuracy")) {
      log.test_accuracy = j["test_accuracy"].get<double>();
    }
    if (j.contains("arm")) log.arm = j["arm"].get<std::string>();
    log.records.push_back(std::move(rec));
  }
  return log;
}

}  // namespace lmdfl::engine
