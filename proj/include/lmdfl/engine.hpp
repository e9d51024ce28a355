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

// Decentralized training rounds: tau local SGD steps per node, then a
// quantized exchange of two differentials per node,
//   A = x_{k,tau} - x_k          (this round's local displacement)
//   B = x_k - x_{k-1,tau}        (last round's mixing correction)
// Receivers track estimates  x^_k = x^_{k-1} + Q(A_{k-1}) + Q(B_k)  and mix
//   x_{k+1}^(i) = sum_j c_ji (x^_k^(j) + Q(A_k^(j))).

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmdfl/learning.hpp"
#include "lmdfl/quantizers.hpp"
#include "lmdfl/random.hpp"
#include "lmdfl/topology.hpp"

namespace lmdfl::engine {

struct AdaptiveSchedule {
  bool enabled = false;
  int s1 = 4;
  int s_min = 2;
  int s_max = 1024;
};

struct RunConfig {
  int n_nodes = 10;
  int tau = 4;
  double eta = 0.001;
  // Optional per-round learning rates; overrides `eta` when non-empty and
  // must then hold `rounds` entries.
  std::vector<double> eta_schedule;
  int rounds = 50;
  std::size_t batch_size = 32;
  quant::QuantizerKind quantizer;
  AdaptiveSchedule adaptive;
  topology::TopologyKind topology = topology::TopologyKind::kRing;
  double ring_self_weight = 1.0 / 3.0;
  std::vector<topology::Edge> edges;
  learning::ModelKind model = learning::ModelKind::kLogistic;
  int hidden = 8;
  std::uint64_t seed = 1;
  // Charge 32 bits per level for the data-dependent codebook of every
  // Lloyd-Max/ALQ message (tracked separately from the payload bits).
  bool count_codebook_bits = false;
  // Run local updates on worker threads; results are identical either way.
  bool parallel = false;

  void validate() const;
  double eta_at(int round) const;
};

// Running estimate of one peer (or of the node itself).
struct Estimate {
  Eigen::VectorXd value;    // x^_{k}
  Eigen::VectorXd pending;  // decoded Q(A_{k-1}), folded in next round
};

struct NodeState {
  int id = 0;
  Eigen::VectorXd params;          // x_k at round start, x_{k,t} while local
  Eigen::VectorXd round_start;     // x_k
  Eigen::VectorXd prev_round_end;  // x_{k-1,tau}; zero before round 1
  std::map<int, Estimate> neighbor_estimates;
  Estimate self_estimate;
  learning::Dataset shard;
  int s_current = 0;
  double initial_loss = 0.0;       // F_i(x_1)
  quant::LevelTable alq_levels;    // persists across rounds (ALQ only)
};

struct Message {
  int from = 0;
  quant::QuantizedVector displacement;  // Q(A_k)
  quant::QuantizedVector drift;         // Q(B_k)
  std::shared_ptr<const quant::LevelTable> codebook;
};

// Record k (k >= 1) describes round k: losses of the models *after* its
// communication phase, the level counts and learning rate used during it and
// bits accumulated through it. Record 0 is the initial state.
struct RoundRecord {
  int round = 0;
  double global_loss = 0.0;               // F(u_{k+1})
  std::vector<double> node_losses;        // F_i(x_{k+1}^(i))
  double distortion = 0.0;                // mean ||Q(v)-v||^2/||v||^2
  std::vector<std::uint64_t> edge_bits;   // cumulative, per directed edge out of node i
  std::vector<std::uint64_t> codebook_bits;  // cumulative sidecar bits, same layout
  std::vector<int> s;                     // level count per node
  double eta = 0.0;

  std::uint64_t max_edge_bits() const;
  double mean_s() const;
};

struct MetricsLog {
  std::string arm;
  std::vector<RoundRecord> records;
  std::optional<double> test_accuracy;

  const RoundRecord& final() const { return records.back(); }
};

// Performs exactly tau SGD steps on node.params. `gradients`, when given,
// receives each sampled gradient.
void local_update_phase(NodeState& node, const learning::ModelShape& shape,
                        int tau, double eta, std::size_t batch_size, Rng& rng,
                        int round,
                        std::vector<Eigen::VectorXd>* gradients = nullptr);

// Clamp(round(sqrt(F_initial / F_current) * s1), s_min, s_max); returns s_max
// once the loss reaches zero.
int adaptive_level_schedule(double f_initial, double f_current, int s1,
                            int s_min, int s_max);

struct CommStats {
  std::vector<std::uint64_t> payload_bits;   // per sender, per edge, this round
  std::vector<std::uint64_t> codebook_bits;  // per sender, per edge, this round
  std::vector<double> distortion_samples;
};

// Builds both payloads per node, delivers them and mixes. Every node must
// hold x_{k,tau} in `params` and x_k in `round_start`.
CommStats communicate_phase(std::vector<NodeState>& nodes,
                            const topology::MixingMatrix& mixing,
                            const quant::QuantizerKind& quantizer, int round,
                            std::uint64_t seed, bool count_codebook_bits);

// Folds a payload into the receiver's estimate of the sender and returns the
// sender's mixing contribution x^_k + Q(A_k). Throws ProtocolError for a
// sender the receiver does not track.
Eigen::VectorXd receive(NodeState& receiver, const Message& message);

class Simulation {
 public:
  Simulation(RunConfig config, const std::vector<learning::Dataset>& shards,
             topology::MixingMatrix mixing);

  void run_round();
  const MetricsLog& run(const learning::Dataset* test = nullptr);

  int rounds_done() const noexcept { return round_; }
  const RunConfig& config() const noexcept { return config_; }
  const learning::ModelShape& shape() const noexcept { return shape_; }
  const std::vector<NodeState>& nodes() const noexcept { return nodes_; }
  const topology::MixingMatrix& mixing() const noexcept { return mixing_; }
  const MetricsLog& log() const noexcept { return log_; }

  // u: mean of the current node parameters.
  Eigen::VectorXd average_model() const;
  // Mean of x_k over nodes for the last completed round k.
  Eigen::VectorXd average_round_start() const;
  // u^_k: mean of the tracked estimates after the last completed round.
  Eigen::VectorXd average_estimate() const;
  double global_loss() const;

 private:
  RoundRecord snapshot(const CommStats* stats);

  RunConfig config_;
  learning::ModelShape shape_;
  topology::MixingMatrix mixing_;
  std::vector<NodeState> nodes_;
  learning::Dataset all_data_;
  MetricsLog log_;
  int round_ = 0;
};

MetricsLog run_simulation(const RunConfig& config,
                          const std::vector<learning::Dataset>& shards,
                          const learning::Dataset* test = nullptr);

topology::MixingMatrix mixing_for(const RunConfig& config);

// One JSON object per record.
void write_jsonl(const MetricsLog& log, std::ostream& out);
MetricsLog read_jsonl(std::istream& in, const std::string& arm);

}  // namespace lmdfl::engine
