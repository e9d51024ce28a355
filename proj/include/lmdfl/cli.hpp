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

// Experiment configuration, orchestration and reports behind the `lmdfl`
// command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lmdfl/engine.hpp"
#include "lmdfl/learning.hpp"

namespace lmdfl::cli {

// Environment variable that replaces the configured output directory.
inline constexpr const char* kOutputDirEnv = "LMDFL_OUTPUT_DIR";

struct DatasetSpec {
  enum class Kind { kSynthetic, kIdx } kind = Kind::kSynthetic;
  // synthetic
  std::size_t n = 2000;
  int features = 10;
  int classes = 10;
  double separation = 4.0;
  std::size_t test_n = 500;
  // idx (paths already resolved against the config's directory)
  std::string images;
  std::string labels;
  std::string test_images;
  std::string test_labels;
  std::size_t limit = 0;  // 0: use every sample
};

struct Arm {
  std::string name;
  engine::RunConfig config;
};

struct ExperimentSpec {
  std::filesystem::path output_dir = "lmdfl-out";
  std::uint64_t seed = 1;
  int n_nodes = 10;
  double label_fraction = 0.5;
  DatasetSpec dataset;
  std::vector<Arm> arms;
  std::optional<double> target_loss;
  // Raw "bounds" object (constants supplied by the user), possibly empty.
  nlohmann::json bounds = nlohmann::json::object();
};

// Strict parsing: unknown keys, type mismatches and constraint violations
// raise ConfigError with the offending key path. Relative dataset paths are
// resolved against `base_dir`.
ExperimentSpec parse_config_json(const nlohmann::json& doc,
                                 const std::filesystem::path& base_dir = ".");
ExperimentSpec parse_config(const std::filesystem::path& path);

struct ExperimentData {
  std::vector<learning::Dataset> shards;
  learning::Dataset test;
};

ExperimentData load_data(const ExperimentSpec& spec);

struct ArmResult {
  std::string name;
  std::optional<engine::MetricsLog> log;
  std::string error;  // empty on success
};

struct ExperimentResult {
  std::vector<ArmResult> arms;
  bool ok() const;
};

// Runs every arm on the same partition. A failing arm is recorded and the
// remaining arms still run. Writes <arm>.jsonl per arm and metrics.csv into
// the output directory, and prints the summary table to `report`.
ExperimentResult run_experiment(const ExperimentSpec& spec,
                                std::ostream& report);

// Combined CSV: arm,round,global_loss,distortion,edge_bits,codebook_bits,
// mean_s,min_s,max_s,eta. edge_bits is the largest cumulative count over
// the directed edges.
void write_csv(const std::vector<engine::MetricsLog>& logs, std::ostream& out);

struct SummaryRow {
  std::string arm;
  double final_loss = 0.0;
  std::uint64_t total_bits = 0;
  std::optional<int> rounds_to_target;
  std::optional<std::uint64_t> bits_to_target;
};

// Bits counted up to the first record whose global loss is <= target;
// includes codebook bits when present.
std::optional<std::uint64_t> bits_to_target(const engine::MetricsLog& log,
                                            double target);

// Target defaults to 1.1 x the best final loss over the logs.
std::vector<SummaryRow> summarize(const std::vector<engine::MetricsLog>& logs,
                                  std::optional<double> target,
                                  double* target_used = nullptr);
void print_summary(const std::vector<SummaryRow>& rows, double target,
                   const std::vector<std::string>& failures,
                   std::ostream& out);

// Reads every *.jsonl file of a directory, sorted by file name.
std::vector<engine::MetricsLog> load_logs(const std::filesystem::path& dir);

// Reads whitespace-separated samples in [0, 1].
std::vector<double> read_samples(const std::filesystem::path& path);

nlohmann::json fit_quantizer_report(const std::vector<double>& samples, int s,
                                    double tol, int max_iter);
nlohmann::json zeta_report(const std::vector<topology::Edge>& edges);
nlohmann::json bounds_report(const ExperimentSpec& spec);

// Entry point of the command-line tool; returns the process exit code.
int main_entry(int argc, char** argv);

}  // namespace lmdfl::cli
