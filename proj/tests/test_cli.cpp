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

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "lmdfl/cli.hpp"
#include "lmdfl/errors.hpp"

using namespace lmdfl;
using namespace lmdfl::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lmdfl-test-" + name + "-" +
                                                  std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json small_doc(const fs::path& out) {
  return json{{"output_dir", out.string()},
              {"seed", 3},
              {"n_nodes", 4},
              {"dataset", {{"kind", "synthetic"}, {"n", 300}, {"features", 5},
                           {"classes", 3}, {"test_n", 60}}},
              {"defaults", {{"rounds", 8}, {"tau", 2}, {"eta", 0.05}, {"batch_size", 8}}}};
}

std::string config_error(const json& doc) {
  try {
    parse_config_json(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " \"" LMDFL_CLI_PATH "\" " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("minimal config gets the documented defaults") {
  const auto spec = parse_config_json(json::object());
  CHECK(spec.output_dir == fs::path("lmdfl-out"));
  CHECK(spec.seed == 1);
  CHECK(spec.n_nodes == 10);
  CHECK(spec.label_fraction == 0.5);
  CHECK(spec.dataset.kind == DatasetSpec::Kind::kSynthetic);
  CHECK(spec.dataset.n == 2000);
  REQUIRE(spec.arms.size() == 1);
  const auto& c = spec.arms[0].config;
  CHECK(spec.arms[0].name == "default");
  CHECK(c.tau == 4);
  CHECK(c.eta == 0.001);
  CHECK(c.rounds == 50);
  CHECK(c.batch_size == 32);
  CHECK(c.quantizer.scheme == quant::Scheme::kLloydMax);
  CHECK(c.quantizer.s == 16);
  CHECK(c.topology == topology::TopologyKind::kRing);
  CHECK(!c.adaptive.enabled);
  CHECK(c.n_nodes == 10);
  CHECK(c.seed == 1);
}

TEST_CASE("unknown keys are named") {
  auto doc = json::object();
  doc["defaults"] = {{"learnig_rate", 0.1}};
  const auto msg = config_error(doc);
  CHECK(msg.find("learnig_rate") != std::string::npos);
  CHECK(msg.find("unknown key") != std::string::npos);
  CHECK(config_error(json{{"sead", 1}}).find("\"sead\"") != std::string::npos);
  CHECK(config_error(json{{"arms", {{{"name", "a"}, {"quantizer", {{"levels", 3}}}}}}})
            .find("arms[0].quantizer.levels") != std::string::npos);
}

TEST_CASE("constraint and type violations") {
  CHECK(config_error(json{{"defaults", {{"tau", 0}}}}).find("tau >= 1") != std::string::npos);
  CHECK(config_error(json{{"defaults", {{"eta", "fast"}}}}).find("eta") != std::string::npos);
  CHECK(!config_error(json{{"defaults", {{"quantizer", {{"scheme", "zip"}}}}}}).empty());
  CHECK(!config_error(json{{"arms", json::array()}}).empty());
  CHECK(!config_error(json{{"arms", {{{"name", "a"}}, {{"name", "a"}}}}}).empty());
  CHECK(!config_error(json{{"arms", {{{"name", "../x"}}}}}).empty());
  CHECK(!config_error(json{{"n_nodes", 1}}).empty());
  CHECK(!config_error(json{{"defaults", {{"topology", {{"kind", "custom"}}}}}}).empty());
}

TEST_CASE("arms merge over defaults") {
  json doc = small_doc("out");
  doc["arms"] = {{{"name", "lm"}},
                 {{"name", "q"}, {"quantizer", {{"scheme", "qsgd"}, {"s", 4}}}, {"tau", 5}}};
  const auto spec = parse_config_json(doc);
  REQUIRE(spec.arms.size() == 2);
  CHECK(spec.arms[0].config.tau == 2);
  CHECK(spec.arms[1].config.tau == 5);
  CHECK(spec.arms[1].config.eta == 0.05);
  CHECK(spec.arms[1].config.quantizer.scheme == quant::Scheme::kQsgd);
  CHECK(spec.arms[1].config.quantizer.s == 4);
  CHECK(spec.arms[1].config.n_nodes == 4);
}

TEST_CASE("config files resolve relative paths and honour the env override") {
  const auto dir = scratch("paths");
  std::ofstream(dir / "c.json") << json{{"output_dir", "results"}}.dump();
  ::unsetenv(kOutputDirEnv);
  CHECK(parse_config(dir / "c.json").output_dir == dir / "results");
  ::setenv(kOutputDirEnv, (dir / "elsewhere").c_str(), 1);
  CHECK(parse_config(dir / "c.json").output_dir == dir / "elsewhere");
  ::unsetenv(kOutputDirEnv);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(parse_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(parse_config(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("identical arms give identical logs; CSV is a projection of the JSONL") {
  const auto dir = scratch("arms");
  json doc = small_doc(dir);
  doc["arms"] = {{{"name", "a"}}, {{"name", "b"}},
                 {{"name", "lossless"}, {"quantizer", {{"scheme", "lossless"}}}},
                 {{"name", "qsgd"}, {"quantizer", {{"scheme", "qsgd"}}}}};
  const auto spec = parse_config_json(doc);
  std::stringstream report;
  const auto result = run_experiment(spec, report);
  REQUIRE(result.ok());
  CHECK(report.str().find("lossless") != std::string::npos);

  const auto logs = load_logs(dir);
  REQUIRE(logs.size() == 4);
  CHECK(logs[0].arm == "a");
  for (std::size_t k = 0; k < logs[0].records.size(); ++k) {
    CHECK(logs[0].records[k].global_loss == logs[1].records[k].global_loss);
    CHECK(logs[0].records[k].node_losses == logs[1].records[k].node_losses);
    CHECK(logs[0].records[k].distortion == logs[1].records[k].distortion);
    CHECK(logs[0].records[k].edge_bits == logs[1].records[k].edge_bits);
  }

  // Lossless: most bits per round. Lloyd-Max: lower distortion than QSGD.
  const auto& lm = logs[0].final();
  const auto& ll = logs[2].final();
  const auto& qs = logs[3].final();
  CHECK(ll.max_edge_bits() > lm.max_edge_bits());
  double d_lm = 0, d_qs = 0;
  for (std::size_t k = 1; k < logs[0].records.size(); ++k) {
    d_lm += logs[0].records[k].distortion;
    d_qs += logs[3].records[k].distortion;
  }
  CHECK(d_lm < d_qs);
  CHECK(qs.max_edge_bits() == lm.max_edge_bits());  // charged at the nominal s

  // Each CSV row equals the projection of the matching JSONL record.
  std::ifstream csv(dir / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "arm,round,global_loss,distortion,edge_bits,codebook_bits,mean_s,min_s,max_s,eta");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const auto cells = split(line);
    REQUIRE(cells.size() == 10);
    const engine::MetricsLog* log = nullptr;
    for (const auto& l : logs) {
      if (l.arm == cells[0]) log = &l;
    }
    REQUIRE(log != nullptr);
    const auto& r = log->records.at(std::stoul(cells[1]));
    CHECK(std::stod(cells[2]) == r.global_loss);
    CHECK(std::stod(cells[3]) == doctest::Approx(r.distortion).epsilon(1e-12));
    CHECK(std::stoull(cells[4]) == r.max_edge_bits());
    CHECK(std::stod(cells[6]) == doctest::Approx(r.mean_s()));
    CHECK(std::stoi(cells[7]) == *std::min_element(r.s.begin(), r.s.end()));
    CHECK(std::stoi(cells[8]) == *std::max_element(r.s.begin(), r.s.end()));
    CHECK(std::stod(cells[9]) == doctest::Approx(r.eta));
    ++rows;
  }
  CHECK(rows == 4 * logs[0].records.size());
  fs::remove_all(dir);
}

TEST_CASE("a failing arm does not stop the others") {
  const auto dir = scratch("fail");
  json doc = small_doc(dir);
  doc["arms"] = {{{"name", "boom"}, {"eta", 1e300}}, {{"name", "fine"}}};
  const auto spec = parse_config_json(doc);
  std::stringstream report;
  const auto result = run_experiment(spec, report);
  CHECK(!result.ok());
  CHECK(!result.arms[0].error.empty());
  CHECK(result.arms[1].log.has_value());
  CHECK(fs::exists(dir / "fine.jsonl"));
  fs::remove_all(dir);
}

TEST_CASE("bits to target and summary") {
  engine::MetricsLog log;
  log.arm = "x";
  for (int k = 0; k < 4; ++k) {
    engine::RoundRecord r;
    r.round = k;
    r.global_loss = 1.0 - 0.2 * k;
    r.edge_bits = {std::uint64_t(100) * k, std::uint64_t(90) * k};
    r.codebook_bits = {std::uint64_t(10) * k, 0};
    r.s = {4, 4};
    log.records.push_back(r);
  }
  CHECK(bits_to_target(log, 0.65) == std::optional<std::uint64_t>(220));
  CHECK(!bits_to_target(log, 0.1).has_value());
  CHECK(bits_to_target(log, 2.0) == std::optional<std::uint64_t>(0));
  double t = 0.0;
  const auto rows = summarize({log}, std::nullopt, &t);
  CHECK(t == doctest::Approx(1.1 * 0.4));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].rounds_to_target == std::optional<int>(3));
}

TEST_CASE("subcommand reports") {
  const auto z = zeta_report({{0, 1}, {1, 2}, {2, 0}});
  CHECK(z["zeta"].get<double>() < 1.0);
  CHECK(z["connected"].get<bool>());
  const auto dz = zeta_report({{0, 1}, {2, 3}});
  CHECK(dz["alpha"].is_null());

  std::vector<double> samples;
  for (int i = 0; i < 1000; ++i) samples.push_back((i + 0.5) / 1000.0);
  const auto f = fit_quantizer_report(samples, 4, 1e-9, 200);
  CHECK(f["levels"].size() == 4);
  CHECK(f["distortion"].get<double>() == doctest::Approx(1.0 / (12.0 * 16.0)).epsilon(0.02));

  const auto dir = scratch("samples");
  std::ofstream(dir / "s.txt") << "0.1 0.2\n0.9\n";
  CHECK(read_samples(dir / "s.txt").size() == 3);
  std::ofstream(dir / "bad.txt") << "0.1 1.5\n";
  CHECK_THROWS(read_samples(dir / "bad.txt"));
  fs::remove_all(dir);

  json doc = small_doc("unused");
  doc["bounds"] = {{"L", 1.0}, {"sigma2", 1.0}, {"delta2", 0.0}, {"F_gap", 1.0}};
  const auto b = bounds_report(parse_config_json(doc));
  REQUIRE(b["arms"].contains("default"));
  CHECK(b["arms"]["default"].contains("optimal_s"));
}

TEST_CASE("command-line exit codes") {
  const auto dir = scratch("exit");
  json doc = small_doc(dir / "out");
  std::ofstream(dir / "ok.json") << doc.dump();
  json typo = doc;
  typo["defaults"]["learnig_rate"] = 0.1;
  std::ofstream(dir / "typo.json") << typo.dump();
  json boom = doc;
  boom["output_dir"] = (dir / "boom").string();
  boom["defaults"]["eta"] = 1e300;
  std::ofstream(dir / "boom.json") << boom.dump();
  std::ofstream(dir / "edges.txt") << "0 1\n1 2\n2 3\n3 0\n";

  CHECK(run_cli("run " + (dir / "typo.json").string()) == 2);
  CHECK(run_cli("run " + (dir / "boom.json").string()) == 1);
  CHECK(run_cli("run " + (dir / "ok.json").string(),
                std::string(kOutputDirEnv) + "=" + (dir / "env").string()) == 0);
  CHECK(fs::exists(dir / "env" / "default.jsonl"));
  CHECK(fs::exists(dir / "env" / "metrics.csv"));
  CHECK(!fs::exists(dir / "out"));
  CHECK(run_cli("compare " + (dir / "env").string()) == 0);
  CHECK(run_cli("zeta " + (dir / "edges.txt").string()) == 0);
  CHECK(run_cli("zeta " + (dir / "nope.txt").string()) == 1);
  CHECK(run_cli("bounds " + (dir / "ok.json").string()) == 0);
  CHECK(run_cli("") != 0);
  fs::remove_all(dir);
}
