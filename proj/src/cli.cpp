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

#include "lmdfl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "lmdfl/analysis.hpp"
#include "lmdfl/errors.hpp"
#include "lmdfl/quantizers.hpp"
#include "lmdfl/topology.hpp"

namespace lmdfl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) {
    throw ConfigError((path.empty() ? std::string("config") : path) +
                      ": expected a JSON object");
  }
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  require_object(j, path);
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) {
      throw ConfigError("unknown key \"" + join_path(path, item.key()) + "\"");
    }
  }
}

const json* field(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

long long get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  return j.get<long long>();
}

double get_real(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path + ": expected true or false");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  return j.get<std::string>();
}

template <typename T>
void read_int(const json& obj, const char* key, const std::string& path,
              T& out, long long min_value) {
  if (const json* v = field(obj, key)) {
    const std::string p = join_path(path, key);
    const long long x = get_int(*v, p);
    if (x < min_value) {
      throw ConfigError(p + ": expected integer >= " + std::to_string(min_value));
    }
    out = static_cast<T>(x);
  }
}

void read_real(const json& obj, const char* key, const std::string& path,
               double& out) {
  if (const json* v = field(obj, key)) out = get_real(*v, join_path(path, key));
}

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (base / path).string();
}

quant::QuantizerKind parse_quantizer(const json& j, const std::string& path) {
  check_keys(j, path, {"scheme", "s", "tol", "max_iter"});
  quant::QuantizerKind kind;
  if (const json* v = field(j, "scheme")) {
    const std::string name = get_string(*v, path + ".scheme");
    try {
      kind.scheme = quant::scheme_from_string(name);
    } catch (const InvalidInput&) {
      throw ConfigError(path + ".scheme: expected one of lloyd_max, qsgd, "
                               "natural, alq, lossless (got \"" + name + "\")");
    }
  }
  read_int(j, "s", path, kind.s, 1);
  read_real(j, "tol", path, kind.tol);
  if (!(kind.tol >= 0.0)) throw ConfigError(path + ".tol: expected real >= 0");
  read_int(j, "max_iter", path, kind.max_iter, 1);
  return kind;
}

engine::AdaptiveSchedule parse_adaptive(const json& j, const std::string& path) {
  check_keys(j, path, {"enabled", "s1", "s_min", "s_max"});
  engine::AdaptiveSchedule a;
  a.enabled = true;
  if (const json* v = field(j, "enabled")) a.enabled = get_bool(*v, path + ".enabled");
  read_int(j, "s1", path, a.s1, 1);
  read_int(j, "s_min", path, a.s_min, 1);
  read_int(j, "s_max", path, a.s_max, 1);
  return a;
}

std::vector<topology::Edge> parse_edges(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of [i, j] pairs");
  std::vector<topology::Edge> edges;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string p = path + "[" + std::to_string(k) + "]";
    const json& e = j[k];
    if (!e.is_array() || e.size() != 2) throw ConfigError(p + ": expected [i, j]");
    const long long a = get_int(e[0], p + "[0]");
    const long long b = get_int(e[1], p + "[1]");
    if (a < 0 || b < 0) throw ConfigError(p + ": node ids must be >= 0");
    edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
  }
  return edges;
}

void parse_topology(const json& j, const std::string& path,
                    const fs::path& base, engine::RunConfig& cfg) {
  check_keys(j, path, {"kind", "self_weight", "edges", "edge_file"});
  if (const json* v = field(j, "kind")) {
    const std::string name = get_string(*v, path + ".kind");
    try {
      cfg.topology = topology::topology_from_string(name);
    } catch (const InvalidInput&) {
      throw ConfigError(path + ".kind: expected one of ring, complete, "
                               "disconnected, custom (got \"" + name + "\")");
    }
  }
  read_real(j, "self_weight", path, cfg.ring_self_weight);
  if (const json* v = field(j, "edges")) cfg.edges = parse_edges(*v, path + ".edges");
  if (const json* v = field(j, "edge_file")) {
    if (field(j, "edges") != nullptr) {
      throw ConfigError(path + ": give either edges or edge_file, not both");
    }
    cfg.edges = topology::read_edge_list(resolve(base, get_string(*v, path + ".edge_file")));
  }
  if (cfg.topology == topology::TopologyKind::kCustom && cfg.edges.empty()) {
    throw ConfigError(path + ": custom topology needs edges or edge_file");
  }
}

void parse_model(const json& j, const std::string& path, engine::RunConfig& cfg) {
  check_keys(j, path, {"kind", "hidden"});
  if (const json* v = field(j, "kind")) {
    const std::string name = get_string(*v, path + ".kind");
    try {
      cfg.model = learning::model_from_string(name);
    } catch (const InvalidInput&) {
      throw ConfigError(path + ".kind: expected logistic or mlp (got \"" + name + "\")");
    }
  }
  read_int(j, "hidden", path, cfg.hidden, 1);
}

engine::RunConfig parse_run(const json& j, const std::string& path,
                            const fs::path& base, double default_eta) {
  check_keys(j, path,
             {"name", "tau", "eta", "eta_schedule", "rounds", "batch_size",
              "quantizer", "adaptive", "topology", "model",
              "count_codebook_bits", "parallel"});
  engine::RunConfig cfg;
  cfg.eta = default_eta;
  if (const json* v = field(j, "tau")) {
    const long long tau = get_int(*v, path + ".tau");
    if (tau < 1) throw ConfigError(path + ".tau: constraint tau >= 1 violated");
    cfg.tau = static_cast<int>(tau);
  }
  read_real(j, "eta", path, cfg.eta);
  if (const json* v = field(j, "eta_schedule")) {
    if (!v->is_array()) throw ConfigError(path + ".eta_schedule: expected an array");
    for (std::size_t k = 0; k < v->size(); ++k) {
      cfg.eta_schedule.push_back(
          get_real((*v)[k], path + ".eta_schedule[" + std::to_string(k) + "]"));
    }
  }
  read_int(j, "rounds", path, cfg.rounds, 1);
  read_int(j, "batch_size", path, cfg.batch_size, 1);
  if (const json* v = field(j, "quantizer")) {
    cfg.quantizer = parse_quantizer(*v, path + ".quantizer");
  }
  if (const json* v = field(j, "adaptive")) {
    cfg.adaptive = parse_adaptive(*v, path + ".adaptive");
  }
  if (const json* v = field(j, "topology")) {
    parse_topology(*v, path + ".topology", base, cfg);
  }
  if (const json* v = field(j, "model")) parse_model(*v, path + ".model", cfg);
  if (const json* v = field(j, "count_codebook_bits")) {
    cfg.count_codebook_bits = get_bool(*v, path + ".count_codebook_bits");
  }
  if (const json* v = field(j, "parallel")) {
    cfg.parallel = get_bool(*v, path + ".parallel");
  }
  return cfg;
}

DatasetSpec parse_dataset(const json& j, const fs::path& base) {
  const std::string path = "dataset";
  require_object(j, path);
  DatasetSpec d;
  std::string kind = "synthetic";
  if (const json* v = field(j, "kind")) kind = get_string(*v, path + ".kind");
  if (kind == "synthetic") {
    check_keys(j, path, {"kind", "n", "features", "classes", "separation", "test_n"});
    read_int(j, "n", path, d.n, 1);
    read_int(j, "features", path, d.features, 1);
    read_int(j, "classes", path, d.classes, 2);
    read_real(j, "separation", path, d.separation);
    if (!(d.separation >= 0.0)) {
      throw ConfigError(path + ".separation: expected real >= 0");
    }
    read_int(j, "test_n", path, d.test_n, 1);
  } else if (kind == "idx") {
    d.kind = DatasetSpec::Kind::kIdx;
    check_keys(j, path, {"kind", "images", "labels", "test_images",
                         "test_labels", "limit"});
    for (const char* key : {"images", "labels"}) {
      if (field(j, key) == nullptr) {
        throw ConfigError(path + "." + key + ": required for idx datasets");
      }
    }
    d.images = resolve(base, get_string(j["images"], path + ".images"));
    d.labels = resolve(base, get_string(j["labels"], path + ".labels"));
    if (const json* v = field(j, "test_images")) {
      d.test_images = resolve(base, get_string(*v, path + ".test_images"));
    }
    if (const json* v = field(j, "test_labels")) {
      d.test_labels = resolve(base, get_string(*v, path + ".test_labels"));
    }
    if (d.test_images.empty() != d.test_labels.empty()) {
      throw ConfigError(path + ": test_images and test_labels go together");
    }
    read_int(j, "limit", path, d.limit, 0);
  } else {
    throw ConfigError(path + ".kind: expected synthetic or idx (got \"" + kind + "\")");
  }
  return d;
}

bool safe_name(const std::string& name) {
  if (name.empty() || name[0] == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ||
           c == '.';
  });
}

void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::uint64_t record_bits(const engine::RoundRecord& rec) {
  std::uint64_t best = 0;
  for (std::size_t i = 0; i < rec.edge_bits.size(); ++i) {
    const std::uint64_t extra =
        i < rec.codebook_bits.size() ? rec.codebook_bits[i] : 0;
    best = std::max(best, rec.edge_bits[i] + extra);
  }
  return best;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ExperimentSpec parse_config_json(const json& doc, const fs::path& base_dir) {
  check_keys(doc, "", {"output_dir", "seed", "n_nodes", "label_fraction",
                       "dataset", "defaults", "arms", "target_loss", "bounds"});
  ExperimentSpec spec;
  if (const json* v = field(doc, "output_dir")) {
    spec.output_dir = resolve(base_dir, get_string(*v, "output_dir"));
  }
  if (const json* v = field(doc, "seed")) {
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      throw ConfigError("seed: expected integer >= 0");
    }
    spec.seed = v->get<std::uint64_t>();
  }
  read_int(doc, "n_nodes", "", spec.n_nodes, 2);
  read_real(doc, "label_fraction", "", spec.label_fraction);
  if (!(spec.label_fraction >= 0.0 && spec.label_fraction <= 1.0)) {
    throw ConfigError("label_fraction: expected real in [0, 1]");
  }
  if (const json* v = field(doc, "dataset")) spec.dataset = parse_dataset(*v, base_dir);
  if (const json* v = field(doc, "target_loss")) {
    spec.target_loss = get_real(*v, "target_loss");
    if (!(*spec.target_loss > 0.0)) throw ConfigError("target_loss: expected real > 0");
  }
  if (const json* v = field(doc, "bounds")) {
    check_keys(*v, "bounds", {"L", "sigma2", "delta2", "F_gap", "B", "B0"});
    for (const auto& item : v->items()) {
      const double x = get_real(item.value(), "bounds." + item.key());
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw ConfigError("bounds." + item.key() + ": expected finite real >= 0");
      }
    }
    spec.bounds = *v;
  }

  // Learning rate per the experimental setup: 0.002 on image data, else 0.001.
  const double default_eta =
      spec.dataset.kind == DatasetSpec::Kind::kIdx ? 0.002 : 0.001;
  json defaults = json::object();
  if (const json* v = field(doc, "defaults")) {
    require_object(*v, "defaults");
    if (v->contains("name")) throw ConfigError("unknown key \"defaults.name\"");
    parse_run(*v, "defaults", base_dir, default_eta);
    defaults = *v;
  }

  const json* arms = field(doc, "arms");
  if (arms == nullptr) {
    spec.arms.push_back({"default", parse_run(defaults, "defaults", base_dir, default_eta)});
  } else {
    if (!arms->is_array() || arms->empty()) {
      throw ConfigError("arms: expected a non-empty array of objects");
    }
    std::set<std::string> names;
    for (std::size_t k = 0; k < arms->size(); ++k) {
      const std::string path = "arms[" + std::to_string(k) + "]";
      const json& arm = (*arms)[k];
      require_object(arm, path);
      json merged = defaults;
      merged.merge_patch(arm);
      Arm a;
      a.name = "arm" + std::to_string(k);
      if (const json* v = field(arm, "name")) a.name = get_string(*v, path + ".name");
      if (!safe_name(a.name)) {
        throw ConfigError(path + ".name: expected letters, digits, '-', '_' or '.'");
      }
      if (!names.insert(a.name).second) {
        throw ConfigError(path + ".name: duplicate arm name \"" + a.name + "\"");
      }
      a.config = parse_run(merged, path, base_dir, default_eta);
      spec.arms.push_back(std::move(a));
    }
  }
  for (std::size_t k = 0; k < spec.arms.size(); ++k) {
    auto& cfg = spec.arms[k].config;
    cfg.n_nodes = spec.n_nodes;
    cfg.seed = spec.seed;
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("arms[" + std::to_string(k) + "]." + e.what());
    }
    if (cfg.topology == topology::TopologyKind::kCustom &&
        topology::node_count(cfg.edges) > spec.n_nodes) {
      throw ConfigError("arms[" + std::to_string(k) +
                        "].topology.edges: node id exceeds n_nodes - 1");
    }
  }
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env) {
    spec.output_dir = env;
  }
  return spec;
}

ExperimentSpec parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return parse_config_json(doc, path.parent_path());
}

ExperimentData load_data(const ExperimentSpec& spec) {
  const DatasetSpec& ds = spec.dataset;
  learning::Dataset full;
  ExperimentData out;
  if (ds.kind == DatasetSpec::Kind::kSynthetic) {
    full = learning::gen_synthetic(ds.n, ds.features, ds.classes, ds.separation,
                                   mix64(spec.seed ^ 0x7261696eULL));
    out.test = learning::gen_synthetic(ds.test_n, ds.features, ds.classes,
                                       ds.separation, mix64(spec.seed ^ 0x74657374ULL));
  } else {
    full = learning::load_idx(ds.images, ds.labels);
    if (ds.limit > 0 && ds.limit < full.size()) {
      std::vector<std::size_t> head(ds.limit);
      std::iota(head.begin(), head.end(), 0);
      full = learning::subset(full, head);
    }
    if (!ds.test_images.empty()) {
      out.test = learning::load_idx(ds.test_images, ds.test_labels);
      out.test.num_classes = std::max(out.test.num_classes, full.num_classes);
      full.num_classes = out.test.num_classes;
    }
  }
  const auto parts =
      learning::partition_noniid(full, spec.n_nodes, spec.label_fraction, spec.seed);
  for (const auto& idx : parts) {
    out.shards.push_back(learning::subset(full, idx));
    out.shards.back().num_classes = full.num_classes;
  }
  return out;
}

bool ExperimentResult::ok() const {
  return std::all_of(arms.begin(), arms.end(),
                     [](const ArmResult& a) { return a.error.empty(); });
}

void write_csv(const std::vector<engine::MetricsLog>& logs, std::ostream& out) {
  out << "arm,round,global_loss,distortion,edge_bits,codebook_bits,mean_s,"
         "min_s,max_s,eta\n";
  for (const auto& log : logs) {
    for (const auto& rec : log.records) {
      const std::uint64_t cb =
          rec.codebook_bits.empty()
              ? 0
              : *std::max_element(rec.codebook_bits.begin(), rec.codebook_bits.end());
      const int min_s = rec.s.empty() ? 0 : *std::min_element(rec.s.begin(), rec.s.end());
      const int max_s = rec.s.empty() ? 0 : *std::max_element(rec.s.begin(), rec.s.end());
      out << log.arm << ',' << rec.round << ',' << format_real(rec.global_loss)
          << ',' << format_real(rec.distortion) << ',' << rec.max_edge_bits()
          << ',' << cb << ',' << format_real(rec.mean_s()) << ',' << min_s
          << ',' << max_s << ',' << format_real(rec.eta) << '\n';
    }
  }
}

std::optional<std::uint64_t> bits_to_target(const engine::MetricsLog& log,
                                            double target) {
  for (const auto& rec : log.records) {
    if (rec.global_loss <= target) return record_bits(rec);
  }
  return std::nullopt;
}

std::vector<SummaryRow> summarize(const std::vector<engine::MetricsLog>& logs,
                                  std::optional<double> target,
                                  double* target_used) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& log : logs) {
    if (!log.records.empty()) best = std::min(best, log.final().global_loss);
  }
  const double t = target.value_or(1.1 * best);
  if (target_used != nullptr) *target_used = t;
  std::vector<SummaryRow> rows;
  for (const auto& log : logs) {
    if (log.records.empty()) continue;
    SummaryRow row;
    row.arm = log.arm;
    row.final_loss = log.final().global_loss;
    row.total_bits = record_bits(log.final());
    for (const auto& rec : log.records) {
      if (rec.global_loss <= t) {
        row.rounds_to_target = rec.round;
        row.bits_to_target = record_bits(rec);
        break;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void print_summary(const std::vector<SummaryRow>& rows, double target,
                   const std::vector<std::string>& failures, std::ostream& out) {
  out << "target loss " << std::setprecision(6) << target << '\n';
  out << std::left << std::setw(20) << "arm" << std::right << std::setw(14)
      << "final_loss" << std::setw(16) << "total_bits" << std::setw(10)
      << "rounds" << std::setw(16) << "bits_to_target" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(20) << r.arm << std::right << std::setw(14)
        << std::setprecision(6) << r.final_loss << std::setw(16) << r.total_bits
        << std::setw(10)
        << (r.rounds_to_target ? std::to_string(*r.rounds_to_target) : "-")
        << std::setw(16)
        << (r.bits_to_target ? std::to_string(*r.bits_to_target) : "-") << '\n';
  }
  for (const auto& f : failures) out << "FAILED " << f << '\n';
}

ExperimentResult run_experiment(const ExperimentSpec& spec, std::ostream& report) {
  const ExperimentData data = load_data(spec);
  fs::create_directories(spec.output_dir);
  ExperimentResult result;
  std::vector<engine::MetricsLog> logs;
  std::vector<std::string> failures;
  for (const auto& arm : spec.arms) {
    ArmResult ar;
    ar.name = arm.name;
    std::optional<engine::Simulation> sim;
    try {
      sim.emplace(arm.config, data.shards, engine::mixing_for(arm.config));
      if (sim->mixing().disconnected_warning()) {
        report << "warning: arm " << arm.name
               << " uses a disconnected graph (zeta = 1)\n";
      }
      sim->run(data.test.size() > 0 ? &data.test : nullptr);
    } catch (const std::exception& e) {
      ar.error = e.what();
      failures.push_back(arm.name + ": " + e.what());
    }
    if (sim) {
      engine::MetricsLog log = sim->log();
      log.arm = arm.name;
      std::ostringstream os;
      engine::write_jsonl(log, os);
      write_atomically(spec.output_dir / (arm.name + ".jsonl"), os.str());
      if (ar.error.empty()) logs.push_back(log);
      ar.log = std::move(log);
    }
    result.arms.push_back(std::move(ar));
  }

  std::vector<engine::MetricsLog> all;
  for (const auto& a : result.arms) {
    if (a.log) all.push_back(*a.log);
  }
  std::ostringstream csv;
  write_csv(all, csv);
  write_atomically(spec.output_dir / "metrics.csv", csv.str());

  double target = 0.0;
  const auto rows = summarize(logs, spec.target_loss, &target);
  std::ostringstream summary;
  print_summary(rows, target, failures, summary);
  write_atomically(spec.output_dir / "summary.txt", summary.str());
  report << summary.str();
  return result;
}

std::vector<engine::MetricsLog> load_logs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InvalidInput(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<engine::MetricsLog> logs;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      logs.push_back(engine::read_jsonl(in, f.stem().string()));
    } catch (const json::exception& e) {
      throw FormatError(f.string() + ": " + e.what());
    }
  }
  return logs;
}

std::vector<double> read_samples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) {
      throw FormatError(path.string() + ": not a number: \"" + tok + "\"");
    }
    if (!(v >= 0.0 && v <= 1.0)) {
      throw FormatError(path.string() + ": sample " + tok + " outside [0, 1]");
    }
    out.push_back(v);
  }
  if (out.empty()) throw FormatError(path.string() + ": no samples");
  return out;
}

json fit_quantizer_report(const std::vector<double>& samples, int s, double tol,
                          int max_iter) {
  const auto fit = quant::fit_lloyd_max(samples, {}, s, tol, max_iter);
  json j;
  j["s"] = s;
  j["samples"] = samples.size();
  j["levels"] = fit.table.levels;
  j["boundaries"] = fit.table.boundaries;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["distortion_history"] = fit.distortion_history;
  j["distortion"] = quant::table_distortion(samples, {}, fit.table);
  j["uniform_reference"] = 1.0 / (12.0 * s * s);
  return j;
}

json zeta_report(const std::vector<topology::Edge>& edges) {
  const int n = topology::node_count(edges);
  const auto mixing =
      topology::build_mixing(topology::TopologyKind::kCustom, n, {1.0 / 3.0, edges});
  json j;
  j["nodes"] = n;
  j["edges"] = edges.size();
  j["zeta"] = mixing.zeta();
  const bool connected = topology::is_connected(n, edges);
  j["connected"] = connected;
  // A disconnected graph can land one ulp below 1; treat it as the pole.
  if (connected && mixing.zeta() < 1.0) {
    j["alpha"] = analysis::alpha(mixing.zeta());
  } else {
    j["alpha"] = nullptr;
    j["warning"] = "graph is disconnected; zeta = 1 and the bounds are undefined";
  }
  return j;
}

json bounds_report(const ExperimentSpec& spec) {
  const ExperimentData data = load_data(spec);
  json out;
  json arms = json::object();
  json estimates;
  bool estimated = false;
  analysis::ConstantEstimates est;
  for (const auto& arm : spec.arms) {
    const auto& cfg = arm.config;
    json a;
    try {
      engine::Simulation sim(cfg, data.shards, engine::mixing_for(cfg));
      const auto& shape = sim.shape();
      const Eigen::VectorXd x0 = sim.nodes().front().params;
      const double d = static_cast<double>(x0.size());
      const double f0 = sim.global_loss();

      const bool need_estimate = !spec.bounds.contains("L") ||
                                 !spec.bounds.contains("sigma2") ||
                                 !spec.bounds.contains("delta2");
      if (need_estimate && !estimated) {
        // Snapshots: the initial model and a few random perturbations of it.
        Rng rng = derive_stream(spec.seed, 0, 0, StreamPurpose::kData);
        std::vector<Eigen::VectorXd> points{x0};
        for (int k = 0; k < 4; ++k) {
          Eigen::VectorXd p = x0;
          for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.1 * (2.0 * uniform01(rng) - 1.0);
          points.push_back(std::move(p));
        }
        est = analysis::estimate_constants(shape, data.shards, points,
                                           cfg.batch_size, 4, rng);
        estimated = true;
        estimates = {{"L", est.L}, {"sigma2", est.sigma2}, {"delta2", est.delta2}};
      }
      analysis::BoundInputs in;
      in.L = spec.bounds.value("L", est.L);
      in.sigma2 = spec.bounds.value("sigma2", est.sigma2);
      in.delta2 = spec.bounds.value("delta2", est.delta2);
      in.F_gap = spec.bounds.value("F_gap", f0);
      in.N = cfg.n_nodes;
      in.tau = cfg.tau;
      in.eta = cfg.eta_at(1);
      in.K = cfg.rounds;
      in.d = d;
      in.zeta = sim.mixing().zeta();
      const bool lossless = cfg.quantizer.scheme == quant::Scheme::kLossless;
      in.s = cfg.adaptive.enabled ? cfg.adaptive.s1 : (lossless ? 16000 : cfg.quantizer.s);
      quant::QuantizerKind kind = cfg.quantizer;
      kind.s = static_cast<int>(in.s);
      if (lossless) {
        in.omega = 0.0;
      } else if (kind.scheme == quant::Scheme::kAlq) {
        const auto t = quant::alq_initial_levels(kind.s);
        in.omega = quant::distortion_bound(kind, x0.size(), &t);
      } else {
        in.omega = quant::distortion_bound(kind, x0.size());
      }
      const double per_round = 2.0 * static_cast<double>(quant::encoded_bits(
                                         x0.size(), static_cast<std::uint64_t>(in.s)));
      in.B0 = spec.bounds.value("B0", per_round);
      in.B = spec.bounds.value("B", per_round * in.K);

      a["inputs"] = {{"L", in.L},       {"sigma2", in.sigma2}, {"delta2", in.delta2},
                     {"N", in.N},       {"tau", in.tau},       {"eta", in.eta},
                     {"zeta", in.zeta}, {"omega", in.omega},   {"K", in.K},
                     {"d", in.d},       {"s", in.s},           {"F_gap", in.F_gap},
                     {"B", in.B},       {"B0", in.B0}};
      if (in.zeta >= 1.0) {
        a["error"] = "disconnected topology: zeta = 1, bounds undefined";
      } else {
        a["alpha"] = analysis::alpha(in.zeta);
        a["lr_cap"] = analysis::qdfl_lr_cap(in);
        const auto q = analysis::qdfl_convergence_bound(in);
        a["qdfl_bound"] = q.value;
        a["warnings"] = q.warnings;
        a["lmdfl_bound"] = analysis::lmdfl_convergence_bound(in);
        const auto t4 = analysis::thm4_constants_and_bound(in);
        a["bit_budget"] = {{"A1", t4.A1}, {"A2", t4.A2}, {"A3", t4.A3}, {"bound_at_s", t4(in.s)}};
        if (in.F_gap > 0.0) {
          const auto o = analysis::optimal_s(in);
          a["optimal_s"] = {{"A4", o.A4}, {"A5", o.A5}, {"s_star", o.s_star},
                            {"s_stationary", o.s_stationary},
                            {"s_interval", o.s_interval}};
        }
      }
    } catch (const std::exception& e) {
      a["error"] = e.what();
    }
    arms[arm.name] = a;
  }
  out["arms"] = arms;
  if (estimated) out["estimates"] = estimates;
  return out;
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Decentralized learning with Lloyd-Max quantized model exchange"};
  app.require_subcommand(1);

  std::string run_config;
  auto* run = app.add_subcommand("run", "Run every arm of an experiment config");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();

  std::string samples_file;
  int fit_s = 16;
  double fit_tol = 1e-6;
  int fit_iter = 100;
  auto* fit = app.add_subcommand("fit-quantizer", "Fit a Lloyd-Max table to samples in [0, 1]");
  fit->add_option("samples", samples_file, "Whitespace-separated samples")->required();
  fit->add_option("--s", fit_s, "Number of levels")->check(CLI::PositiveNumber);
  fit->add_option("--tol", fit_tol, "Relative distortion-decrease tolerance");
  fit->add_option("--max-iter", fit_iter, "Iteration limit")->check(CLI::PositiveNumber);

  std::string edge_file;
  auto* zeta = app.add_subcommand("zeta", "Mixing spectral value of an edge list");
  zeta->add_option("edges", edge_file, "Edge list: one \"i j\" pair per line")->required();

  std::string bounds_config;
  auto* bounds = app.add_subcommand("bounds", "Evaluate the convergence bounds for a config");
  bounds->add_option("config", bounds_config, "Experiment config (JSON)")->required();

  std::string compare_dir;
  std::optional<double> compare_target;
  auto* compare = app.add_subcommand("compare", "Summarize the JSONL logs of a directory");
  compare->add_option("dir", compare_dir, "Directory with <arm>.jsonl files")->required();
  compare->add_option("--target", compare_target, "Target loss (default 1.1 x best final)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (run->parsed()) {
      const auto spec = parse_config(run_config);
      const auto result = run_experiment(spec, std::cout);
      std::cout << "outputs in " << spec.output_dir.string() << '\n';
      return result.ok() ? 0 : 1;
    }
    if (fit->parsed()) {
      std::cout << fit_quantizer_report(read_samples(samples_file), fit_s, fit_tol,
                                        fit_iter).dump(2)
                << '\n';
      return 0;
    }
    if (zeta->parsed()) {
      std::cout << zeta_report(topology::read_edge_list(edge_file)).dump(2) << '\n';
      return 0;
    }
    if (bounds->parsed()) {
      std::cout << bounds_report(parse_config(bounds_config)).dump(2) << '\n';
      return 0;
    }
    if (compare->parsed()) {
      const auto logs = load_logs(compare_dir);
      double target = 0.0;
      const auto rows = summarize(logs, compare_target, &target);
      print_summary(rows, target, {}, std::cout);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace lmdfl::cli
