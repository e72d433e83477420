/* Copyright 2026 The splitnas Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end. One command per process:
//
//   search     supernet search + retrain; writes plan, history, report, state
//   derive     compact model from a saved state
//   simulate   discrete-event run of a plan file
//   compare    split plan against the cloud-only baseline
//   gen-table  synthetic latency table for a topology and configuration
//
// Exit codes: 0 success, 1 usage, 2 input validation, 3 runtime failure.

#ifndef SPLITNAS_CLI_HPP_
#define SPLITNAS_CLI_HPP_

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "splitnas/config.hpp"
#include "splitnas/dataset.hpp"
#include "splitnas/errors.hpp"
#include "splitnas/latency.hpp"
#include "splitnas/search.hpp"
#include "splitnas/simulator.hpp"
#include "splitnas/topology.hpp"

namespace splitnas::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutEnv = "SPLITNAS_OUT";

enum ExitCode : int { kOk = 0, kUsage = 1, kInvalid = 2, kRuntime = 3 };

namespace fs = std::filesystem;

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Write to a sibling temporary and rename over the target.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Options {
  std::string out;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  std::string topology, latency_table, config, plan, trace, state;
  bool synthesize_table = false;
  std::optional<double> tconst;
};

// Inputs and outputs of one run, recorded in manifest.json.
class Manifest {
 public:
  explicit Manifest(std::string command) : started_(utc_now()) { j_["command"] = std::move(command); }

  void input(const std::string& role, const std::string& path, const std::string& bytes) {
    j_["inputs"][role] = {{"path", path}, {"sha256", sha256_hex(bytes)}};
  }
  void output(const fs::path& path, const std::string& bytes) {
    j_["outputs"][path.filename().string()] = {{"sha256", sha256_hex(bytes)}};
  }
  nlohmann::json& operator[](const char* key) { return j_[key]; }

  void write(const fs::path& dir) {
    j_["tool"] = "splitnas";
    j_["version"] = kVersion;
    j_["started_at"] = started_;
    j_["finished_at"] = utc_now();
    write_file_atomic(dir / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  std::string started_;
  nlohmann::json j_;
};

class Runner {
 public:
  Runner(Options o, std::ostream& out, std::ostream& err) : o_(std::move(o)), out_(out), err_(err) {}

  int search() {
    Manifest m("search");
    Setup s = setup(m);
    const DataSplit data = make_toy_dataset(s.cfg.data);
    SearchState st = init_search(s.topo, s.table ? &*s.table : nullptr, s.cfg);
    for (std::size_t e = 0; e < s.cfg.search.warmup_epochs; ++e) {
      warmup_epoch(st, data, s.cfg.search);
      log_epoch(st.history.back());
    }
    for (std::size_t e = 0; e < s.cfg.search.search_epochs; ++e) {
      search_epoch(st, data, s.cfg.search);
      log_epoch(st.history.back());
    }
    emit(m, "state.json", serialize_state(st));
    finish(m, st, data, s.cfg);
    return kOk;
  }

  int derive() {
    Manifest m("derive");
    Setup s = setup(m);
    const std::string text = read_input(m, "state", o_.state, "--state");
    const DataSplit data = make_toy_dataset(s.cfg.data);
    SearchState st = init_search(s.topo, s.table ? &*s.table : nullptr, s.cfg);
    load_state(st, text);
    finish(m, st, data, s.cfg);
    return kOk;
  }

  int simulate() {
    Manifest m("simulate");
    const DeploymentPlan plan = parse_plan(read_input(m, "plan", o_.plan, "--plan"));
    const SimResult r = simulate_plan(plan);
    out_ << "completion latency: " << fixed3(r.completion_ms) << " ms\n";
    if (!o_.trace.empty()) {
      const fs::path p(o_.trace);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      const std::string bytes = write_trace_tsv(r.trace);
      write_file_atomic(p, bytes);
      m.output(p, bytes);
    }
    m["result"] = {{"completion_ms", r.completion_ms}};
    write_manifest(m);
    return kOk;
  }

  int compare() {
    Manifest m("compare");
    DeploymentPlan plan = parse_plan(read_input(m, "plan", o_.plan, "--plan"));
    const Topology topo = parse_topology(read_input(m, "topology", o_.topology, "--topology"));
    if (!(topo == plan.topology)) throw ValidationError("plan was built for a different topology");
    std::optional<LatencyTable> table;
    if (!o_.latency_table.empty()) {
      table = parse_latency_table(read_input(m, "latency_table", o_.latency_table, "--latency-table"));
    }
    const Comparison c = compare_with_cloud(plan, table ? &*table : nullptr);
    out_ << "split latency: " << fixed3(c.split_ms) << " ms\n"
         << "cloud-only latency: " << fixed3(c.cloud_ms) << " ms\n"
         << "reduction: " << std::fixed << std::setprecision(1) << c.reduction_pct << " %\n";
    m["result"] = {{"split_ms", c.split_ms}, {"cloud_ms", c.cloud_ms}, {"reduction_pct", c.reduction_pct}};
    write_manifest(m);
    return kOk;
  }

  int gen_table() {
    Manifest m("gen-table");
    RunConfig cfg = load_config(m);
    const Topology topo = parse_topology(read_input(m, "topology", o_.topology, "--topology"));
    LayerAssignment a;
    try {
      a = build_assignment(cfg.space.num_layers, topo);
    } catch (const ContractError& e) {
      throw ValidationError(e.what());
    }
    const SuperNet net = make_supernet(cfg, topo, a, cfg.search.seed);
    m["config"] = config_to_json(cfg);
    emit(m, "latency_table.tsv", write_latency_table(synthesize_table(net, topo, cfg.cost)));
    write_manifest(m);
    return kOk;
  }

 private:
  struct Setup {
    RunConfig cfg;
    Topology topo;
    std::optional<LatencyTable> table;
  };

  static std::string fixed3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
  }

  static SimResult simulate_plan(const DeploymentPlan& p) { return splitnas::simulate(p); }

  std::string read_input(Manifest& m, const std::string& role, const std::string& path, const char* flag) {
    if (path.empty()) throw ValidationError(std::string(flag) + " is required");
    std::string bytes = read_file(path);
    m.input(role, path, bytes);
    return bytes;
  }

  RunConfig load_config(Manifest& m) {
    RunConfig cfg = o_.config.empty() ? RunConfig{} : parse_config(read_input(m, "config", o_.config, "--config"));
    if (o_.seed) cfg.search.seed = *o_.seed;
    if (o_.tconst) cfg.search.t_const = *o_.tconst;
    cfg.search.validate();
    return cfg;
  }

  Setup setup(Manifest& m) {
    if (o_.config.empty()) throw ValidationError("--config is required");
    if (o_.latency_table.empty() == !o_.synthesize_table) {
      throw ValidationError("give exactly one of --latency-table and --synthesize-table");
    }
    Setup s;
    s.cfg = load_config(m);
    s.topo = parse_topology(read_input(m, "topology", o_.topology, "--topology"));
    if (!o_.latency_table.empty()) {
      s.table = parse_latency_table(read_input(m, "latency_table", o_.latency_table, "--latency-table"));
    }
    m["config"] = config_to_json(s.cfg);
    m["seed"] = s.cfg.search.seed;
    m["synthesized_table"] = o_.synthesize_table;
    return s;
  }

  void finish(Manifest& m, SearchState& st, const DataSplit& data, const RunConfig& cfg) {
    const std::size_t before = st.history.size();
    TrainReport r = derive_and_retrain(st, data, cfg.search);
    for (std::size_t k = before; k < r.history.size(); ++k) log_epoch(r.history[k]);
    nlohmann::json report = report_to_json(r);
    report["lambda1"] = cfg.search.lambda1;
    report["lambda2"] = cfg.search.lambda2;
    report["seed"] = cfg.search.seed;
    report["identity_count"] = std::count(r.ops.begin(), r.ops.end(), std::string("identity"));
    emit(m, "plan.json", serialize_plan(r.plan));
    emit(m, "history.tsv", write_history_tsv(r.history));
    emit(m, "report.json", report.dump(2) + "\n");
    write_manifest(m);
    out_ << "architecture:";
    for (const auto& op : r.ops) out_ << ' ' << op;
    out_ << "\nexpected latency: " << fixed3(r.expected_latency_ms) << " ms (T_Const " << fixed3(r.t_const)
         << " ms)\nvalidation accuracy: " << fixed3(r.val_accuracy) << "\n";
  }

  fs::path out_dir() {
    std::string dir = o_.out;
    if (dir.empty()) {
      const char* env = std::getenv(kOutEnv);
      dir = env && *env ? env : "splitnas_out";
    }
    fs::create_directories(dir);
    return dir;
  }

  void emit(Manifest& m, const char* name, const std::string& bytes) {
    const fs::path p = out_dir() / name;
    write_file_atomic(p, bytes);
    m.output(p, bytes);
    if (o_.verbose) err_ << "wrote " << p.string() << "\n";
  }

  void write_manifest(Manifest& m) { m.write(out_dir()); }

  void log_epoch(const EpochRecord& r) {
    if (!o_.verbose) return;
    err_ << r.phase << " epoch " << r.epoch << ": loss " << r.train_loss << ", E[T] " << r.expected_latency_ms
         << " ms, val acc " << r.val_accuracy << "\n";
  }

  Options o_;
  std::ostream& out_;
  std::ostream& err_;
};

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Split-deployment neural architecture search and latency simulation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  const auto common = [&o](CLI::App* c) {
    c->add_option("--out", o.out, "output directory (default: $SPLITNAS_OUT or ./splitnas_out)");
    c->add_option("--seed", o.seed, "random seed override");
    c->add_flag("--verbose", o.verbose, "progress on stderr");
  };
  const auto training = [&o, &common](CLI::App* c) {
    common(c);
    c->add_option("--topology", o.topology, "topology JSON")->required();
    c->add_option("--config", o.config, "run configuration JSON")->required();
    auto* lt = c->add_option("--latency-table", o.latency_table, "latency table TSV");
    auto* st = c->add_flag("--synthesize-table", o.synthesize_table, "derive latencies from MAC counts");
    lt->excludes(st);
    c->add_option("--tconst", o.tconst, "latency constraint override (ms)");
  };

  CLI::App* search = app.add_subcommand("search", "search, retrain and emit a deployment plan");
  training(search);
  CLI::App* derive = app.add_subcommand("derive", "compact model from a saved search state");
  training(derive);
  derive->add_option("--state", o.state, "state.json written by search")->required();

  CLI::App* sim = app.add_subcommand("simulate", "simulate a deployment plan");
  common(sim);
  sim->add_option("--plan", o.plan, "plan JSON")->required();
  sim->add_option("--trace", o.trace, "write the event trace as TSV");

  CLI::App* cmp = app.add_subcommand("compare", "split plan against the cloud-only baseline");
  common(cmp);
  cmp->add_option("--plan", o.plan, "plan JSON")->required();
  cmp->add_option("--topology", o.topology, "topology JSON")->required();
  cmp->add_option("--latency-table", o.latency_table, "table for cloud-side execution times");

  CLI::App* gen = app.add_subcommand("gen-table", "write a synthetic latency table");
  common(gen);
  gen->add_option("--topology", o.topology, "topology JSON")->required();
  gen->add_option("--config", o.config, "run configuration JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Runner runner(o, out, err);
  try {
    if (search->parsed()) return runner.search();
    if (derive->parsed()) return runner.derive();
    if (sim->parsed()) return runner.simulate();
    if (cmp->parsed()) return runner.compare();
    return runner.gen_table();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace splitnas::cli

#endif  // SPLITNAS_CLI_HPP_
