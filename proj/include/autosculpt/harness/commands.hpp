#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "autosculpt/harness/config.hpp"

namespace autosculpt {

namespace fs = std::filesystem;

// Files a run directory accumulates.
inline constexpr const char* kModelFile = "model.json";
inline constexpr const char* kDenseFile = "dense.ascp";
inline constexpr const char* kTrainLog = "train.json";
inline constexpr const char* kSearchLog = "search.ndjson";
inline constexpr const char* kAssignmentFile = "assignment.json";
inline constexpr const char* kLibraryFile = "library.json";
inline constexpr const char* kPrunedFile = "pruned.ascp";
inline constexpr const char* kAgentFile = "agent.ascp";
inline constexpr const char* kPruneLog = "prune.json";
inline constexpr const char* kFinetunedFile = "finetuned.ascp";
inline constexpr const char* kFinetuneLog = "finetune.json";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kTimingFile = "timing.json";

// Seed streams per stage.
enum SeedStream : std::uint64_t { kDataSeed = 10, kInitSeed = 11, kTrainSeed = 12, kSearchSeed = 13, kFinetuneSeed = 14 };

namespace detail {

inline fs::path out_file(const RunConfig& c, const char* name) { return fs::path(c.out) / name; }

inline void write_json(const fs::path& path, const nlohmann::ordered_json& j) { write_file(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("missing run artifact '" + path.string() + "'");
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Wall-clock seconds per command, kept apart from the report so reports
/// stay byte-reproducible.
inline void record_timing(const RunConfig& c, const std::string& command, double seconds) {
  const auto path = out_file(c, kTimingFile);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  if (fs::exists(path)) {
    try {
      j = nlohmann::ordered_json::parse(read_file(path));
    } catch (const nlohmann::json::exception&) {
      j = nlohmann::ordered_json::object();
    }
  }
  j[command] = seconds;
  write_json(path, j);
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void ensure_out(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec || !fs::is_directory(c.out)) throw ValidationError("cannot create output directory '" + c.out + "'");
}

}  // namespace detail

/// Synthetic or CIFAR-10 data, viewed as tokens x features for Transformers.
inline Dataset make_dataset(const RunConfig& c) {
  Dataset d;
  if (c.dataset == "cifar10") {
    if (c.data_dir.empty()) throw ConfigError("dataset cifar10 needs data_dir");
    d = load_cifar10(c.data_dir, split_seed(c.seed, kDataSeed));
  } else {
    SynthSpec s = c.synth;
    s.seed = split_seed(c.seed, kDataSeed);
    d = synth_dataset(s);
  }
  if (c.arch == "transformer" && c.model_path.empty()) {
    d = reshape_samples(std::move(d), {d.sample_shape[0] * d.sample_shape[1], d.sample_shape[2]});
  }
  return d;
}

/// A freshly initialized model: the topology file when given, else the demo
/// model for the configured architecture.
inline ModelIR fresh_model(const RunConfig& c, const Dataset& d) {
  const std::uint64_t seed = split_seed(c.seed, kInitSeed);
  if (!c.model_path.empty()) {
    ModelIR m = topology_from_json(detail::read_json(c.model_path));
    init_weights(m, seed);
    validate(m);
    return m;
  }
  if (c.arch == "transformer") return demo_transformer(seed, d.classes, d.sample_shape[0], d.sample_shape[1]);
  return demo_cnn(seed, d.classes, d.sample_shape[1], d.sample_shape[0]);
}

/// The trained dense model: explicit --model/--weights, else the run directory.
inline ModelIR load_dense(const RunConfig& c) {
  if (!c.weights_path.empty()) {
    return load_model(c.model_path.empty() ? detail::out_file(c, kModelFile) : fs::path(c.model_path), c.weights_path);
  }
  const auto topo = detail::out_file(c, kModelFile);
  const auto weights = detail::out_file(c, kDenseFile);
  if (!fs::exists(topo) || !fs::exists(weights)) {
    throw ValidationError("no trained model in '" + c.out + "' (run train first or pass --weights)");
  }
  return load_model(topo, weights);
}

/// Dataset matching a loaded model's input shape.
inline Dataset dataset_for(const RunConfig& c, const ModelIR& m) {
  Dataset d = make_dataset(c);
  if (d.sample_shape != m.input_shape) d = reshape_samples(std::move(d), m.input_shape);
  return d;
}

inline PatternLibrary make_library(const RunConfig& c, const ModelIR& m) {
  if (!c.library_path.empty()) return load_library(c.library_path);
  std::size_t k = c.pattern_size;
  if (arch_of(m) == Arch::cnn) {
    for (const auto& op : m.operators) {
      if (op.kind == OpKind::conv2d && op.prunable) {
        k = op.kernel;
        break;
      }
    }
  }
  return default_library(k, c.patterns);
}

struct TrainResult {
  double acc_val = 0.0;
  double acc_test = 0.0;
};

inline TrainResult cmd_train(const RunConfig& c) {
  detail::Stopwatch sw;
  check_config(c);
  detail::ensure_out(c);
  Dataset d = make_dataset(c);
  const ModelIR init = fresh_model(c, d);
  if (d.sample_shape != init.input_shape) d = reshape_samples(std::move(d), init.input_shape);
  const ModelIR m = fine_tune(init, nullptr, d.train, c.train, split_seed(c.seed, kTrainSeed));
  save_model(m, detail::out_file(c, kModelFile), detail::out_file(c, kDenseFile));
  TrainResult r{evaluate_accuracy(m, d.val), evaluate_accuracy(m, d.test)};
  nlohmann::ordered_json j;
  j["acc_val"] = r.acc_val;
  j["acc_test"] = r.acc_test;
  j["epochs"] = c.train.epochs;
  j["dense_macs"] = count_flops(m).dense_macs;
  detail::write_json(detail::out_file(c, kTrainLog), j);
  detail::record_timing(c, "train", sw.seconds());
  return r;
}

inline SearchResult cmd_prune(const RunConfig& c) {
  detail::Stopwatch sw;
  check_config(c);
  detail::ensure_out(c);
  const ModelIR dense = load_dense(c);
  const Dataset d = dataset_for(c, dense);
  const PatternLibrary lib = make_library(c, dense);
  SearchConfig sc = search_config(c);
  const double dense_val = evaluate_accuracy(dense, d.val);
  if (c.acc_drop) sc.constraints.acc_floor = std::max(0.0, dense_val - *c.acc_drop);
  SearchResult res = run_search(dense, d.val, lib, sc, split_seed(c.seed, kSearchSeed));

  detail::write_file(detail::out_file(c, kSearchLog), search_log_ndjson(res.log));
  detail::write_json(detail::out_file(c, kAssignmentFile), assignment_to_json(res.assignment));
  save_library(lib, detail::out_file(c, kLibraryFile));
  save_weights(res.pruned.weights, detail::out_file(c, kPrunedFile));
  save_agent(res.agent, detail::out_file(c, kAgentFile));
  const FlopsReport f = count_flops(dense, res.assignment, lib);
  nlohmann::ordered_json j;
  j["constraints_met"] = res.constraints_met;
  j["flops_target"] = sc.constraints.flops_target;
  j["acc_floor"] = sc.constraints.acc_floor;
  j["acc_dense_val"] = dense_val;
  j["acc_pruned_val"] = res.metrics.accuracy;
  j["dense_macs"] = f.dense_macs;
  j["effective_macs"] = f.effective_macs;
  j["flops_reduction"] = f.flops_reduction;
  j["reward"] = res.reward;
  j["episodes_run"] = res.episodes_run;
  j["inner_steps"] = res.log.size();
  j["updates"] = res.updates;
  j["assignment_digest"] = assignment_digest(res.assignment);
  detail::write_json(detail::out_file(c, kPruneLog), j);
  detail::record_timing(c, "prune", sw.seconds());
  return res;
}

inline PatternAssignment load_assignment(const fs::path& path) { return assignment_from_json(detail::read_json(path)); }

inline double cmd_finetune(const RunConfig& c) {
  detail::Stopwatch sw;
  check_config(c);
  const ModelIR dense = load_dense(c);
  const Dataset d = dataset_for(c, dense);
  const PatternLibrary lib = load_library(detail::out_file(c, kLibraryFile));
  const PatternAssignment a = load_assignment(detail::out_file(c, kAssignmentFile));
  const MaskSet masks = realize_masks(dense, a, lib);
  const ModelIR tuned = fine_tune(dense, &masks, d.train, c.finetune, split_seed(c.seed, kFinetuneSeed));
  save_weights(tuned.weights, detail::out_file(c, kFinetunedFile));
  const double acc = evaluate_accuracy(tuned, d.test);
  nlohmann::ordered_json j;
  j["acc_finetuned_val"] = evaluate_accuracy(tuned, d.val);
  j["acc_finetuned"] = acc;
  j["epochs"] = c.finetune.epochs;
  detail::write_json(detail::out_file(c, kFinetuneLog), j);
  detail::record_timing(c, "finetune", sw.seconds());
  return acc;
}

/// Accuracy and MACs of the dense model (or --weights) under an optional
/// assignment file; "ones" keeps every weight.
inline nlohmann::ordered_json cmd_eval(const RunConfig& c, const std::string& assignment_path) {
  check_config(c);
  const ModelIR m = load_dense(c);
  const Dataset d = dataset_for(c, m);
  std::optional<MaskSet> masks;
  if (!assignment_path.empty()) {
    const PatternLibrary lib = make_library(c, m);
    const PatternAssignment a =
        assignment_path == "ones" ? uniform_assignment(m, 0, c.per_kernel) : load_assignment(assignment_path);
    masks = realize_masks(m, a, lib);
  }
  const MaskSet* mp = masks ? &*masks : nullptr;
  const FlopsReport f = count_flops(m, mp);
  nlohmann::ordered_json j;
  j["acc_val"] = evaluate_accuracy(m, d.val, mp);
  j["acc_test"] = evaluate_accuracy(m, d.test, mp);
  j["dense_macs"] = f.dense_macs;
  j["effective_macs"] = f.effective_macs;
  j["flops_reduction"] = f.flops_reduction;
  return j;
}

/// Masks read back from a saved pruned model: prunable weights keep their
/// nonzero entries.
inline MaskSet masks_from_weights(const ModelIR& pruned) {
  MaskSet masks;
  for (const auto& op : pruned.operators) {
    if (!op.prunable) continue;
    for (const auto& slot : weight_slots(op.kind)) {
      const auto name = weight_name(op, slot);
      const Tensor& w = pruned.weight(name);
      Tensor mask(w.shape());
      for (std::size_t i = 0; i < w.size(); ++i) mask[i] = w[i] != 0.0 ? 1.0 : 0.0;
      masks.emplace(name, std::move(mask));
    }
  }
  return masks;
}

struct Report {
  std::uint64_t dense_macs = 0;
  double effective_macs = 0.0;
  double flops_reduction = 0.0;
  double acc_dense = 0.0;
  double acc_pruned = 0.0;
  double acc_finetuned = 0.0;
  double delta_acc = 0.0;
  std::size_t episodes_run = 0;
  bool constraints_met = false;
  PatternAssignment assignment;
  nlohmann::ordered_json config;
};

inline nlohmann::ordered_json report_to_json(const Report& r) {
  nlohmann::ordered_json j;
  j["dense_macs"] = r.dense_macs;
  j["effective_macs"] = r.effective_macs;
  j["flops_reduction"] = r.flops_reduction;
  j["acc_dense"] = r.acc_dense;
  j["acc_pruned"] = r.acc_pruned;
  j["acc_finetuned"] = r.acc_finetuned;
  j["delta_acc"] = r.delta_acc;
  j["episodes_run"] = r.episodes_run;
  j["constraints_met"] = r.constraints_met;
  j["assignment"] = assignment_to_json(r.assignment);
  j["assignment_digest"] = assignment_digest(r.assignment);
  j["wall_time"] = kTimingFile;
  j["config"] = r.config;
  return j;
}

/// Required top-level report keys, in order.
inline const std::vector<std::string>& report_keys() {
  static const std::vector<std::string> keys{"dense_macs",    "effective_macs", "flops_reduction", "acc_dense",
                                             "acc_pruned",    "acc_finetuned",  "delta_acc",       "episodes_run",
                                             "constraints_met", "assignment",   "assignment_digest", "wall_time",
                                             "config"};
  return keys;
}

inline void validate_report(const nlohmann::json& j) {
  for (const auto& k : report_keys())
    if (!j.contains(k)) throw ValidationError("report lacks '" + k + "'");
  for (const char* k : {"flops_reduction", "acc_dense", "acc_pruned", "acc_finetuned"}) {
    const double v = j.at(k).get<double>();
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string("report field '") + k + "' out of [0, 1]");
  }
  if (std::abs(j.at("delta_acc").get<double>() - (j.at("acc_finetuned").get<double>() - j.at("acc_dense").get<double>())) > 1e-12) {
    throw ValidationError("report delta_acc is inconsistent");
  }
}

/// Merges the run's logs into report.json. Accuracies are on the test split.
/// FLOPs are recomputed from the saved pruned weights and must agree with
/// the accounting of the saved assignment.
inline Report cmd_report(const RunConfig& c) {
  detail::Stopwatch sw;
  check_config(c);
  for (const char* f : {kPruneLog, kFinetuneLog, kSearchLog, kAssignmentFile, kLibraryFile, kPrunedFile}) {
    if (!fs::exists(detail::out_file(c, f))) throw ValidationError("missing run artifact '" + detail::out_file(c, f).string() + "'");
  }
  const ModelIR dense = load_dense(c);
  const Dataset d = dataset_for(c, dense);
  const PatternLibrary lib = load_library(detail::out_file(c, kLibraryFile));
  const PatternAssignment a = load_assignment(detail::out_file(c, kAssignmentFile));
  const auto prune_log = detail::read_json(detail::out_file(c, kPruneLog));
  const auto search = parse_search_log(detail::read_file(detail::out_file(c, kSearchLog)));
  if (search.empty()) throw ValidationError("search log is empty");

  ModelIR pruned = dense;
  pruned.weights = load_weights(detail::out_file(c, kPrunedFile));
  validate(pruned);
  const MaskSet saved_masks = masks_from_weights(pruned);
  const FlopsReport from_weights = count_flops(pruned, &saved_masks);
  const FlopsReport from_assignment = count_flops(dense, a, lib);
  if (from_weights.effective_macs != from_assignment.effective_macs) {
    throw ValidationError("pruned weights disagree with the assignment's FLOPs accounting");
  }

  ModelIR tuned = dense;
  tuned.weights = load_weights(detail::out_file(c, kFinetunedFile));
  validate(tuned);

  Report r;
  r.dense_macs = from_weights.dense_macs;
  r.effective_macs = from_weights.effective_macs;
  r.flops_reduction = from_weights.flops_reduction;
  r.acc_dense = evaluate_accuracy(dense, d.test);
  r.acc_pruned = evaluate_accuracy(pruned, d.test);
  r.acc_finetuned = evaluate_accuracy(tuned, d.test);
  r.delta_acc = r.acc_finetuned - r.acc_dense;
  r.episodes_run = prune_log.at("episodes_run").get<std::size_t>();
  r.constraints_met = prune_log.at("constraints_met").get<bool>();
  r.assignment = a;
  r.config = config_echo(c);
  const auto j = report_to_json(r);
  validate_report(j);
  detail::write_json(detail::out_file(c, kReportFile), j);
  detail::record_timing(c, "report", sw.seconds());
  return r;
}

struct SweepRow {
  std::string x;
  double x_value = 0.0;
  Report report;
};

inline void set_sweep_axis(RunConfig& c, const std::string& axis, const std::string& value) {
  if (axis == "patterns") set_config(c, "patterns", value);
  else if (axis == "node_dim") set_config(c, "node_dim", value);
  else if (axis == "flops_target") set_config(c, "flops_target", value);
  else throw ConfigError("sweep axis must be patterns, node_dim or flops_target, got '" + axis + "'");
}

/// Prune, fine-tune and report once per value in `<out>/sweep_<axis>_<value>`,
/// all starting from the dense model in `<out>` (trained first if absent).
/// Writes `<out>/sweep_<axis>.tsv` sorted by x.
inline std::vector<SweepRow> cmd_sweep(const RunConfig& c, const std::string& axis, const std::vector<std::string>& values) {
  check_config(c);
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  detail::ensure_out(c);
  if (c.weights_path.empty() &&
      (!fs::exists(detail::out_file(c, kModelFile)) || !fs::exists(detail::out_file(c, kDenseFile)))) {
    cmd_train(c);
  }
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    RunConfig cv = c;
    set_sweep_axis(cv, axis, v);
    const std::string sub = "sweep_" + axis + "_" + v;
    cv.out = (fs::path(c.out) / sub).string();
    if (c.weights_path.empty()) {
      // relative to the sub-run, so the echoed config does not depend on where the run lives
      cv.model_path = (fs::path("..") / kModelFile).string();
      cv.weights_path = (fs::path("..") / kDenseFile).string();
    }
    RunConfig resolved = cv;
    if (c.weights_path.empty()) {
      resolved.model_path = (fs::path(c.out) / kModelFile).string();
      resolved.weights_path = (fs::path(c.out) / kDenseFile).string();
    }
    check_config(resolved);
    detail::ensure_out(resolved);
    cmd_prune(resolved);
    cmd_finetune(resolved);
    Report r = cmd_report(resolved);
    r.config = config_echo(cv);
    detail::write_json(detail::out_file(resolved, kReportFile), report_to_json(r));
    rows.push_back({v, detail::to_double("value", v), std::move(r)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.x_value < b.x_value; });
  std::string tsv = "x\tacc_finetuned\tacc_pruned\tflops_reduction\tconstraints_met\n";
  for (const auto& r : rows) {
    nlohmann::json y = r.report.acc_finetuned, p = r.report.acc_pruned, f = r.report.flops_reduction;
    tsv += r.x + "\t" + y.dump() + "\t" + p.dump() + "\t" + f.dump() + "\t" + (r.report.constraints_met ? "true" : "false") + "\n";
  }
  detail::write_file(fs::path(c.out) / ("sweep_" + axis + ".tsv"), tsv);
  return rows;
}

}  // namespace autosculpt
