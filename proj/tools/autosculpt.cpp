// autosculpt: pattern-pruning search command line.
//
//   autosculpt train    --config demo/cnn.cfg --out runs/a
//   autosculpt prune    --out runs/a --patterns 6 --flops-target 0.5
//   autosculpt finetune --out runs/a
//   autosculpt report   --out runs/a
//   autosculpt eval     --out runs/a --assignment ones
//   autosculpt sweep    --out runs/a --axis patterns --values 2,4,6,8,10

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "autosculpt/autosculpt.hpp"

namespace {

struct Options {
  std::string config;
  std::string seed, out, model, weights, patterns, flops_target, acc_floor, episodes;
  std::vector<std::string> sets;
  std::string axis, values, assignment;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value config file");
  cmd->add_option("--seed", o.seed, "run seed (u64)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--model", o.model, "topology JSON");
  cmd->add_option("--weights", o.weights, "ASCP weight file");
  cmd->add_option("--patterns", o.patterns, "pattern count or library JSON");
  cmd->add_option("--flops-target", o.flops_target, "minimum FLOPs reduction");
  cmd->add_option("--acc-floor", o.acc_floor, "minimum validation accuracy");
  cmd->add_option("--episodes", o.episodes, "episode budget");
  cmd->add_option("--set", o.sets, "extra KEY=VALUE setting (repeatable)");
}

autosculpt::RunConfig resolve(const Options& o) {
  autosculpt::RunConfig c = o.config.empty() ? autosculpt::RunConfig{} : autosculpt::load_config(o.config);
  const std::pair<const char*, const std::string*> flags[] = {
      {"seed", &o.seed},         {"out", &o.out},
      {"model", &o.model},       {"weights", &o.weights},
      {"patterns", &o.patterns}, {"flops_target", &o.flops_target},
      {"acc_floor", &o.acc_floor}, {"episodes", &o.episodes}};
  for (const auto& [key, value] : flags)
    if (!value->empty()) autosculpt::set_config(c, key, *value);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw autosculpt::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    autosculpt::set_config(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  autosculpt::check_config(c);
  return c;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int fail(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pattern-pruning search for small CNNs and Transformers"};
  app.require_subcommand(1);
  Options o;
  auto* train = app.add_subcommand("train", "train the dense model");
  auto* prune = app.add_subcommand("prune", "search a pattern assignment");
  auto* finetune = app.add_subcommand("finetune", "fine-tune the pruned model");
  auto* eval = app.add_subcommand("eval", "print accuracy and MACs");
  auto* report = app.add_subcommand("report", "merge run logs into report.json");
  auto* sweep = app.add_subcommand("sweep", "vary one setting and tabulate results");
  for (auto* cmd : {train, prune, finetune, eval, report, sweep}) add_common(cmd, o);
  eval->add_option("--assignment", o.assignment, "assignment JSON, or 'ones'");
  sweep->add_option("--axis", o.axis, "patterns | node_dim | flops_target")->required();
  sweep->add_option("--values", o.values, "comma-separated values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    const autosculpt::RunConfig c = resolve(o);
    if (train->parsed()) {
      const auto r = autosculpt::cmd_train(c);
      std::cout << "acc_val " << r.acc_val << " acc_test " << r.acc_test << '\n';
    } else if (prune->parsed()) {
      const auto r = autosculpt::cmd_prune(c);
      std::cout << "constraints_met " << (r.constraints_met ? "true" : "false") << " flops_reduction "
                << r.metrics.flops_reduction << " acc_val " << r.metrics.accuracy << " episodes " << r.episodes_run
                << '\n';
    } else if (finetune->parsed()) {
      std::cout << "acc_finetuned " << autosculpt::cmd_finetune(c) << '\n';
    } else if (eval->parsed()) {
      std::cout << autosculpt::cmd_eval(c, o.assignment).dump() << '\n';
    } else if (report->parsed()) {
      std::cout << autosculpt::report_to_json(autosculpt::cmd_report(c)).dump() << '\n';
    } else if (sweep->parsed()) {
      const auto rows = autosculpt::cmd_sweep(c, o.axis, split_values(o.values));
      for (const auto& r : rows) std::cout << o.axis << '=' << r.x << " acc_finetuned " << r.report.acc_finetuned << '\n';
    }
  } catch (const autosculpt::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
