#include "metaqa/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "metaqa/errors.hpp"
#include "metaqa/harness.hpp"
#include "metaqa/simulator.hpp"

namespace metaqa {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void emit(const json& report, const std::string& path, std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t env_seed() {
  const char* s = std::getenv("METAQA_SEED");
  if (s == nullptr || *s == '\0') return 0;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError(std::string("METAQA_SEED is not an integer: ") + s);
  }
}

// A data argument is either a prediction file or a directory written by
// `simulate`, in which case the named split is used.
Dataset load_split(const fs::path& data, Split split) {
  if (fs::is_directory(data)) {
    const fs::path file = data / (std::string(split_name(split)) + ".jsonl");
    if (!fs::exists(file)) throw DataError("missing split file " + file.string());
    return load_predictions(file, split);
  }
  if (!fs::exists(data)) throw DataError("missing data file " + data.string());
  return load_predictions(data, split);
}

EvalMetricConfig metric_config_for(const fs::path& data, double theta) {
  const fs::path spec = fs::is_directory(data) ? data / "benchmark.json" : data.parent_path() / "benchmark.json";
  if (fs::exists(spec)) return BenchmarkSpec::load(spec).metric_config(theta);
  EvalMetricConfig c;
  c.theta = theta;
  return c;
}

TrainConfig load_train_config(const std::string& path, std::optional<std::uint64_t> seed) {
  TrainConfig base;
  base.seed = env_seed();
  TrainConfig cfg = path.empty() ? base : TrainConfig::from_json(read_json(path), base);
  if (seed) cfg.seed = *seed;
  return cfg;
}

json unsolvable_json(const UnsolvableReport& r) {
  return {{"overall", r.overall}, {"total", r.total}, {"per_dataset", r.per_dataset}, {"counts", r.counts}};
}

double report_value(const json& report, const std::string& key, const std::string& path) {
  try {
    if (report.contains(key)) return report.at(key).get<double>();
    return report.at("metrics").at("overall").at(key).get<double>();
  } catch (const json::exception&) {
    throw DataError(path + ": report has no numeric field '" + key + "'");
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-agent answer selection: simulate, train, evaluate"};
  app.require_subcommand(1, 1);

  std::string spec_path, out_path, data_path, config_path, ckpt_path, report_path, ablate_list, sizes_list;
  std::string a_list, b_list, metric_key = "selection_accuracy", strategies;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic benchmark");
  simulate->add_option("--spec", spec_path, "Benchmark spec (JSON); the standard benchmark when omitted");
  simulate->add_option("--out", out_path, "Output directory")->required();
  simulate->add_option("--seed", seed, "Override the spec seed");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", data_path, "Data directory or training file")->required();
  train_cmd->add_option("--config", config_path, "Training config (JSON)");
  train_cmd->add_option("--out", out_path, "Checkpoint path")->required();
  train_cmd->add_option("--seed", seed, "Override the config seed");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("--data", data_path, "Data directory or test file")->required();
  eval_cmd->add_option("--ablate", ablate_list, "Comma-separated agents to switch off");
  eval_cmd->add_option("--report", report_path, "Report path (stdout when omitted)");
  eval_cmd->add_option("--workers", workers, "Evaluation threads")->check(CLI::PositiveNumber);

  auto* sweep_ablate = app.add_subcommand("ablate-sweep", "Leave-one-out evaluation over every agent");
  sweep_ablate->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  sweep_ablate->add_option("--data", data_path, "Data directory or test file")->required();
  sweep_ablate->add_option("--report", report_path, "Report path (stdout when omitted)");
  sweep_ablate->add_option("--workers", workers, "Evaluation threads")->check(CLI::PositiveNumber);

  auto* baselines = app.add_subcommand("baselines", "Evaluate the reference selectors");
  baselines->add_option("--data", data_path, "Data directory or test file")->required();
  baselines->add_option("--ckpt", ckpt_path, "Checkpoint for the router-only selector");
  baselines->add_option("--strategies", strategies, "Comma-separated strategies (default: all)");
  baselines->add_option("--report", report_path, "Report path (stdout when omitted)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full loss");
  gradcheck->add_option("--config", config_path, "Toy model config (JSON)");
  gradcheck->add_option("--report", report_path, "Report path (stdout when omitted)");

  auto* sweep = app.add_subcommand("sweep", "Train on growing subsets and evaluate each");
  sweep->add_option("--data", data_path, "Data directory")->required();
  sweep->add_option("--sizes", sizes_list, "Comma-separated training sizes")->required();
  sweep->add_option("--config", config_path, "Training config (JSON)");
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--report", report_path, "Report path (stdout when omitted)");

  auto* compare = app.add_subcommand("compare", "Welch t-test between two groups of run reports");
  compare->add_option("--a", a_list, "Comma-separated reports")->required();
  compare->add_option("--b", b_list, "Comma-separated reports")->required();
  compare->add_option("--metric", metric_key, "Report field to compare");
  compare->add_option("--report", report_path, "Report path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) {
      BenchmarkSpec spec = spec_path.empty() ? standard_benchmark() : BenchmarkSpec::load(spec_path);
      if (seed) spec.seed = *seed;
      Benchmark b = generate_benchmark(spec, spec.seed);
      const fs::path dir(out_path);
      fs::create_directories(dir);
      save_predictions(b.train, dir / "train.jsonl");
      save_predictions(b.dev, dir / "dev.jsonl");
      save_predictions(b.test, dir / "test.jsonl");
      write_text(dir / "benchmark.json", spec.to_json().dump(2) + "\n");
      json summary = {{"seed", spec.seed},
                      {"sizes", {{"train", b.train.size()}, {"dev", b.dev.size()}, {"test", b.test.size()}}},
                      {"unsolvable",
                       {{"train", unsolvable_json(describe_oracle(b.train))},
                        {"dev", unsolvable_json(describe_oracle(b.dev))},
                        {"test", unsolvable_json(describe_oracle(b.test))}}}};
      write_text(dir / "summary.json", summary.dump(2) + "\n");
      err << "[simulate] wrote " << b.train.size() << "/" << b.dev.size() << "/" << b.test.size()
          << " examples to " << dir.string() << "\n";
    } else if (train_cmd->parsed()) {
      const TrainConfig cfg = load_train_config(config_path, seed);
      Dataset tr = load_split(data_path, Split::kTrain);
      std::optional<Dataset> dev;
      if (cfg.eval_every > 0 && fs::is_directory(data_path) && fs::exists(fs::path(data_path) / "dev.jsonl")) {
        dev = load_split(data_path, Split::kDev);
      }
      err << "[train] " << (cfg.max_train_examples ? cfg.max_train_examples : tr.size()) << " examples, seed "
          << cfg.seed << "\n";
      Checkpoint ckpt = train(tr, dev ? &*dev : nullptr, cfg);
      if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
      save_checkpoint(ckpt, out_path);
      err << "[train] " << ckpt.meta.steps << " steps, checkpoint " << out_path << "\n";
    } else if (eval_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(ckpt_path);
      Dataset test = load_split(data_path, Split::kTest);
      EvalOptions opts;
      for (const auto& a : split_list(ablate_list)) opts.ablated.insert(a);
      opts.workers = workers;
      opts.metrics = metric_config_for(data_path, ckpt.theta);
      emit(to_json(evaluate(ckpt, test, opts)), report_path, out);
    } else if (sweep_ablate->parsed()) {
      Checkpoint ckpt = load_checkpoint(ckpt_path);
      const std::string before = serialize_checkpoint(ckpt);
      Dataset test = load_split(data_path, Split::kTest);
      EvalOptions opts;
      opts.workers = workers;
      opts.metrics = metric_config_for(data_path, ckpt.theta);
      json report;
      report["full"] = to_json(evaluate(ckpt, test, opts));
      for (const auto& agent : test.registry.agents) {
        opts.ablated = {agent};
        RunReport r = evaluate(ckpt, test, opts);
        std::size_t hits = 0;
        for (const auto& s : r.selected_agents) hits += s == agent;
        json row = to_json(r);
        row["ablated_agent_selections"] = hits;
        report["leave_one_out"][agent] = row;
        err << "[ablate-sweep] without " << agent << ": accuracy " << r.selection_accuracy << "\n";
      }
      report["checkpoint_unchanged"] = serialize_checkpoint(ckpt) == before;
      emit(report, report_path, out);
    } else if (baselines->parsed()) {
      Dataset test = load_split(data_path, Split::kTest);
      std::optional<Checkpoint> ckpt;
      if (!ckpt_path.empty()) ckpt = load_checkpoint(ckpt_path);
      const double theta = ckpt ? ckpt->theta : 0.7;
      const EvalMetricConfig metrics = metric_config_for(data_path, theta);
      std::vector<std::string> names = split_list(strategies);
      if (names.empty()) {
        names = {"oracle", "conf_argmax"};
        if (ckpt) names.push_back("router_only");
        for (const auto& a : test.registry.agents) names.push_back("fixed_agent:" + a);
      }
      json report;
      for (const auto& name : names) {
        RunReport r = run_baseline(name, test, metrics, ckpt ? &*ckpt : nullptr);
        report["baselines"][name] = to_json(r);
      }
      report["unsolvable"] = unsolvable_json(describe_oracle(test, theta));
      emit(report, report_path, out);
    } else if (gradcheck->parsed()) {
      GradCheckConfig cfg = config_path.empty() ? GradCheckConfig{} : GradCheckConfig::from_json(read_json(config_path));
      GradReport r = model_gradcheck(cfg);
      json worst = json::array();
      std::vector<GradEntry> entries = r.entries;
      std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) { return x.rel_error > y.rel_error; });
      for (std::size_t i = 0; i < std::min<std::size_t>(5, entries.size()); ++i) {
        worst.push_back({{"param", entries[i].param},
                         {"index", entries[i].index},
                         {"analytic", entries[i].analytic},
                         {"numeric", entries[i].numeric},
                         {"rel_error", entries[i].rel_error}});
      }
      emit({{"checked", r.checked},
            {"max_rel_error", r.max_rel_error},
            {"tolerance", cfg.options.tol},
            {"passed", r.passed},
            {"worst", worst}},
           report_path, out);
      if (!r.passed) {
        err << "gradcheck: max relative error " << r.max_rel_error << " exceeds " << cfg.options.tol << "\n";
        return kExitNumeric;
      }
    } else if (sweep->parsed()) {
      const TrainConfig cfg = load_train_config(config_path, seed);
      std::vector<std::size_t> sizes;
      for (const auto& s : split_list(sizes_list)) {
        try {
          sizes.push_back(std::stoul(s));
        } catch (const std::exception&) {
          throw ConfigError("--sizes: not a number: " + s);
        }
      }
      Dataset tr = load_split(data_path, Split::kTrain);
      Dataset test = load_split(data_path, Split::kTest);
      json rows = json::array();
      for (const auto& row : efficiency_sweep(tr, test, sizes, cfg, metric_config_for(data_path, cfg.theta))) {
        rows.push_back({{"train_size", row.train_size},
                        {"selection_accuracy", row.selection_accuracy},
                        {"metric", row.metric},
                        {"f1", row.f1}});
      }
      emit({{"seed", cfg.seed}, {"rows", rows}}, report_path, out);
    } else if (compare->parsed()) {
      auto values = [&](const std::string& list) {
        std::vector<double> v;
        for (const auto& p : split_list(list)) {
          json r;
          try {
            r = read_json(p);
          } catch (const ConfigError& e) {
            throw DataError(e.what());
          }
          v.push_back(report_value(r, metric_key, p));
        }
        return v;
      };
      const auto a = values(a_list);
      const auto b = values(b_list);
      if (a.size() < 2 || b.size() < 2) throw ConfigError("compare: each group needs at least two reports");
      TTestResult t = compare_runs(a, b);
      emit({{"metric", metric_key},
            {"a", a},
            {"b", b},
            {"t", t.t},
            {"p", t.p},
            {"df", t.df},
            {"significant", t.significant}},
           report_path, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace metaqa
