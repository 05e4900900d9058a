#include <csignal>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "factguard/annotation_server.hpp"
#include "factguard/errors.hpp"
#include "factguard/runner.hpp"

namespace fs = std::filesystem;
using namespace factguard;

namespace {

struct Common {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = false) {
  auto* opt = cmd->add_option("--config", c.config, "Run configuration (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--run-dir", c.run_dir, "Run directory")->required();
  cmd->add_option("--seed", c.seed, "Override the sampling and fold seeds");
}

// Explicit --config wins; otherwise the snapshot written by prepare.
runner::RunConfig resolve_config(const Common& c) {
  const fs::path path = c.config.empty() ? fs::path(c.run_dir) / "config.json" : fs::path(c.config);
  if (!fs::exists(path)) throw ConfigError("no config: pass --config or run prepare first");
  auto cfg = runner::RunConfig::from_file(path);
  if (c.seed) {
    cfg.dataset.seed = *c.seed;
    cfg.fold_seed = *c.seed;
  }
  return cfg;
}

void print(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << '\n'; }

nlohmann::ordered_json metrics_json(const std::vector<runner::ArmMetrics>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : rows) out.push_back(r.to_json());
  return out;
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

int serve(const Common& common, const std::string& host, int port, const std::string& token,
          const std::string& static_dir) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  // Block before the server threads start so they inherit the mask.
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  runner::AnnotationServerOptions options;
  options.host = host;
  options.port = port;
  options.bearer_token = token;
  options.static_dir = static_dir;
  if (options.bearer_token.empty()) {
    if (const char* env = std::getenv("FACTGUARD_ANNOTATE_TOKEN")) options.bearer_token = env;
  }
  runner::AnnotationServer server(runner::RunStore(common.run_dir), options);
  const int bound = server.start();
  std::cerr << "annotation API listening on http://" << host << ':' << bound << '\n';
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"factguard: factuality-aware reasoning pipeline for credit classification"};
  app.require_subcommand(1);

  Common common;
  auto* prepare = app.add_subcommand("prepare", "Preprocess the dataset and write balanced cases");
  add_common(prepare, common, true);

  auto* generate = app.add_subcommand("generate", "Initial generation for every case");
  add_common(generate, common);

  std::string host = "127.0.0.1", token, static_dir;
  int port = 8765;
  auto* annotate = app.add_subcommand("serve-annotate", "Serve the annotation HTTP API");
  add_common(annotate, common);
  annotate->add_option("--host", host, "Bind address");
  annotate->add_option("--port", port, "Port (0 picks a free one)");
  annotate->add_option("--token", token, "Require this bearer token");
  annotate->add_option("--static-dir", static_dir, "Serve a UI bundle from this directory");

  auto* score = app.add_subcommand("score", "Collect verifier scores for round-0 points");
  add_common(score, common);

  auto* associate = app.add_subcommand("associate", "Hallucination and misclassification association");
  add_common(associate, common);

  auto* detect = app.add_subcommand("detect-eval", "Evaluate verifiers against annotations");
  add_common(detect, common);

  bool granularity_compare = false;
  auto* adapt = app.add_subcommand("adapt", "One round of feedback-driven refinement per source");
  add_common(adapt, common);
  adapt->add_flag("--granularity-compare", granularity_compare,
                  "Compare single-point and entire-content self-reflection instead");

  std::optional<int> rounds;
  auto* rounds_cmd = app.add_subcommand("rounds", "Multi-round self-reflection");
  add_common(rounds_cmd, common);
  rounds_cmd->add_option("--rounds", rounds, "Number of refinement rounds")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Recompute every table from raw records");
  add_common(report, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (annotate->parsed()) return serve(common, host, port, token, static_dir);

    const auto config = resolve_config(common);
    runner::RunLock lock(common.run_dir);
    runner::RunStore store(common.run_dir);

    if (prepare->parsed()) {
      const auto cases = runner::prepare(config, store);
      std::size_t good = 0;
      for (const auto& c : cases) good += c.label == 1;
      print({{"cases", cases.size()}, {"label_1", good}, {"label_0", cases.size() - good}});
    } else if (generate->parsed()) {
      auto backends = runner::Backends::from_config(config);
      print(runner::run_initial(config, store, backends).to_json());
    } else if (score->parsed()) {
      runner::run_scoring(config, store, store.load());
      const auto record = store.load();
      print({{"scores", record.scores.size()}, {"scorers", record.scorer_ids()}});
    } else if (associate->parsed()) {
      const auto row = runner::run_association(config, store.load());
      print({{"model", row.model},
             {"pearson", opt(row.pearson)},
             {"risk_difference", opt(row.risk_difference)},
             {"n_cases", row.n_cases},
             {"n_hallucinated", row.n_hallucinated},
             {"n_misclassified", row.n_misclassified}});
    } else if (detect->parsed()) {
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& r : runner::run_detection_eval(config, store.load())) {
        out.push_back({{"scorer", r.scorer},
                       {"auprc", opt(r.auprc)},
                       {"balanced_accuracy", opt(r.balanced_accuracy)},
                       {"wilcoxon_p", opt(r.wilcoxon_p)},
                       {"n_points", r.n_points}});
      }
      print(out);
    } else if (adapt->parsed()) {
      auto backends = runner::Backends::from_config(config);
      const auto prompt_set = runner::load_prompts(config);
      print(metrics_json(granularity_compare
                             ? runner::run_granularity_compare(config, store, backends, prompt_set)
                             : runner::run_adaptive(config, store, backends, prompt_set)));
    } else if (rounds_cmd->parsed()) {
      auto backends = runner::Backends::from_config(config);
      const auto prompt_set = runner::load_prompts(config);
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& r : runner::run_multi_round_experiment(config, store, backends, prompt_set,
                                                              rounds.value_or(config.rounds))) {
        auto j = r.metrics.to_json();
        j["round"] = r.round;
        out.push_back(j);
      }
      print(out);
    } else if (report->parsed()) {
      for (const auto& p : runner::emit_report(config, store)) std::cout << p.string() << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
