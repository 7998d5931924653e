// Command-line front end: train / eval / ablate / plot.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asyppo/xio.hpp"

namespace asyppo {

namespace detail {

inline std::pair<std::string, std::string> split_key_value(const std::string& s,
                                                           const std::string& what) {
  const std::size_t eq = s.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(what + " expects key=value, got \"" + s + "\"");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

inline TrainConfig load_cli_config(const std::string& config_path,
                                   const std::vector<std::string>& sets, bool seed_given,
                                   std::uint64_t seed, bool deterministic) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : parse_config(config_path);
  for (const std::string& s : sets) {
    auto [key, value] = split_key_value(s, "--set");
    apply_config_key(cfg, resolve_config_key(key), value);
  }
  if (seed_given) cfg.seed = seed;
  if (deterministic) cfg.deterministic = true;
  cfg.validate();
  return cfg;
}

inline AblationGrid parse_grid_specs(const std::vector<std::string>& specs) {
  AblationGrid grid;
  for (const std::string& s : specs) {
    auto [key, values_csv] = split_key_value(s, "--grid");
    std::vector<std::string> values;
    std::stringstream ss(values_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) values.push_back(item);
    }
    if (values.empty()) throw ConfigError("--grid: no values for key \"" + key + "\"");
    grid.emplace_back(key, values);
  }
  return grid;
}

}  // namespace detail

inline int cli(int argc, const char* const* argv) {
  CLI::App app{"asyppo: desk-scale actor-critic RL laboratory"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a policy and write metrics to a run directory");
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  bool train_det = false;
  std::vector<std::string> train_sets;
  train_cmd->add_option("--config", train_config, "config file (flat key = value)");
  train_cmd->add_option("--out", train_out, "run output directory")->required();
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "override the config seed");
  train_cmd->add_flag("--deterministic", train_det, "zero wall-clock fields for byte-comparable runs");
  train_cmd->add_option("--set", train_sets, "override a config key, key=value (repeatable)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate the final policy of a finished run");
  std::string eval_run;
  std::uint32_t eval_episodes = 0;
  std::uint64_t eval_seed = 1;
  bool eval_greedy = false;
  eval_cmd->add_option("--run", eval_run, "run directory containing manifest.json and params.json")
      ->required();
  eval_cmd->add_option("--episodes", eval_episodes, "episode count (default: eval_episodes from config)");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_flag("--greedy", eval_greedy, "argmax actions instead of sampling");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "sweep config knobs, one training run per grid cell");
  std::string ablate_config, ablate_out;
  std::uint64_t ablate_seed = 0;
  bool ablate_det = false;
  std::vector<std::string> ablate_sets, ablate_grid;
  ablate_cmd->add_option("--config", ablate_config, "base config file");
  ablate_cmd->add_option("--out", ablate_out, "sweep output directory")->required();
  ablate_cmd->add_option("--grid", ablate_grid, "grid spec key=v1,v2 (repeatable; aliases M,k,h,G,aggregation)")
      ->required();
  auto* ablate_seed_opt = ablate_cmd->add_option("--seed", ablate_seed, "override the config seed");
  ablate_cmd->add_flag("--deterministic", ablate_det, "zero wall-clock fields for byte-comparable runs");
  ablate_cmd->add_option("--set", ablate_sets, "override a config key, key=value (repeatable)");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render SVG training curves from run metrics");
  std::string plot_run, plot_out;
  plot_cmd->add_option("--run", plot_run, "run directory containing metrics.jsonl")->required();
  plot_cmd->add_option("--out", plot_out, "plot output directory (default: <run>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) {
      const TrainConfig cfg = detail::load_cli_config(train_config, train_sets,
                                                      train_seed_opt->count() > 0, train_seed, train_det);
      std::printf("training %s on %s for %u steps -> %s\n", cfg.algorithm.c_str(), cfg.env.c_str(),
                  cfg.max_steps, train_out.c_str());
      const std::uint32_t print_every = std::max(1u, cfg.max_steps / 25);
      TrainResult res = run_training(cfg, train_out, [&](const StepReport& r) {
        if (r.step % print_every == 0 || r.step + 1 == cfg.max_steps) {
          std::printf("step %4u  return %.4f  entropy %.4f  clip %.3f\n", r.step, r.mean_return,
                      r.policy_entropy, r.clip_fraction);
        }
      });
      if (!res.reports.empty()) {
        std::printf("done: final mean return %.4f over %zu steps\n",
                    res.reports.back().mean_return, res.reports.size());
      } else {
        std::printf("done: no steps requested\n");
      }
      return 0;
    }
    if (*eval_cmd) {
      const RunManifest manifest = read_manifest(eval_run);
      const TrainConfig cfg = parse_config_text(manifest.config_text, "manifest config");
      const ApproximatorParams actor = load_actor_params(eval_run);
      const Environment env = cfg.make_env();
      const auto prompts = env.sample_prompts(cfg.dataset_seed, cfg.dataset_size);
      const std::uint32_t episodes = eval_episodes > 0 ? eval_episodes : cfg.eval_episodes;
      const EvalReport rep = evaluate_policy(env, actor, prompts, episodes, eval_seed,
                                             eval_greedy ? EvalMode::greedy : EvalMode::sampled);
      nlohmann::ordered_json j;
      j["mean_return"] = rep.mean_return;
      j["episodes"] = rep.episodes;
      j["mode"] = eval_greedy ? "greedy" : "sampled";
      j["per_difficulty"] = nlohmann::ordered_json::object();
      for (const auto& [difficulty, stat] : rep.per_difficulty) {
        nlohmann::ordered_json d;
        d["episodes"] = stat.episodes;
        d["mean_return"] = stat.mean_return;
        j["per_difficulty"][std::to_string(difficulty)] = d;
      }
      std::printf("%s\n", j.dump(2).c_str());
      return 0;
    }
    if (*ablate_cmd) {
      const TrainConfig base = detail::load_cli_config(ablate_config, ablate_sets,
                                                       ablate_seed_opt->count() > 0, ablate_seed,
                                                       ablate_det);
      const AblationGrid grid = detail::parse_grid_specs(ablate_grid);
      const auto cells = run_ablation(base, grid, ablate_out);
      std::printf("%-40s %18s %12s\n", "cell", "final_train_return", "eval_return");
      for (const AblationCell& c : cells) {
        std::printf("%-40s %18.4f %12.4f\n", c.label.c_str(), c.final_train_return, c.eval_return);
      }
      std::printf("summary: %s\n", (fs::path(ablate_out) / "ablation_summary.csv").string().c_str());
      return 0;
    }
    if (*plot_cmd) {
      const auto reports = read_metrics(fs::path(plot_run) / "metrics.jsonl");
      const fs::path out = plot_out.empty() ? fs::path(plot_run) / "plots" : fs::path(plot_out);
      const auto written = emit_plots(reports, out);
      // keep the manifest's artifact list complete
      if (fs::exists(fs::path(plot_run) / "manifest.json") && !written.empty()) {
        RunManifest manifest = read_manifest(plot_run);
        for (const fs::path& p : written) {
          const std::string rel = fs::relative(p, plot_run).string();
          if (std::find(manifest.artifacts.begin(), manifest.artifacts.end(), rel) ==
              manifest.artifacts.end()) {
            manifest.artifacts.push_back(rel);
          }
        }
        write_manifest(manifest, plot_run);
      }
      for (const fs::path& p : written) std::printf("wrote %s\n", p.string().c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace asyppo
