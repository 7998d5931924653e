#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "asyppo/cli.hpp"
#include "asyppo/xio.hpp"

using namespace asyppo;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("asyppo_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"asyppo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli(static_cast<int>(argv.size()), argv.data());
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.env = "micro";
  cfg.env_max_depth = 3;
  cfg.dataset_size = 4;
  cfg.rollout_batch_size = 4;
  cfg.group_size = 4;
  cfg.num_critics = 2;
  cfg.max_steps = 3;
  cfg.actor_hidden = {8};
  cfg.critic_hidden = {6};
  cfg.eval_episodes = 8;
  cfg.deterministic = true;
  return cfg;
}

// minimal well-formedness scan: tags balance and nest properly
bool well_formed_markup(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = text.find('<', i)) != std::string::npos) {
    const std::size_t end = text.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    const bool closing = tag[0] == '/';
    const bool self_closing = tag.back() == '/';
    std::string name = tag.substr(closing ? 1 : 0);
    name = name.substr(0, name.find_first_of(" \t\n/"));
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (!self_closing) {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

}  // namespace

TEST_CASE("parse_config maps appendix-style keys and defaults", "[xio]") {
  const fs::path dir = fresh_dir("cfg");
  write_file(dir / "c.toml",
             "# experiment knobs\n"
             "gradient_mask_percentage = 0.2\n"
             "entropy_filter_mask_percentage = 0.25 # filter out a quarter\n"
             "gamma = 1.0\n"
             "lambd = 0.95\n"
             "value_aggregation_strategy = \"min\"\n"
             "num_return_sequences = 16\n"
             "algorithm = \"asyppo\"\n");
  auto cfg = parse_config(dir / "c.toml");
  CHECK(cfg.adv_mask_fraction == 0.2);
  CHECK(cfg.ent_filter_fraction == 0.25);
  CHECK(cfg.lambda == 0.95);
  CHECK(cfg.aggregation == "min");
  CHECK(cfg.group_size == 16);
  // untouched keys keep their defaults
  CHECK(cfg.ppo_epochs == TrainConfig{}.ppo_epochs);
  CHECK(cfg.entropy_coef == TrainConfig{}.entropy_coef);

  write_file(dir / "empty.toml", "");
  CHECK(parse_config(dir / "empty.toml") == TrainConfig{});

  CHECK_THROWS_AS(parse_config(dir / "missing.toml"), ConfigError);
}

TEST_CASE("parse_config rejects bad input with key and line context", "[xio]") {
  const fs::path dir = fresh_dir("cfg_bad");

  write_file(dir / "range.toml", "gradient_mask_percentage = 1.5\n");
  try {
    parse_config(dir / "range.toml");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("gradient_mask_percentage") != std::string::npos);
  }

  write_file(dir / "unknown.toml", "gamma = 1.0\nnot_a_key = 3\n");
  try {
    parse_config(dir / "unknown.toml");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("not_a_key") != std::string::npos);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write_file(dir / "type.toml", "ppo_epochs = banana\n");
  try {
    parse_config(dir / "type.toml");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("ppo_epochs") != std::string::npos);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }

  write_file(dir / "syntax.toml", "gamma 1.0\n");
  CHECK_THROWS_AS(parse_config(dir / "syntax.toml"), ConfigError);
}

TEST_CASE("config serialization round-trips random valid configs", "[xio]") {
  Rng rng = make_rng(606);
  for (int trial = 0; trial < 30; ++trial) {
    TrainConfig cfg;
    cfg.algorithm = std::vector<std::string>{"asyppo", "ppo", "grpo"}[uniform_index(rng, 3)];
    cfg.gamma = uniform01(rng);
    cfg.lambda = uniform01(rng);
    cfg.epsilon_clip = uniform(rng, 0.05, 0.9);
    cfg.entropy_coef = uniform(rng, 0.0, 0.1);
    cfg.adv_mask_fraction = uniform(rng, 0.0, 0.99);
    cfg.ent_filter_fraction = uniform(rng, 0.0, 0.99);
    cfg.aggregation = uniform01(rng) < 0.5 ? "mean" : "min";
    cfg.num_critics = 1 + static_cast<std::uint32_t>(uniform_index(rng, 3));
    cfg.group_size = cfg.num_critics + static_cast<std::uint32_t>(uniform_index(rng, 8)) + 1;
    cfg.rollout_batch_size = 1 + static_cast<std::uint32_t>(uniform_index(rng, 64));
    cfg.ppo_epochs = 1 + static_cast<std::uint32_t>(uniform_index(rng, 4));
    cfg.max_steps = static_cast<std::uint32_t>(uniform_index(rng, 100));
    cfg.actor_lr = std::pow(10.0, uniform(rng, -6.0, -2.0));
    cfg.critic_lr = std::pow(10.0, uniform(rng, -6.0, -2.0));
    cfg.seed = rng();
    cfg.dataset_seed = rng();
    cfg.env = uniform01(rng) < 0.5 ? "micro" : "digit_chain";
    cfg.critic_target = uniform01(rng) < 0.5 ? "mc_return" : "lambda_return";
    cfg.actor_hidden = {static_cast<int>(1 + uniform_index(rng, 64)),
                        static_cast<int>(1 + uniform_index(rng, 64))};
    cfg.critic_hidden = {static_cast<int>(1 + uniform_index(rng, 32))};
    cfg.deterministic = uniform01(rng) < 0.5;
    cfg.validate();

    auto parsed = parse_config_text(serialize_config(cfg));
    CHECK(parsed == cfg);
  }
}

TEST_CASE("config key aliases resolve", "[xio]") {
  TrainConfig cfg;
  apply_config_key(cfg, resolve_config_key("M"), "3");
  apply_config_key(cfg, resolve_config_key("k"), "0.3");
  apply_config_key(cfg, resolve_config_key("h"), "0.1");
  apply_config_key(cfg, resolve_config_key("G"), "12");
  apply_config_key(cfg, resolve_config_key("aggregation"), "min");
  CHECK(cfg.num_critics == 3);
  CHECK(cfg.adv_mask_fraction == 0.3);
  CHECK(cfg.ent_filter_fraction == 0.1);
  CHECK(cfg.group_size == 12);
  CHECK(cfg.aggregation == "min");
}

TEST_CASE("metrics persist losslessly to JSON lines and CSV", "[xio]") {
  const fs::path dir = fresh_dir("metrics");
  std::vector<StepReport> reports(3);
  for (std::uint32_t i = 0; i < 3; ++i) {
    StepReport& r = reports[i];
    r.step = i;
    r.mean_return = 1.0 / 3.0 + i;
    r.policy_entropy = std::sqrt(2.0) * (i + 1);
    r.critic_loss = {0.1 * i + 1e-17, 0.25};
    r.sigma_mean = 0.123456789012345678;
    r.sigma_q25 = 0.1;
    r.sigma_q50 = 0.2;
    r.sigma_q75 = 0.3;
    r.clip_fraction = i / 7.0;
    r.masked_adv_count = 12 + i;
    r.filtered_ent_count = 5;
    r.wall_time_ms = 0;
  }
  write_metrics(reports, dir);

  const std::string jsonl = slurp(dir / "metrics.jsonl");
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 3);
  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows

  auto back = read_metrics(dir / "metrics.jsonl");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].step == reports[i].step);
    CHECK(back[i].mean_return == reports[i].mean_return);  // bit-exact round trip
    CHECK(back[i].policy_entropy == reports[i].policy_entropy);
    CHECK(back[i].critic_loss == reports[i].critic_loss);
    CHECK(back[i].sigma_mean == reports[i].sigma_mean);
    CHECK(back[i].clip_fraction == reports[i].clip_fraction);
    CHECK(back[i].masked_adv_count == reports[i].masked_adv_count);
    CHECK(back[i].wall_time_ms == reports[i].wall_time_ms);
  }
}

TEST_CASE("smoothing is a fixed point on constant series", "[xio]") {
  std::vector<double> flat(40, 0.75);
  auto smoothed = smooth_series(flat);
  REQUIRE(smoothed.size() == flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    CHECK(smoothed[i] == Catch::Approx(flat[i]).margin(1e-12));
  }

  std::vector<double> rising(40);
  for (std::size_t i = 0; i < rising.size(); ++i) rising[i] = static_cast<double>(i);
  auto s = smooth_series(rising);
  CHECK(s[0] == 0.0);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] < rising[i]);  // trailing window lags
}

TEST_CASE("emit_plots writes well-formed vector graphics", "[xio]") {
  const fs::path dir = fresh_dir("plots");
  TrainConfig cfg = tiny_config();
  auto res = train(cfg);
  auto written = emit_plots(res.reports, dir);
  REQUIRE(written.size() == 4);
  for (const auto& p : written) {
    const std::string svg = slurp(p);
    CHECK(svg.find("<svg") == 0);
    CHECK(well_formed_markup(svg));
    CHECK(svg.find("polyline") != std::string::npos);
  }
  CHECK(emit_plots({}, dir / "none").empty());
}

TEST_CASE("run_training writes a complete, manifest-listed run directory", "[xio]") {
  const fs::path dir = fresh_dir("run");
  TrainConfig cfg = tiny_config();
  auto res = run_training(cfg, dir / "a");
  REQUIRE(res.reports.size() == cfg.max_steps);

  auto manifest = read_manifest(dir / "a");
  CHECK(manifest.seed == cfg.seed);
  CHECK(!manifest.created_utc.empty());
  CHECK(!manifest.finished_utc.empty());
  for (const std::string& artifact : manifest.artifacts) {
    CHECK(fs::exists(dir / "a" / artifact));
  }

  // config snapshot parses back to the exact config
  CHECK(parse_config(dir / "a" / "config.txt") == cfg);

  // final params load and evaluate
  auto actor = load_actor_params(dir / "a");
  CHECK(actor.weights == res.actor.weights);

  // preflight failure: out_dir nested under a regular file
  write_file(dir / "blocker", "x");
  CHECK_THROWS_AS(run_training(cfg, dir / "blocker" / "sub"), IoError);
}

TEST_CASE("deterministic runs produce byte-identical metrics", "[xio]") {
  const fs::path dir = fresh_dir("det");
  TrainConfig cfg = tiny_config();
  run_training(cfg, dir / "r1");
  run_training(cfg, dir / "r2");
  CHECK(slurp(dir / "r1" / "metrics.jsonl") == slurp(dir / "r2" / "metrics.jsonl"));
  CHECK(slurp(dir / "r1" / "metrics.csv") == slurp(dir / "r2" / "metrics.csv"));
}

TEST_CASE("run_ablation sweeps the grid and summarizes", "[xio]") {
  const fs::path dir = fresh_dir("ablate");
  TrainConfig cfg = tiny_config();
  cfg.max_steps = 2;
  AblationGrid grid{{"k", {"0", "0.2"}}, {"h", {"0", "0.2"}}};
  auto cells = run_ablation(cfg, grid, dir);
  REQUIRE(cells.size() == 4);
  for (const auto& c : cells) {
    CHECK(fs::exists(fs::path(c.run_dir) / "metrics.jsonl"));
    CHECK(fs::exists(fs::path(c.run_dir) / "manifest.json"));
  }
  CHECK(fs::exists(dir / "ablation_summary.csv"));
  const std::string summary = slurp(dir / "ablation_summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 5);

  // identical cell, identical seed: identical result
  auto again = run_ablation(cfg, grid, fresh_dir("ablate2"));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i].final_train_return == again[i].final_train_return);
    CHECK(cells[i].eval_return == again[i].eval_return);
  }

  // both aggregation modes run to completion
  AblationGrid agg_grid{{"aggregation", {"mean", "min"}}};
  auto agg_cells = run_ablation(cfg, agg_grid, fresh_dir("ablate3"));
  CHECK(agg_cells.size() == 2);

  CHECK_THROWS_AS(run_ablation(cfg, {}, dir), ConfigError);
}

TEST_CASE("cli train/eval/plot lifecycle", "[xio]") {
  const fs::path dir = fresh_dir("cli");
  write_file(dir / "c.toml", serialize_config(tiny_config()));
  const std::string out = (dir / "runs" / "a").string();

  CHECK(run_cli({"train", "--config", (dir / "c.toml").string(), "--seed", "1", "--out", out,
                 "--deterministic"}) == 0);
  CHECK(fs::exists(fs::path(out) / "manifest.json"));
  CHECK(fs::exists(fs::path(out) / "metrics.jsonl"));
  auto manifest = read_manifest(out);
  CHECK(manifest.seed == 1);  // --seed overrides the config file

  CHECK(run_cli({"eval", "--run", out, "--episodes", "8", "--greedy"}) == 0);
  CHECK(run_cli({"plot", "--run", out}) == 0);
  CHECK(fs::exists(fs::path(out) / "plots" / "return.svg"));
  // plot artifacts get folded into the manifest
  auto updated = read_manifest(out);
  bool found = false;
  for (const auto& a : updated.artifacts) found = found || a.find("return.svg") != std::string::npos;
  CHECK(found);

  // byte-identical deterministic reruns, timestamps aside
  const std::string out2 = (dir / "runs" / "b").string();
  CHECK(run_cli({"train", "--config", (dir / "c.toml").string(), "--seed", "1", "--out", out2,
                 "--deterministic"}) == 0);
  CHECK(slurp(fs::path(out) / "metrics.jsonl") == slurp(fs::path(out2) / "metrics.jsonl"));
  CHECK(slurp(fs::path(out) / "metrics.csv") == slurp(fs::path(out2) / "metrics.csv"));

  // --set overrides config keys
  const std::string out3 = (dir / "runs" / "c").string();
  CHECK(run_cli({"train", "--config", (dir / "c.toml").string(), "--out", out3, "--set",
                 "max_steps=1", "--set", "k=0.1"}) == 0);
  auto cfg3 = parse_config(fs::path(out3) / "config.txt");
  CHECK(cfg3.max_steps == 1);
  CHECK(cfg3.adv_mask_fraction == 0.1);
}

TEST_CASE("cli ablate and error paths", "[xio]") {
  const fs::path dir = fresh_dir("cli2");
  write_file(dir / "c.toml", serialize_config(tiny_config()) + "max_steps = 1\n");
  const std::string out = (dir / "sweep").string();
  CHECK(run_cli({"ablate", "--config", (dir / "c.toml").string(), "--out", out, "--grid",
                 "k=0,0.2", "--grid", "h=0,0.2"}) == 0);
  int n_cells = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory()) ++n_cells;
  }
  CHECK(n_cells == 4);

  CHECK(run_cli({"no_such_command"}) != 0);
  CHECK(run_cli({"train"}) != 0);                                  // missing --out
  CHECK(run_cli({"train", "--out", (dir / "x").string(), "--set", "nope=1"}) != 0);
  CHECK(run_cli({"eval", "--run", (dir / "missing").string()}) != 0);
}
