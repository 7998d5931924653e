// Operational shell: config file parsing, metrics persistence (JSON lines +
// CSV mirror), hand-rolled SVG training curves, run manifests, and the CLI.
//
// Config files are flat `key = value` lines. Keys follow the conventional
// experiment-config names where one exists (gamma, lambd, ppo_epochs,
// entropy_loss_coef, gradient_mask_percentage, entropy_filter_mask_percentage,
// value_aggregation_strategy, num_return_sequences, rollout_batch_size,
// max_steps, init_kl_coef, seed); everything else is named after the
// TrainConfig field it sets.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "asyppo/common.hpp"
#include "asyppo/trainer.hpp"

namespace asyppo {

namespace fs = std::filesystem;

// %.17g: enough digits that double -> text -> double is exact.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// config file

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

inline double parse_double_value(const std::string& key, const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(where + ": key \"" + key + "\" expects a number, got \"" + v + "\"");
  }
}

inline std::uint64_t parse_uint_value(const std::string& key, const std::string& v, const std::string& where) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return u;
  } catch (const std::exception&) {
    throw ConfigError(where + ": key \"" + key + "\" expects a non-negative integer, got \"" + v + "\"");
  }
}

inline bool parse_bool_value(const std::string& key, const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(where + ": key \"" + key + "\" expects true or false, got \"" + v + "\"");
}

inline std::vector<int> parse_int_list_value(const std::string& key, const std::string& raw,
                                             const std::string& where) {
  std::vector<int> out;
  std::string v = unquote(raw);
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_uint_value(key, item, where)));
  }
  if (out.empty()) throw ConfigError(where + ": key \"" + key + "\" expects a comma-separated list");
  return out;
}

}  // namespace detail

// Applies one `key = value` setting; `where` prefixes error messages (file
// name plus line, or "override" for CLI --set).
inline void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& raw_value,
                             const std::string& where = "override") {
  using namespace detail;
  const std::string v = trim(raw_value);
  const std::string s = unquote(v);
  if (key == "algorithm") cfg.algorithm = s;
  else if (key == "gamma") cfg.gamma = parse_double_value(key, v, where);
  else if (key == "lambd") cfg.lambda = parse_double_value(key, v, where);
  else if (key == "epsilon_clip") cfg.epsilon_clip = parse_double_value(key, v, where);
  else if (key == "entropy_loss_coef") cfg.entropy_coef = parse_double_value(key, v, where);
  else if (key == "gradient_mask_percentage") cfg.adv_mask_fraction = parse_double_value(key, v, where);
  else if (key == "entropy_filter_mask_percentage") cfg.ent_filter_fraction = parse_double_value(key, v, where);
  else if (key == "value_aggregation_strategy") cfg.aggregation = s;
  else if (key == "init_kl_coef") cfg.init_kl_coef = parse_double_value(key, v, where);
  else if (key == "num_critics") cfg.num_critics = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "num_return_sequences") cfg.group_size = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "rollout_batch_size") cfg.rollout_batch_size = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "ppo_epochs") cfg.ppo_epochs = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "minibatch_size") cfg.minibatch_size = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "max_steps") cfg.max_steps = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "critic_steps_per_batch") cfg.critic_steps = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "critic_target") cfg.critic_target = s;
  else if (key == "actor_learning_rate") cfg.actor_lr = parse_double_value(key, v, where);
  else if (key == "critic_learning_rate") cfg.critic_lr = parse_double_value(key, v, where);
  else if (key == "optimizer") cfg.optimizer = s;
  else if (key == "advantage_whitening") cfg.advantage_whitening = parse_bool_value(key, v, where);
  else if (key == "seed") cfg.seed = parse_uint_value(key, v, where);
  else if (key == "dataset_seed") cfg.dataset_seed = parse_uint_value(key, v, where);
  else if (key == "dataset_size") cfg.dataset_size = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "env") cfg.env = s;
  else if (key == "env_horizon") cfg.env_horizon = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "env_max_depth") cfg.env_max_depth = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "env_filler_tokens") cfg.env_filler_tokens = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "actor_hidden") cfg.actor_hidden = parse_int_list_value(key, v, where);
  else if (key == "critic_hidden") cfg.critic_hidden = parse_int_list_value(key, v, where);
  else if (key == "eval_episodes") cfg.eval_episodes = static_cast<std::uint32_t>(parse_uint_value(key, v, where));
  else if (key == "deterministic") cfg.deterministic = parse_bool_value(key, v, where);
  else throw ConfigError(where + ": unknown key \"" + key + "\"");
}

// Short aliases accepted in --set and --grid specs.
inline std::string resolve_config_key(const std::string& key) {
  if (key == "M") return "num_critics";
  if (key == "k") return "gradient_mask_percentage";
  if (key == "h") return "entropy_filter_mask_percentage";
  if (key == "G") return "num_return_sequences";
  if (key == "aggregation") return "value_aggregation_strategy";
  if (key == "beta") return "entropy_loss_coef";
  return key;
}

inline TrainConfig parse_config_text(const std::string& text, const std::string& source = "config") {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    // strip comments outside quotes
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line = line.substr(0, i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    const std::string where = source + " line " + std::to_string(lineno);
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected key = value, got \"" + line + "\"");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    apply_config_key(cfg, key, value, where);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.filename().string());
}

inline std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream out;
  auto list = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(v[i]);
    }
    return s;
  };
  out << "algorithm = \"" << cfg.algorithm << "\"\n";
  out << "seed = " << cfg.seed << "\n";
  out << "dataset_seed = " << cfg.dataset_seed << "\n";
  out << "max_steps = " << cfg.max_steps << "\n";
  out << "gamma = " << fmt_double(cfg.gamma) << "\n";
  out << "lambd = " << fmt_double(cfg.lambda) << "\n";
  out << "epsilon_clip = " << fmt_double(cfg.epsilon_clip) << "\n";
  out << "entropy_loss_coef = " << fmt_double(cfg.entropy_coef) << "\n";
  out << "gradient_mask_percentage = " << fmt_double(cfg.adv_mask_fraction) << "\n";
  out << "entropy_filter_mask_percentage = " << fmt_double(cfg.ent_filter_fraction) << "\n";
  out << "value_aggregation_strategy = \"" << cfg.aggregation << "\"\n";
  out << "init_kl_coef = " << fmt_double(cfg.init_kl_coef) << "\n";
  out << "num_critics = " << cfg.num_critics << "\n";
  out << "num_return_sequences = " << cfg.group_size << "\n";
  out << "rollout_batch_size = " << cfg.rollout_batch_size << "\n";
  out << "ppo_epochs = " << cfg.ppo_epochs << "\n";
  out << "minibatch_size = " << cfg.minibatch_size << "\n";
  out << "critic_steps_per_batch = " << cfg.critic_steps << "\n";
  out << "critic_target = \"" << cfg.critic_target << "\"\n";
  out << "actor_learning_rate = " << fmt_double(cfg.actor_lr) << "\n";
  out << "critic_learning_rate = " << fmt_double(cfg.critic_lr) << "\n";
  out << "optimizer = \"" << cfg.optimizer << "\"\n";
  out << "advantage_whitening = " << (cfg.advantage_whitening ? "true" : "false") << "\n";
  out << "dataset_size = " << cfg.dataset_size << "\n";
  out << "env = \"" << cfg.env << "\"\n";
  out << "env_horizon = " << cfg.env_horizon << "\n";
  out << "env_max_depth = " << cfg.env_max_depth << "\n";
  out << "env_filler_tokens = " << cfg.env_filler_tokens << "\n";
  out << "actor_hidden = \"" << list(cfg.actor_hidden) << "\"\n";
  out << "critic_hidden = \"" << list(cfg.critic_hidden) << "\"\n";
  out << "eval_episodes = " << cfg.eval_episodes << "\n";
  out << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// metrics

// One JSON object per step with a stable field order; numeric fields carry
// full double precision so a read-back is lossless.
inline std::string report_to_json_line(const StepReport& r) {
  std::ostringstream o;
  o << "{\"step\":" << r.step;
  o << ",\"mean_return\":" << fmt_double(r.mean_return);
  o << ",\"policy_entropy\":" << fmt_double(r.policy_entropy);
  o << ",\"critic_loss\":[";
  for (std::size_t i = 0; i < r.critic_loss.size(); ++i) {
    if (i) o << ",";
    o << fmt_double(r.critic_loss[i]);
  }
  o << "]";
  o << ",\"sigma_mean\":" << fmt_double(r.sigma_mean);
  o << ",\"sigma_q25\":" << fmt_double(r.sigma_q25);
  o << ",\"sigma_q50\":" << fmt_double(r.sigma_q50);
  o << ",\"sigma_q75\":" << fmt_double(r.sigma_q75);
  o << ",\"clip_fraction\":" << fmt_double(r.clip_fraction);
  o << ",\"masked_adv_count\":" << r.masked_adv_count;
  o << ",\"filtered_ent_count\":" << r.filtered_ent_count;
  o << ",\"wall_time_ms\":" << r.wall_time_ms;
  o << "}";
  return o.str();
}

inline std::string metrics_csv_header(std::size_t n_critics) {
  std::string h = "step,mean_return,policy_entropy";
  for (std::size_t i = 0; i < n_critics; ++i) h += ",critic_loss_" + std::to_string(i);
  h += ",sigma_mean,sigma_q25,sigma_q50,sigma_q75,clip_fraction,masked_adv_count,filtered_ent_count,wall_time_ms";
  return h;
}

inline std::string report_to_csv_line(const StepReport& r) {
  std::ostringstream o;
  o << r.step << "," << fmt_double(r.mean_return) << "," << fmt_double(r.policy_entropy);
  for (double c : r.critic_loss) o << "," << fmt_double(c);
  o << "," << fmt_double(r.sigma_mean) << "," << fmt_double(r.sigma_q25) << ","
    << fmt_double(r.sigma_q50) << "," << fmt_double(r.sigma_q75) << ","
    << fmt_double(r.clip_fraction) << "," << r.masked_adv_count << "," << r.filtered_ent_count
    << "," << r.wall_time_ms;
  return o.str();
}

// Streams reports to metrics.jsonl and metrics.csv as they arrive, flushing
// per line so a crashed run leaves readable files.
class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& dir) : dir_(dir) {
    fs::create_directories(dir);
    jsonl_.open(dir / "metrics.jsonl", std::ios::app);
    csv_.open(dir / "metrics.csv", std::ios::app);
    if (!jsonl_ || !csv_) {
      throw IoError("cannot open metrics files for writing under " + dir.string());
    }
  }

  void append(const StepReport& r) {
    if (!header_written_ && fs::file_size(dir_ / "metrics.csv") == 0) {
      csv_ << metrics_csv_header(r.critic_loss.size()) << "\n";
    }
    header_written_ = true;
    jsonl_ << report_to_json_line(r) << "\n";
    csv_ << report_to_csv_line(r) << "\n";
    jsonl_.flush();
    csv_.flush();
  }

 private:
  fs::path dir_;
  std::ofstream jsonl_;
  std::ofstream csv_;
  bool header_written_ = false;
};

inline void write_metrics(const std::vector<StepReport>& reports, const fs::path& dir) {
  MetricsWriter w(dir);
  for (const StepReport& r : reports) w.append(r);
}

inline StepReport report_from_json(const nlohmann::json& j) {
  StepReport r;
  r.step = j.at("step").get<std::uint32_t>();
  r.mean_return = j.at("mean_return").get<double>();
  r.policy_entropy = j.at("policy_entropy").get<double>();
  r.critic_loss = j.at("critic_loss").get<std::vector<double>>();
  r.sigma_mean = j.at("sigma_mean").get<double>();
  r.sigma_q25 = j.at("sigma_q25").get<double>();
  r.sigma_q50 = j.at("sigma_q50").get<double>();
  r.sigma_q75 = j.at("sigma_q75").get<double>();
  r.clip_fraction = j.at("clip_fraction").get<double>();
  r.masked_adv_count = j.at("masked_adv_count").get<std::uint64_t>();
  r.filtered_ent_count = j.at("filtered_ent_count").get<std::uint64_t>();
  r.wall_time_ms = j.at("wall_time_ms").get<std::uint64_t>();
  return r;
}

inline std::vector<StepReport> read_metrics(const fs::path& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw IoError("cannot open metrics file: " + jsonl_path.string());
  std::vector<StepReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    out.push_back(report_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// plots

// Windowed exponential moving average: an 11-step trailing window with decay
// factor 0.6, normalized so a constant series is a fixed point.
inline std::vector<double> smooth_series(const std::vector<double>& x, int window = 11,
                                         double factor = 0.6) {
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double num = 0.0;
    double den = 0.0;
    double w = 1.0;
    for (std::size_t back = 0; back < static_cast<std::size_t>(window) && back <= i; ++back) {
      num += w * x[i - back];
      den += w;
      w *= factor;
    }
    out[i] = num / den;
  }
  return out;
}

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> y;
};

inline std::string svg_polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                                const std::string& color, double width, double opacity) {
  std::ostringstream o;
  o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width
    << "\" stroke-opacity=\"" << opacity << "\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) o << " ";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f", xs[i], ys[i]);
    o << buf;
  }
  o << "\"/>\n";
  return o.str();
}

// Minimal self-contained line chart; raw series drawn faint, smoothed bold.
inline std::string render_chart(const std::string& title, const std::vector<Series>& series) {
  const double W = 720, H = 420;
  const double L = 70, R = 20, T = 40, B = 50;
  double ymin = 1e300, ymax = -1e300;
  std::size_t n = 0;
  for (const Series& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (n == 0) {
    ymin = 0;
    ymax = 1;
  }
  if (ymax - ymin < 1e-12) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto xpix = [&](double step) {
    return L + (W - L - R) * (n > 1 ? step / static_cast<double>(n - 1) : 0.5);
  };
  auto ypix = [&](double v) { return H - B - (H - T - B) * (v - ymin) / (ymax - ymin); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">" << title << "</text>\n";
  // axes
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymin + (ymax - ymin) * t / 4.0;
    const double y = ypix(v);
    o << "<line x1=\"" << L - 4 << "\" y1=\"" << y << "\" x2=\"" << L << "\" y2=\"" << y
      << "\" stroke=\"black\"/>\n";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    o << "<text x=\"" << L - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
    const double xs = n > 1 ? static_cast<double>(n - 1) * t / 4.0 : 0;
    const double x = xpix(xs);
    o << "<line x1=\"" << x << "\" y1=\"" << H - B << "\" x2=\"" << x << "\" y2=\"" << H - B + 4
      << "\" stroke=\"black\"/>\n";
    std::snprintf(buf, sizeof buf, "%.0f", xs);
    o << "<text x=\"" << x << "\" y=\"" << H - B + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << buf << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n";

  double legend_y = T + 6;
  for (const Series& s : series) {
    std::vector<double> xs(s.y.size());
    std::vector<double> raw(s.y.size()), smo_pix(s.y.size());
    const std::vector<double> smoothed = smooth_series(s.y);
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      xs[i] = xpix(static_cast<double>(i));
      raw[i] = ypix(s.y[i]);
      smo_pix[i] = ypix(smoothed[i]);
    }
    o << svg_polyline(xs, raw, s.color, 1.0, 0.30);
    o << svg_polyline(xs, smo_pix, s.color, 2.0, 1.0);
    o << "<text x=\"" << W - R - 6 << "\" y=\"" << legend_y
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << s.color
      << "\">" << s.label << "</text>\n";
    legend_y += 14;
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace detail

// Renders return/entropy/value-std/critic-loss curves (raw + smoothed) as
// self-contained SVG files. Returns the written paths; empty metrics are a
// warning no-op.
inline std::vector<fs::path> emit_plots(const std::vector<StepReport>& reports, const fs::path& dir) {
  if (reports.empty()) {
    std::fprintf(stderr, "emit_plots: no metrics to plot, skipping\n");
    return {};
  }
  fs::create_directories(dir);
  std::vector<fs::path> written;
  auto pull = [&](auto&& get) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const StepReport& r : reports) v.push_back(get(r));
    return v;
  };

  using detail::Series;
  const std::vector<std::string> palette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#8c564b"};
  {
    const fs::path p = dir / "return.svg";
    detail::write_text_file(p, detail::render_chart(
        "mean return per step", {{"mean_return", palette[0],
                                  pull([](const StepReport& r) { return r.mean_return; })}}));
    written.push_back(p);
  }
  {
    const fs::path p = dir / "entropy.svg";
    detail::write_text_file(p, detail::render_chart(
        "policy entropy per step", {{"policy_entropy", palette[1],
                                     pull([](const StepReport& r) { return r.policy_entropy; })}}));
    written.push_back(p);
  }
  {
    std::vector<Series> s = {
        {"sigma_q25", palette[0], pull([](const StepReport& r) { return r.sigma_q25; })},
        {"sigma_q50", palette[1], pull([](const StepReport& r) { return r.sigma_q50; })},
        {"sigma_q75", palette[2], pull([](const StepReport& r) { return r.sigma_q75; })},
        {"sigma_mean", palette[3], pull([](const StepReport& r) { return r.sigma_mean; })}};
    const fs::path p = dir / "sigma.svg";
    detail::write_text_file(p, detail::render_chart("value-std quantiles per step", s));
    written.push_back(p);
  }
  if (!reports.front().critic_loss.empty()) {
    std::vector<Series> s;
    for (std::size_t m = 0; m < reports.front().critic_loss.size(); ++m) {
      s.push_back({"critic_" + std::to_string(m), palette[m % palette.size()],
                   pull([m](const StepReport& r) {
                     return m < r.critic_loss.size() ? r.critic_loss[m] : 0.0;
                   })});
    }
    const fs::path p = dir / "critic_loss.svg";
    detail::write_text_file(p, detail::render_chart("per-critic loss per step", s));
    written.push_back(p);
  }
  return written;
}

// ---------------------------------------------------------------------------
// params dump + manifest

inline nlohmann::ordered_json params_to_json(const ApproximatorParams& p) {
  nlohmann::ordered_json j;
  j["layer_sizes"] = p.layer_sizes;
  j["seed"] = p.seed;
  j["weights"] = p.weights;
  return j;
}

inline ApproximatorParams params_from_json(const nlohmann::json& j) {
  ApproximatorParams p;
  p.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.weights = j.at("weights").get<std::vector<double>>();
  if (p.weights.size() != param_count(p.layer_sizes)) {
    throw IoError("params file: weight count does not match layer layout");
  }
  return p;
}

inline std::string utc_timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One manifest per run directory: config snapshot, seeds, version,
// start/end timestamps (the only fields excluded from determinism
// comparisons), and every artifact path the run produced.
struct RunManifest {
  std::string version = kVersion;
  std::string created_utc;
  std::string finished_utc;
  std::uint64_t seed = 0;
  std::uint64_t dataset_seed = 0;
  std::string config_text;
  std::vector<std::string> artifacts;
};

inline void write_manifest(const RunManifest& m, const fs::path& dir) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["created_utc"] = m.created_utc;
  j["finished_utc"] = m.finished_utc;
  j["seed"] = m.seed;
  j["dataset_seed"] = m.dataset_seed;
  j["config"] = m.config_text;
  j["artifacts"] = m.artifacts;
  detail::write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline RunManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json under " + dir.string());
  nlohmann::json j = nlohmann::json::parse(in);
  RunManifest m;
  m.version = j.at("version").get<std::string>();
  m.created_utc = j.at("created_utc").get<std::string>();
  m.finished_utc = j.value("finished_utc", std::string{});
  m.seed = j.at("seed").get<std::uint64_t>();
  m.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
  m.config_text = j.at("config").get<std::string>();
  m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  return m;
}

// ---------------------------------------------------------------------------
// run orchestration

// Trains under `cfg`, streaming metrics into `out_dir`. Writability is
// checked before any training happens.
inline TrainResult run_training(const TrainConfig& cfg, const fs::path& out_dir,
                                const StepCallback& on_step = {}) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create run directory " + out_dir.string() + ": " + ec.message());
  RunManifest manifest;
  manifest.created_utc = utc_timestamp();
  manifest.seed = cfg.seed;
  manifest.dataset_seed = cfg.dataset_seed;
  manifest.config_text = serialize_config(cfg);
  manifest.artifacts = {"config.txt", "metrics.jsonl", "metrics.csv", "params.json"};

  detail::write_text_file(out_dir / "config.txt", manifest.config_text);
  MetricsWriter writer(out_dir);  // preflight: throws IoError if unwritable
  write_manifest(manifest, out_dir);

  TrainResult result = train(cfg, [&](const StepReport& r) {
    writer.append(r);
    if (on_step) on_step(r);
  });

  nlohmann::ordered_json pj;
  pj["actor"] = params_to_json(result.actor);
  if (result.critics) {
    pj["critics"] = nlohmann::ordered_json::array();
    for (const ApproximatorParams& c : result.critics->critics) {
      pj["critics"].push_back(params_to_json(c));
    }
  }
  detail::write_text_file(out_dir / "params.json", pj.dump() + "\n");

  manifest.finished_utc = utc_timestamp();
  write_manifest(manifest, out_dir);
  return result;
}

inline ApproximatorParams load_actor_params(const fs::path& run_dir) {
  std::ifstream in(run_dir / "params.json");
  if (!in) throw IoError("no params.json under " + run_dir.string());
  nlohmann::json j = nlohmann::json::parse(in);
  return params_from_json(j.at("actor"));
}

// ---------------------------------------------------------------------------
// ablation sweeps

struct AblationCell {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
  TrainConfig config;
  double final_train_return = 0.0;  // mean of the last 10% of steps
  double eval_return = 0.0;         // sampled post-training evaluation
  std::string run_dir;
};

using AblationGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

namespace detail {

inline std::string sanitize_label(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '=' && c != '.' && c != '-' && c != '_') {
      c = '_';
    }
  }
  return s;
}

inline double tail_mean_return(const std::vector<StepReport>& reports) {
  if (reports.empty()) return 0.0;
  const std::size_t tail = std::max<std::size_t>(1, reports.size() / 10);
  double acc = 0.0;
  for (std::size_t i = reports.size() - tail; i < reports.size(); ++i) {
    acc += reports[i].mean_return;
  }
  return acc / static_cast<double>(tail);
}

}  // namespace detail

// One train() per grid cell (cartesian product, aligned seeds unless the grid
// sweeps the seed itself). Each cell gets its own run directory; a summary
// CSV lands at out_dir/ablation_summary.csv.
inline std::vector<AblationCell> run_ablation(const TrainConfig& base, const AblationGrid& grid,
                                              const fs::path& out_dir) {
  if (grid.empty()) throw ConfigError("run_ablation: empty grid");
  for (const auto& [key, values] : grid) {
    if (values.empty()) throw ConfigError("run_ablation: no values for grid key \"" + key + "\"");
  }
  fs::create_directories(out_dir);

  std::vector<AblationCell> cells;
  std::vector<std::size_t> cursor(grid.size(), 0);
  while (true) {
    AblationCell cell;
    cell.config = base;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const std::string key = resolve_config_key(grid[i].first);
      const std::string& value = grid[i].second[cursor[i]];
      apply_config_key(cell.config, key, value);
      cell.overrides.emplace_back(grid[i].first, value);
      if (!cell.label.empty()) cell.label += "_";
      cell.label += grid[i].first + "=" + value;
    }
    cell.label = detail::sanitize_label(cell.label);
    cell.config.validate();
    cells.push_back(std::move(cell));
    // advance the cartesian counter
    std::size_t i = 0;
    for (; i < grid.size(); ++i) {
      if (++cursor[i] < grid[i].second.size()) break;
      cursor[i] = 0;
    }
    if (i == grid.size()) break;
  }

  for (AblationCell& cell : cells) {
    const fs::path dir = out_dir / ("cell_" + cell.label);
    TrainResult res = run_training(cell.config, dir);
    cell.run_dir = dir.string();
    cell.final_train_return = detail::tail_mean_return(res.reports);
    const Environment env = cell.config.make_env();
    const auto prompts = env.sample_prompts(cell.config.dataset_seed, cell.config.dataset_size);
    cell.eval_return = evaluate_policy(env, res.actor, prompts, cell.config.eval_episodes,
                                       seed_stream(cell.config.seed, 0x6162656cULL),  // tag: "abel"
                                       EvalMode::sampled)
                           .mean_return;
  }

  std::ostringstream csv;
  csv << "cell,final_train_return,eval_return,run_dir\n";
  for (const AblationCell& c : cells) {
    csv << c.label << "," << fmt_double(c.final_train_return) << "," << fmt_double(c.eval_return)
        << "," << c.run_dir << "\n";
  }
  detail::write_text_file(out_dir / "ablation_summary.csv", csv.str());
  return cells;
}

}  // namespace asyppo
