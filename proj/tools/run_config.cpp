#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "stden/error.hpp"

namespace stden::app {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> table{
      {"command", ""},
      {"graph", ""},
      {"flows", ""},
      {"checkpoint", ""},
      {"out", ""},
      {"model", "stden"},
      {"seed", "0"},
      {"split", "test"},
      {"window_start", ""},
      // synthetic data
      {"nodes", "50"},
      {"out_degree", "3"},
      {"steps", "4032"},
      {"alpha", "0.2"},
      {"phi_min", "0.5"},
      {"phi_max", "2"},
      {"mode", "tanh"},
      {"smoothness", "3"},
      {"noise", "0.05"},
      {"interval_minutes", "5"},
      {"time_per_step", "0.083333333333333329"},
      {"excite_period", "288"},
      // model
      {"history_len", "12"},
      {"horizon", "12"},
      {"latent_dim", "2"},
      {"gru_hidden", "32"},
      {"dynamics", "tanh"},
      {"weighting", "unweighted"},
      {"train_substeps", "4"},
      {"rtol", "1e-3"},
      {"atol", "1e-4"},
      {"max_nfe", "10000"},
      // training
      {"learning_rate", "1e-3"},
      {"batch_size", "16"},
      {"max_epochs", "200"},
      {"patience", "10"},
      {"grad_clip_norm", "5"},
      {"kl_weight", "0"},
      {"obs_sigma", "1"},
      {"eval_batch_size", "64"},
      // nfe-study
      {"rtol_list", "1e-2,1e-3,1e-4"},
      {"atol_ratio", "0.1"},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, v] : defaults()) out.push_back(k);
    return out;
  }();
  return names;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  merge_text(in, path.string());
}

void RunConfig::merge_text(std::istream& in, const std::string& origin) {
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value");
    }
    set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second = value;
}

bool RunConfig::has(const std::string& key) const { return !get(key).empty(); }

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

const std::string& RunConfig::require(const std::string& key) const {
  const std::string& v = get(key);
  if (v.empty()) throw ConfigError("config: missing required key '" + key + "'");
  return v;
}

double RunConfig::number(const std::string& key) const {
  const std::string& text = require(key);
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ConfigError("config: '" + key + "' is not a number: " + text);
  }
  return v;
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& text = require(key);
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw ConfigError("config: '" + key + "' is not a non-negative integer: " + text);
  }
  return v;
}

std::uint64_t RunConfig::seed() const { return count("seed"); }

std::optional<std::size_t> RunConfig::optional_count(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return count(key);
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc{} || end != item.data() + item.size()) {
      throw ConfigError("bad entry '" + item + "' in " + what);
    }
    out.push_back(v);
  }
  return out;
}

std::vector<double> RunConfig::number_list(const std::string& key) const {
  return parse_numbers(require(key), "config key " + key);
}

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.nodes = count("nodes");
  c.out_degree = number("out_degree");
  c.seed = seed();
  c.steps = count("steps");
  c.alpha = number("alpha");
  c.phi_min = number("phi_min");
  c.phi_max = number("phi_max");
  try {
    c.mode = parse_mode(get("mode"));
  } catch (const Error& e) {
    throw ConfigError(std::string("config: mode: ") + e.what());
  }
  c.smoothness = number("smoothness");
  c.noise = number("noise");
  c.interval_minutes = number("interval_minutes");
  c.time_per_step = number("time_per_step");
  c.excite_period = count("excite_period");
  c.validate();
  return c;
}

SolverConfig RunConfig::solver() const {
  SolverConfig s = SolverConfig::dopri5(number("rtol"), number("atol"));
  s.max_nfe = static_cast<long>(count("max_nfe"));
  s.validate();
  return s;
}

ModelConfig RunConfig::model() const {
  ModelConfig c;
  try {
    const std::string& name = get("model");
    if (name == "ha") throw ConfigError("model 'ha' has no trainable network");
    c.kind = parse_kind(name == "gru" ? "gru_direct" : name);
    c.dynamics = parse_mode(get("dynamics"));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.history_len = count("history_len");
  c.horizon = count("horizon");
  c.latent_channels = count("latent_dim");
  c.gru_hidden = count("gru_hidden");
  const std::string& w = get("weighting");
  if (w == "unweighted") {
    c.weighting = Weighting::unweighted;
  } else if (w == "weighted") {
    c.weighting = Weighting::weighted;
  } else {
    throw ConfigError("config: weighting must be weighted or unweighted, got " + w);
  }
  c.train_solver = SolverConfig::rk4(static_cast<int>(count("train_substeps")));
  c.train_solver.max_nfe = static_cast<long>(count("max_nfe"));
  c.solver = solver();
  c.validate();
  return c;
}

TrainConfig RunConfig::training() const {
  TrainConfig c;
  c.learning_rate = number("learning_rate");
  c.batch_size = count("batch_size");
  c.max_epochs = count("max_epochs");
  c.patience = count("patience");
  c.grad_clip_norm = number("grad_clip_norm");
  c.kl_weight = number("kl_weight");
  c.obs_sigma = number("obs_sigma");
  c.eval_batch_size = count("eval_batch_size");
  c.seeds = {seed()};
  c.validate();
  return c;
}

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
}

}  // namespace stden::app
