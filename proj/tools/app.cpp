#include "app.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "run_config.hpp"
#include "stden/checkpoint.hpp"
#include "stden/error.hpp"

namespace stden::app {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return in;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

fs::path output_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.require("out");
  fs::create_directories(dir);
  return dir;
}

void write_resolved(const RunConfig& cfg, const fs::path& dir) {
  std::ofstream out = open_out(dir / "config.txt");
  cfg.write(out);
}

RoadNetwork read_graph(const RunConfig& cfg) {
  std::ifstream in = open_in(cfg.require("graph"));
  return load_network(in);
}

FlowSeries read_flows(const RunConfig& cfg, const RoadNetwork& net) {
  std::ifstream in = open_in(cfg.require("flows"));
  FlowSeries s = load_flow_csv(in, net.edge_count());
  s.interval_minutes = cfg.number("interval_minutes");
  return s;
}

Checkpoint read_checkpoint(const RunConfig& cfg, const RoadNetwork& net) {
  Checkpoint ckpt = load_checkpoint(fs::path(cfg.require("checkpoint")));
  if (ckpt.model.edge_count() != net.edge_count() || ckpt.model.node_count() != net.node_count()) {
    throw ValidationError("checkpoint expects " + std::to_string(ckpt.model.node_count()) +
                          " nodes and " + std::to_string(ckpt.model.edge_count()) +
                          " edges, graph has " + std::to_string(net.node_count()) + " and " +
                          std::to_string(net.edge_count()));
  }
  return ckpt;
}

Dataset checkpoint_dataset(const Checkpoint& ckpt, FlowSeries flows) {
  Dataset data = window_and_split(std::move(flows), ckpt.model.config().history_len,
                                  ckpt.model.config().horizon);
  data.set_normalizer(ckpt.normalizer);
  return data;
}

/// First row of the history window: `window_start`, or the last T rows.
std::size_t window_start(const RunConfig& cfg, const FlowSeries& flows, std::size_t T) {
  if (flows.steps() < T) {
    throw ValidationError("flows have " + std::to_string(flows.steps()) + " rows, need " +
                          std::to_string(T));
  }
  const std::size_t s = cfg.optional_count("window_start").value_or(flows.steps() - T);
  if (s + T > flows.steps()) throw ConfigError("config: window_start leaves fewer than T rows");
  return s;
}

Tensor normalized_window(const FlowSeries& flows, std::size_t start, std::size_t T,
                         const Normalizer& norm) {
  Tensor h({T, flows.edges()});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t e = 0; e < flows.edges(); ++e) {
      h.at(t, e) = norm.normalize(flows.values.at(start + t, e));
    }
  }
  return h;
}

/// CSV with a leading row-index column starting at `first_row`.
void write_rows(std::ostream& out, const Tensor& values, char prefix, std::size_t first_row) {
  out << 't';
  for (std::size_t c = 0; c < values.cols(); ++c) out << ',' << prefix << c;
  out << '\n';
  for (std::size_t r = 0; r < values.rows(); ++r) {
    out << first_row + r;
    for (std::size_t c = 0; c < values.cols(); ++c) out << ',' << num(values.at(r, c));
    out << '\n';
  }
}

std::vector<std::size_t> report_horizons(std::size_t H) {
  std::vector<std::size_t> out;
  for (std::size_t h : {3, 6, 12}) {
    if (h <= H) out.push_back(h);
  }
  if (out.empty()) out.push_back(H);
  return out;
}

void gen_graph(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = output_dir(cfg);
  const RoadNetwork net = random_network(cfg.synth());
  std::ofstream out = open_out(dir / "graph.txt");
  save_network(out, net);
  write_resolved(cfg, dir);
  log << "nodes=" << net.node_count() << " edges=" << net.edge_count() << '\n';
}

void simulate_cmd(const RunConfig& cfg, std::ostream& log) {
  const RoadNetwork net = read_graph(cfg);
  const SynthConfig synth = cfg.synth();
  const fs::path dir = output_dir(cfg);
  const Simulation sim = simulate(net, synth);
  {
    std::ofstream out = open_out(dir / "flows.csv");
    save_flow_csv(out, sim.flows);
  }
  {
    std::ofstream out = open_out(dir / "pef.csv");
    save_series_csv(out, sim.potentials, 'v');
  }
  {
    std::ofstream out = open_out(dir / "physics.txt");
    out << "alpha=" << num(sim.alpha) << "\nphi=";
    for (std::size_t i = 0; i < sim.phi.size(); ++i) out << (i ? "," : "") << num(sim.phi[i]);
    out << '\n';
  }
  write_resolved(cfg, dir);
  log << "steps=" << sim.flows.steps() << " edges=" << sim.flows.edges() << '\n';
}

void verify_conservation(const RunConfig& cfg, std::ostream& log) {
  const fs::path source = fs::path(cfg.require("flows")).parent_path();
  std::ifstream pef = open_in((source / "pef.csv").string());
  const Tensor potentials = load_series_csv(pef, 'v');

  std::vector<double> phi;
  {
    std::ifstream in = open_in((source / "physics.txt").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("phi=", 0) == 0) phi = parse_numbers(line.substr(4), "physics.txt");
    }
  }
  if (phi.empty()) throw ParseError("physics.txt: no phi line");
  const double drift = conservation_drift(potentials, phi);

  const fs::path dir = output_dir(cfg);
  std::ofstream out = open_out(dir / "conservation.txt");
  out << "max_drift=" << num(drift) << '\n';
  write_resolved(cfg, dir);
  log << "max_drift=" << num(drift) << '\n';
}

void train_cmd(const RunConfig& cfg, std::ostream& log) {
  const ModelConfig mc = cfg.model();
  const TrainConfig tc = cfg.training();
  const RoadNetwork net = read_graph(cfg);
  const Dataset data = window_and_split(read_flows(cfg, net), mc.history_len, mc.horizon);
  const fs::path dir = output_dir(cfg);
  const std::uint64_t seed = cfg.seed();

  const TrainResult result =
      train(Model(mc, net.node_count(), net.edge_count(), seed), net, data, tc, seed,
            [&](const EpochRecord& r) {
              log << "epoch=" << r.epoch << " train_loss=" << num(r.train_loss)
                  << " val_mae=" << num(r.val_mae) << " nfe=" << num(r.nfe) << std::endl;
            });
  save_checkpoint(dir / "model.ckpt", Checkpoint{result.model, data.normalizer(), seed});
  {
    std::ofstream out = open_out(dir / "history.csv");
    write_history_csv(out, result.history);
  }
  write_resolved(cfg, dir);
  log << "best_epoch=" << result.best_epoch << " best_val_mae=" << num(result.best_val_mae) << '\n';
}

void evaluate_cmd(const RunConfig& cfg, std::ostream& log) {
  const RoadNetwork net = read_graph(cfg);
  const Split split = parse_split(cfg.get("split"));
  std::vector<MetricsRecord> records;
  if (cfg.get("model") == "ha") {
    const std::size_t H = cfg.count("horizon");
    const Dataset data = window_and_split(read_flows(cfg, net), cfg.count("history_len"), H);
    HistoricalAverage ha(data);
    records = evaluate(ha, data, split, report_horizons(H), "ha", std::nullopt,
                       cfg.count("eval_batch_size"));
  } else {
    const Checkpoint ckpt = read_checkpoint(cfg, net);
    const Dataset data = checkpoint_dataset(ckpt, read_flows(cfg, net));
    ModelForecaster f(ckpt.model, net, cfg.solver());
    std::string name(kind_name(ckpt.model.config().kind));
    records = evaluate(f, data, split, report_horizons(data.horizon()), name, ckpt.seed,
                       cfg.count("eval_batch_size"));
  }
  const fs::path dir = output_dir(cfg);
  std::ofstream out = open_out(dir / "metrics.txt");
  write_records(out, records);
  write_records(log, records);
  write_resolved(cfg, dir);
}

void predict_cmd(const RunConfig& cfg, std::ostream& log) {
  const RoadNetwork net = read_graph(cfg);
  const Checkpoint ckpt = read_checkpoint(cfg, net);
  const FlowSeries flows = read_flows(cfg, net);
  const std::size_t T = ckpt.model.config().history_len;
  const std::size_t H = ckpt.model.config().horizon;
  const std::size_t start = window_start(cfg, flows, T);
  const std::size_t m = net.edge_count();

  long nfe = 0;
  const Tensor p = ckpt.model.predict(net, normalized_window(flows, start, T, ckpt.normalizer), 1,
                                      cfg.solver(), &nfe);
  Tensor rows({H, m});
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t e = 0; e < m; ++e) rows.at(h, e) = ckpt.normalizer.denormalize(p.at(0, h * m + e));
  }
  const fs::path dir = output_dir(cfg);
  std::ofstream out = open_out(dir / "predictions.csv");
  write_rows(out, rows, 'e', start + T);
  write_resolved(cfg, dir);
  log << "window_start=" << start << " horizon=" << H << " nfe=" << nfe << '\n';
}

void nfe_study(const RunConfig& cfg, std::ostream& log) {
  const RoadNetwork net = read_graph(cfg);
  const Checkpoint ckpt = read_checkpoint(cfg, net);
  const Dataset data = checkpoint_dataset(ckpt, read_flows(cfg, net));
  const Split split = parse_split(cfg.get("split"));
  const std::vector<double> rtols = cfg.number_list("rtol_list");
  const double ratio = cfg.number("atol_ratio");
  const fs::path dir = output_dir(cfg);

  std::ofstream out = open_out(dir / "nfe.csv");
  out << "rtol,mean_nfe," << split_name(split) << "_mae\n";
  for (double rtol : rtols) {
    SolverConfig solver = SolverConfig::dopri5(rtol, rtol * ratio);
    solver.max_nfe = static_cast<long>(cfg.count("max_nfe"));
    solver.validate();
    ModelForecaster f(ckpt.model, net, solver);
    const double mae = split_mae(f, data, split, cfg.count("eval_batch_size"));
    out << num(rtol) << ',' << num(f.mean_nfe()) << ',' << num(mae) << '\n';
    log << "rtol=" << num(rtol) << " mean_nfe=" << num(f.mean_nfe()) << " mae=" << num(mae) << '\n';
  }
  write_resolved(cfg, dir);
}

void inspect_pef(const RunConfig& cfg, std::ostream& log) {
  const RoadNetwork net = read_graph(cfg);
  const Checkpoint ckpt = read_checkpoint(cfg, net);
  const ModelConfig& mc = ckpt.model.config();
  if (mc.kind == ModelKind::gru_direct) throw ValidationError("inspect-pef: gru has no potential field");
  const FlowSeries flows = read_flows(cfg, net);
  const std::size_t T = mc.history_len;
  const std::size_t H = mc.horizon;
  const std::size_t n = net.node_count();
  const std::size_t m = net.edge_count();
  const std::size_t d = mc.latent_channels;
  const std::size_t start = window_start(cfg, flows, T);
  const SolverConfig solver = cfg.solver();
  const Tensor hist = normalized_window(flows, start, T, ckpt.normalizer);

  const Tensor z = ckpt.model.potentials(net, hist, solver);
  const Tensor p = ckpt.model.predict(net, hist, 1, solver);
  const Tensor& w = ckpt.model.params().value("dec.w");
  const double b = ckpt.model.params().value("dec.b")[0];
  const double scale = ckpt.normalizer.std;
  // Potentials in flow units: flow = offset - sum_c (p_src,c - p_dst,c).
  const double offset = scale * b + ckpt.normalizer.mean;

  const fs::path dir = output_dir(cfg);
  {
    std::ofstream out = open_out(dir / "potentials.csv");
    out << "t,node";
    for (std::size_t c = 0; c < d; ++c) out << ",z" << c;
    out << '\n';
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        out << start + T + h << ',' << i;
        for (std::size_t c = 0; c < d; ++c) out << ',' << num(scale * w[c] * z.at(h, c * n + i));
        out << '\n';
      }
    }
  }
  {
    std::ofstream out = open_out(dir / "flows.csv");
    out << "t,edge,src,dst,flow\n";
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t e = 0; e < m; ++e) {
        const Edge& edge = net.edge(e);
        out << start + T + h << ',' << e << ',' << edge.src << ',' << edge.dst << ','
            << num(ckpt.normalizer.denormalize(p.at(0, h * m + e))) << '\n';
      }
    }
  }
  {
    std::ofstream out = open_out(dir / "inspect.txt");
    out << "offset=" << num(offset) << "\nwindow_start=" << start << '\n';
  }
  write_resolved(cfg, dir);
  log << "window_start=" << start << " offset=" << num(offset) << '\n';
}

using Command = void (*)(const RunConfig&, std::ostream&);

struct CommandInfo {
  const char* name;
  const char* help;
  Command fn;
};

constexpr CommandInfo kCommands[] = {
    {"gen-graph", "Generate a random connected road network", gen_graph},
    {"simulate", "Simulate flows on a graph; writes flows, ground-truth potentials and physics",
     simulate_cmd},
    {"verify-conservation", "Report the drift of sum z/phi in a simulation's potentials",
     verify_conservation},
    {"train", "Train a model; writes a checkpoint and the epoch history", train_cmd},
    {"evaluate", "Write MAE/RMSE/MAPE records at horizons 3, 6 and 12", evaluate_cmd},
    {"predict", "Forecast H steps from one history window", predict_cmd},
    {"nfe-study", "Sweep the dopri5 rtol and record NFE against MAE", nfe_study},
    {"inspect-pef", "Export potentials and decoded flows for one window", inspect_pef},
};

// Flag -> config key.
const std::pair<const char*, const char*> kFlags[] = {
    {"--graph", "graph"},           {"--flows", "flows"},
    {"--checkpoint", "checkpoint"}, {"--out", "out"},
    {"--model", "model"},           {"--seed", "seed"},
    {"--horizon", "horizon"},       {"--rtol-list", "rtol_list"},
    {"--mode", "mode"},             {"--noise", "noise"},
    {"--latent-dim", "latent_dim"}, {"--gru-hidden", "gru_hidden"},
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Traffic flow forecasting with a learned potential field", "stden"};
  cli.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::App*> subs;
  for (const CommandInfo& c : kCommands) {
    CLI::App* sub = cli.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--set", sets, "Override any config key (KEY=VALUE)");
    for (const auto& [flag, key] : kFlags) sub->add_option(flag, flag_values[key]);
    subs[c.name] = sub;
  }

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    cli.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return cli.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  const CommandInfo* chosen = nullptr;
  for (const CommandInfo& c : kCommands) {
    if (subs[c.name]->parsed()) chosen = &c;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.merge_file(config_path);
    for (const std::string& s : sets) {
      std::istringstream line(s);
      cfg.merge_text(line, "--set");
    }
    for (const auto& [flag, key] : kFlags) {
      if (subs[chosen->name]->count(flag) == 0) continue;
      cfg.set(key, flag_values[key]);
      // --mode drives both the generator and the model dynamics.
      if (std::string(key) == "mode") cfg.set("dynamics", flag_values[key]);
    }
    cfg.set("command", chosen->name);
    chosen->fn(cfg, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace stden::app
