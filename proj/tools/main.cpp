// flowcast: hour-conditioned, incident-aware traffic forecasting pipeline.
//
// Subcommands: build-graphs, train, calibrate, predict, evaluate, delta,
// route-mc. Every run writes a manifest (config echo + input hashes + seeds)
// sufficient to reproduce its outputs byte for byte.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowcast/adjacency.hpp"
#include "flowcast/csv.hpp"
#include "flowcast/data.hpp"
#include "flowcast/evaluation.hpp"
#include "flowcast/hash.hpp"
#include "flowcast/incident.hpp"
#include "flowcast/model.hpp"
#include "flowcast/rng.hpp"
#include "flowcast/run_config.hpp"
#include "flowcast/svg_plot.hpp"
#include "flowcast/training.hpp"
#include "flowcast/travel_time.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace flowcast;

namespace {

// Exit classes: 0 ok, 2 config, 3 data, 4 runtime.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

// Component seed streams derived from the root seed.
enum SeedStream : std::uint64_t {
  kSeedData = 1001,
  kSeedBank = 1002,
  kSeedModel = 1003,
  kSeedTrain = 1004,
  kSeedRouteMc = 1005,
};

std::uint64_t component_seed(std::uint64_t root, SeedStream stream) {
  return rng::stream_seed(root, {static_cast<std::uint64_t>(stream)});
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "run configuration file");
    auto* s = app->add_option("--seed", "root seed (overrides config)");
    s->check(CLI::NonNegativeNumber);
    s->each([this](const std::string& v) {
      seed = static_cast<std::uint64_t>(std::stoull(v));
    });
    app->add_option_function<std::string>(
        "--out", [this](const std::string& v) { out = v; },
        "output directory (overrides config and FLOWCAST_OUT)");
  }

  RunConfig resolve() const {
    RunConfig cfg = RunConfig::from_file(config_path);
    if (const char* env = std::getenv("FLOWCAST_OUT")) cfg.out_dir = env;
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    cfg.validate();
    return cfg;
  }
};

struct Inputs {
  StationNetwork net;
  FlowSeries flows;
  CrashTable crashes;
  bool has_crashes = false;
  // name -> content hash for the manifest
  std::map<std::string, std::string> hashes;
};

Inputs load_inputs(const RunConfig& cfg, bool need_crashes) {
  Inputs in;
  if (cfg.synthetic) {
    auto data = generate_synthetic(cfg.synth, component_seed(cfg.seed, kSeedData));
    in.net = std::move(data.net);
    in.flows = std::move(data.flows);
    in.crashes = std::move(data.crashes);
    in.has_crashes = !in.crashes.records.empty();
    in.hashes["synthetic_seed"] =
        std::to_string(component_seed(cfg.seed, kSeedData));
  } else {
    in.net = load_stations(cfg.stations_csv);
    in.flows = load_counts(cfg.counts_csv, in.net);
    in.hashes[cfg.stations_csv] = hash_file(cfg.stations_csv);
    in.hashes[cfg.counts_csv] = hash_file(cfg.counts_csv);
    if (!cfg.crashes_csv.empty()) {
      in.crashes = load_crashes(cfg.crashes_csv);
      in.has_crashes = true;
      in.hashes[cfg.crashes_csv] = hash_file(cfg.crashes_csv);
      if (in.crashes.dropped_rows > 0)
        std::cerr << "warning: dropped " << in.crashes.dropped_rows
                  << " crash row(s) with nonpositive clearance\n";
    }
  }
  if (need_crashes && !in.has_crashes)
    throw ValidationError(
        "crash data required: provide crashes_csv or use --no-crash");
  return in;
}

void write_manifest(const std::string& dir, const std::string& command,
                    const RunConfig& cfg,
                    const std::map<std::string, std::string>& input_hashes,
                    const std::vector<std::string>& outputs,
                    const std::vector<std::string>& warnings = {}) {
  json m;
  m["command"] = command;
  m["seed"] = cfg.seed;
  m["seeds"] = {{"data", component_seed(cfg.seed, kSeedData)},
                {"bank", component_seed(cfg.seed, kSeedBank)},
                {"model", component_seed(cfg.seed, kSeedModel)},
                {"train", component_seed(cfg.seed, kSeedTrain)},
                {"route_mc", component_seed(cfg.seed, kSeedRouteMc)}};
  m["config"] = cfg.echo();
  m["input_hashes"] = input_hashes;
  m["outputs"] = outputs;
  if (!warnings.empty()) m["warnings"] = warnings;
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw ValidationError(dir + "/manifest.json: cannot write");
  out << m.dump(2) << "\n";
}

// Fingerprint of an adjacency directory (the files a model trains against).
std::string adjacency_fingerprint(const std::string& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<std::string> names{"rho.csv"};
  for (int hh = 0; hh < 24; ++hh) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "a_adaptive_h%02d.csv", hh);
    names.push_back(buf);
  }
  for (const auto& name : names) {
    const std::string file_hash = hash_file(dir + "/" + name);
    h = fnv1a64(file_hash.data(), file_hash.size(), h);
  }
  char out[24];
  std::snprintf(out, sizeof(out), "fnv1a:%016llx",
                static_cast<unsigned long long>(h));
  return out;
}

struct GraphDir {
  StationNetwork net;
  FlowSeries flows;
  AdjacencyBank adjacency;
  CvProfile profile;
  TravelTimeBank bank;
  std::string fingerprint;
};

GraphDir load_graph_dir(const std::string& dir) {
  GraphDir g;
  g.net = load_stations(dir + "/stations.csv");
  g.flows = load_counts(dir + "/counts.csv", g.net);
  g.adjacency = load_adjacency(dir + "/adjacency", g.net);
  g.bank = load_bank(dir + "/bank", g.net, &g.profile);
  g.fingerprint = adjacency_fingerprint(dir + "/adjacency");
  return g;
}

RiskField build_risk(const Inputs& in, bool no_crash,
                     const std::string& severity_csv) {
  if (no_crash || !in.has_crashes) return zero_risk(in.net.size());
  const SeverityTable severity = severity_factors(in.crashes, in.net);
  if (!severity_csv.empty())
    export_severity_csv(severity, in.net, severity_csv);
  return node_risk(severity, in.net.size());
}

int cmd_build_graphs(const CommonFlags& common, bool no_crash,
                     bool with_severity) {
  RunConfig cfg = common.resolve();
  Inputs in = load_inputs(cfg, /*need_crashes=*/!no_crash);
  fs::create_directories(cfg.out_dir);

  std::vector<std::string> warnings;
  const CvProfile profile = estimate_cv_profile(in.flows, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  const Matrix t_mean =
      baseline_travel_times(in.net, cfg.speed_mph, cfg.tmean_override);
  const TravelTimeBank bank = sample_bank(
      t_mean, profile, component_seed(cfg.seed, kSeedBank), cfg.samples_per_edge);

  const std::string severity_path =
      with_severity ? cfg.out_dir + "/severity.csv" : "";
  const RiskField risk = build_risk(in, no_crash, severity_path);
  const AdjacencyBank adjacency =
      build_adjacency(bank, risk, in.net, cfg.adjacency, no_crash);

  // Inputs are echoed beside the bank so downstream stages are
  // self-contained, synthetic or not.
  save_stations(in.net, cfg.out_dir + "/stations.csv");
  save_counts(in.flows, in.net, cfg.out_dir + "/counts.csv");
  std::vector<std::string> outputs{"stations.csv", "counts.csv", "bank/",
                                   "adjacency/"};
  if (in.has_crashes && !no_crash) {
    save_crashes(in.crashes, cfg.out_dir + "/crashes.csv");
    outputs.push_back("crashes.csv");
  }
  if (with_severity) outputs.push_back("severity.csv");
  export_bank(bank, profile, in.net, cfg.out_dir + "/bank");
  export_adjacency(adjacency, in.net, cfg.out_dir + "/adjacency");

  write_manifest(cfg.out_dir, "build-graphs", cfg, in.hashes, outputs);
  std::cout << "graphs written to " << cfg.out_dir << "\n";
  return 0;
}

json model_meta_json(const RunConfig& cfg, const WindowDataset& ds,
                     std::size_t n_stations, const std::string& fingerprint,
                     int best_epoch) {
  json meta;
  meta["window"] = cfg.model.window_len;
  meta["horizon"] = cfg.model.horizon;
  meta["patch"] = cfg.model.patch_len;
  meta["embed_dim"] = cfg.model.embed_dim;
  meta["heads"] = cfg.model.heads;
  meta["temporal_depth"] = cfg.model.temporal_depth;
  meta["spatial_depth"] = cfg.model.spatial_depth;
  meta["ffn_mult"] = cfg.model.ffn_mult;
  meta["dropout"] = cfg.model.dropout;
  meta["ablation"] = ablation_name(cfg.model.ablation);
  meta["n_stations"] = n_stations;
  meta["alpha"] = cfg.training.alpha;
  meta["cp_mode"] = cfg.training.acp ? "acp" : "split";
  meta["train_frac"] = cfg.splits.train_frac;
  meta["cal_frac"] = cfg.splits.cal_frac;
  meta["norm_mean"] = ds.norm.mean;
  meta["norm_std"] = ds.norm.std;
  meta["bank_fingerprint"] = fingerprint;
  meta["best_epoch"] = best_epoch;
  meta["seed"] = cfg.seed;
  return meta;
}

struct LoadedModel {
  ModelConfig config;
  double alpha = 0.1;
  SplitSpec splits;
  std::string fingerprint;
};

LoadedModel read_model_meta(const std::string& dir) {
  std::ifstream in(dir + "/model_meta.json");
  if (!in)
    throw ValidationError(dir +
                          "/model_meta.json: cannot open (run `train` first)");
  json meta = json::parse(in);
  LoadedModel m;
  m.config.window_len = meta.at("window").get<std::size_t>();
  m.config.horizon = meta.at("horizon").get<std::size_t>();
  m.config.patch_len = meta.at("patch").get<std::size_t>();
  m.config.embed_dim = meta.at("embed_dim").get<std::size_t>();
  m.config.heads = meta.at("heads").get<std::size_t>();
  m.config.temporal_depth = meta.at("temporal_depth").get<std::size_t>();
  m.config.spatial_depth = meta.at("spatial_depth").get<std::size_t>();
  m.config.ffn_mult = meta.at("ffn_mult").get<std::size_t>();
  m.config.dropout = meta.at("dropout").get<double>();
  m.config.ablation = ablation_from_name(meta.at("ablation").get<std::string>());
  m.alpha = meta.at("alpha").get<double>();
  m.splits.train_frac = meta.at("train_frac").get<double>();
  m.splits.cal_frac = meta.at("cal_frac").get<double>();
  m.fingerprint = meta.at("bank_fingerprint").get<std::string>();
  return m;
}

int cmd_train(const CommonFlags& common, const std::string& graphs_dir,
              const std::optional<std::string>& ablation,
              const std::optional<std::string>& cp_mode,
              const std::optional<double>& alpha) {
  RunConfig cfg = common.resolve();
  if (ablation) cfg.model.ablation = ablation_from_name(*ablation);
  if (cp_mode) {
    if (*cp_mode != "acp" && *cp_mode != "split")
      throw ConfigError("--cp-mode must be acp or split");
    cfg.training.acp = *cp_mode == "acp";
  }
  if (alpha) cfg.training.alpha = *alpha;
  cfg.validate();

  GraphDir g = load_graph_dir(graphs_dir);
  WindowDataset ds =
      make_windows(g.flows, cfg.model.window_len, cfg.model.horizon, cfg.splits);
  if (ds.train.empty() || ds.cal.empty() || ds.test.empty())
    throw ValidationError("train: a split has no complete windows; lengthen "
                          "the series or adjust the split fractions");

  ModelState state(cfg.model, g.net.size(), component_seed(cfg.seed, kSeedModel));
  TrainOptions opts = cfg.training;
  opts.seed = component_seed(cfg.seed, kSeedTrain);
  const TrainResult result = train(state, ds, g.adjacency, opts);

  fs::create_directories(cfg.out_dir);
  state.save(cfg.out_dir + "/model.ckpt");
  save_radii(result.radii, g.net, cfg.out_dir + "/radii.csv");
  {
    std::ofstream meta(cfg.out_dir + "/model_meta.json");
    meta << model_meta_json(cfg, ds, g.net.size(), g.fingerprint,
                            result.best_epoch)
                .dump(2)
         << "\n";
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t e = 0; e < result.history.size(); ++e)
      rows.push_back({std::to_string(e),
                      format_double(result.history[e].train_mse),
                      format_double(result.history[e].val_mse),
                      format_double(result.history[e].mean_radius)});
    write_csv(cfg.out_dir + "/history.csv",
              {"epoch", "train_mse", "val_mse", "mean_radius"}, rows);
  }
  std::map<std::string, std::string> hashes{
      {graphs_dir + "/adjacency", g.fingerprint}};
  write_manifest(cfg.out_dir, "train", cfg, hashes,
                 {"model.ckpt", "model_meta.json", "radii.csv", "history.csv"});

  if (result.radii.coverage_warning)
    std::cerr << "warning: calibration split too small for nominal coverage; "
                 "radii fall back to the max residual\n";
  std::cout << "trained " << ablation_name(cfg.model.ablation) << " for "
            << result.history.size() << " epoch(s), best epoch "
            << result.best_epoch << ", checkpoint in " << cfg.out_dir << "\n";
  return 0;
}

// Shared reload for calibrate/predict/evaluate.
struct Session {
  GraphDir graphs;
  LoadedModel meta;
  WindowDataset ds;
  std::unique_ptr<ModelState> state;
};

Session open_session(const std::string& graphs_dir,
                     const std::string& model_dir) {
  Session s;
  s.graphs = load_graph_dir(graphs_dir);
  s.meta = read_model_meta(model_dir);
  if (s.meta.fingerprint != s.graphs.fingerprint)
    throw ValidationError(
        "adjacency fingerprint mismatch: the model in " + model_dir +
        " was trained against a different graph directory (rerun "
        "build-graphs/train consistently)");
  s.ds = make_windows(s.graphs.flows, s.meta.config.window_len,
                      s.meta.config.horizon, s.meta.splits);
  s.state = std::make_unique<ModelState>(s.meta.config, s.graphs.net.size(), 0);
  s.state->load(model_dir + "/model.ckpt");
  return s;
}

int cmd_calibrate(const CommonFlags& common, const std::string& graphs_dir,
                  const std::string& model_dir,
                  const std::optional<double>& alpha) {
  RunConfig cfg = common.resolve();
  Session s = open_session(graphs_dir, model_dir);
  const double a = alpha.value_or(s.meta.alpha);
  if (a <= 0.0 || a >= 1.0) throw ConfigError("--alpha must be in (0,1)");
  const ConformalRadii radii = calibrate(*s.state, s.ds, s.graphs.adjacency, a);
  fs::create_directories(cfg.out_dir);
  save_radii(radii, s.graphs.net, cfg.out_dir + "/radii.csv");
  std::map<std::string, std::string> hashes{
      {graphs_dir + "/adjacency", s.graphs.fingerprint},
      {model_dir + "/model.ckpt", hash_file(model_dir + "/model.ckpt")}};
  cfg.training.alpha = a;
  write_manifest(cfg.out_dir, "calibrate", cfg, hashes, {"radii.csv"});
  if (radii.coverage_warning)
    std::cerr << "warning: calibration split too small for nominal coverage\n";
  std::cout << "radii written to " << cfg.out_dir << "/radii.csv\n";
  return 0;
}

int cmd_predict(const CommonFlags& common, const std::string& graphs_dir,
                const std::string& model_dir,
                const std::optional<double>& alpha) {
  RunConfig cfg = common.resolve();
  Session s = open_session(graphs_dir, model_dir);
  const ConformalRadii radii =
      load_radii(model_dir + "/radii.csv", s.graphs.net);
  if (alpha && std::abs(*alpha - radii.alpha) > 1e-12)
    throw ConfigError("--alpha " + format_double(*alpha) +
                      " does not match the calibrated radii (alpha=" +
                      format_double(radii.alpha) +
                      "); rerun `calibrate --alpha ...` first");

  std::vector<std::vector<std::string>> rows;
  for (const WindowSample& w : s.ds.test) {
    const ad::Tensor pred = predict(input_tensor(s.ds, w), w.h_tag,
                                    s.graphs.adjacency, *s.state);
    const Matrix fc = denormalize(s.ds, pred);
    const Intervals iv = intervals(fc, radii);
    for (std::size_t k = 0; k < s.ds.horizon; ++k) {
      const Minutes target_time =
          s.ds.timestamps[w.start + s.ds.window_len + k];
      for (std::size_t i = 0; i < s.graphs.net.size(); ++i)
        rows.push_back({format_datetime(s.ds.timestamps[w.start]),
                        format_datetime(target_time), std::to_string(k + 1),
                        s.graphs.net.stations[i].id, format_double(fc(k, i)),
                        format_double(iv.lower(k, i)),
                        format_double(iv.upper(k, i)),
                        format_double(iv.upper(k, i) - iv.lower(k, i))});
    }
  }
  fs::create_directories(cfg.out_dir);
  write_csv(cfg.out_dir + "/forecasts.csv",
            {"window_start", "target_time", "horizon", "station", "forecast",
             "lower", "upper", "width"},
            rows);
  std::map<std::string, std::string> hashes{
      {graphs_dir + "/adjacency", s.graphs.fingerprint},
      {model_dir + "/model.ckpt", hash_file(model_dir + "/model.ckpt")},
      {model_dir + "/radii.csv", hash_file(model_dir + "/radii.csv")}};
  cfg.training.alpha = radii.alpha;
  write_manifest(cfg.out_dir, "predict", cfg, hashes, {"forecasts.csv"});
  std::cout << rows.size() << " forecast rows written to " << cfg.out_dir
            << "/forecasts.csv\n";
  return 0;
}

int cmd_evaluate(const CommonFlags& common, const std::string& graphs_dir,
                 const std::string& model_dir,
                 const std::optional<std::string>& expect_ablation,
                 const std::string& plot_path, std::size_t plot_node,
                 std::size_t plot_horizon) {
  RunConfig cfg = common.resolve();
  Session s = open_session(graphs_dir, model_dir);
  if (expect_ablation &&
      ablation_from_name(*expect_ablation) != s.meta.config.ablation)
    throw ConfigError("--ablation " + *expect_ablation +
                      " does not match the checkpoint (" +
                      ablation_name(s.meta.config.ablation) + ")");
  const ConformalRadii radii =
      load_radii(model_dir + "/radii.csv", s.graphs.net);
  if (s.ds.test.empty()) throw ValidationError("evaluate: empty test split");

  const std::size_t t1 = static_cast<std::size_t>(
      s.meta.splits.train_frac * static_cast<double>(s.ds.timestamps.size()));
  const HaBaseline ha(s.graphs.flows, t1);

  std::vector<Matrix> pred, truth, lower, upper, ha_pred;
  pred.reserve(s.ds.test.size());
  for (const WindowSample& w : s.ds.test) {
    const ad::Tensor out = predict(input_tensor(s.ds, w), w.h_tag,
                                   s.graphs.adjacency, *s.state);
    const Matrix fc = denormalize(s.ds, out);
    const Intervals iv = intervals(fc, radii);
    pred.push_back(fc);
    lower.push_back(iv.lower);
    upper.push_back(iv.upper);
    truth.push_back(target_raw(s.ds, w));
    ha_pred.push_back(ha.forecast(s.ds.timestamps, w.start + s.ds.window_len,
                                  s.ds.horizon));
  }

  const AccuracyResult acc = mae_rmse(pred, truth);
  const CoverageResult cov = picp_mpiw(lower, upper, truth);
  const AccuracyResult ha_acc = mae_rmse(ha_pred, truth);

  json report;
  report["alpha"] = radii.alpha;
  report["horizons"] = s.ds.horizon;
  report["n_eval"] = s.ds.test.size();
  report["ablation"] = ablation_name(s.meta.config.ablation);
  report["model"] = {{"mae", acc.mae},
                     {"rmse", acc.rmse},
                     {"mae_overall", acc.mae_overall},
                     {"rmse_overall", acc.rmse_overall}};
  report["intervals"] = {{"picp", cov.picp},
                         {"mpiw", cov.mpiw},
                         {"picp_overall", cov.picp_overall},
                         {"mpiw_overall", cov.mpiw_overall}};
  report["ha"] = {{"mae", ha_acc.mae},
                  {"rmse", ha_acc.rmse},
                  {"mae_overall", ha_acc.mae_overall},
                  {"rmse_overall", ha_acc.rmse_overall}};
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(cfg.out_dir + "/report.json");
    out << report.dump(2) << "\n";
  }

  std::vector<std::string> outputs{"report.json"};
  if (!plot_path.empty()) {
    if (plot_node >= s.graphs.net.size() || plot_horizon < 1 ||
        plot_horizon > s.ds.horizon)
      throw ConfigError("plot node/horizon out of range");
    const std::size_t k = plot_horizon - 1;
    std::vector<double> pt, pf, pl, pu;
    for (std::size_t t = 0; t < pred.size(); ++t) {
      pt.push_back(truth[t](k, plot_node));
      pf.push_back(pred[t](k, plot_node));
      pl.push_back(lower[t](k, plot_node));
      pu.push_back(upper[t](k, plot_node));
    }
    write_forecast_svg(cfg.out_dir + "/" + plot_path, pt, pf, pl, pu,
                       "station " + s.graphs.net.stations[plot_node].id +
                           ", horizon " + std::to_string(plot_horizon));
    outputs.push_back(plot_path);
  }

  std::map<std::string, std::string> hashes{
      {graphs_dir + "/adjacency", s.graphs.fingerprint},
      {model_dir + "/model.ckpt", hash_file(model_dir + "/model.ckpt")}};
  cfg.training.alpha = radii.alpha;
  write_manifest(cfg.out_dir, "evaluate", cfg, hashes, outputs);

  std::cout << "MAE";
  for (double v : acc.mae) std::cout << " " << v;
  std::cout << " | RMSE";
  for (double v : acc.rmse) std::cout << " " << v;
  std::cout << " | PICP";
  for (double v : cov.picp) std::cout << " " << v;
  std::cout << " | MPIW";
  for (double v : cov.mpiw) std::cout << " " << v;
  std::cout << "\nHA MAE";
  for (double v : ha_acc.mae) std::cout << " " << v;
  std::cout << "\nreport written to " << cfg.out_dir << "/report.json\n";
  return 0;
}

int cmd_delta(const CommonFlags& common, std::vector<int> hours) {
  RunConfig cfg = common.resolve();
  Inputs in = load_inputs(cfg, /*need_crashes=*/true);
  if (hours.empty()) hours = {14, 15, 16, 17};
  for (int h : hours)
    if (h < 0 || h > 23)
      throw ConfigError("--hours entries must be in 0..23");

  const CvProfile profile = estimate_cv_profile(in.flows);
  const Matrix t_mean =
      baseline_travel_times(in.net, cfg.speed_mph, cfg.tmean_override);
  const TravelTimeBank bank = sample_bank(
      t_mean, profile, component_seed(cfg.seed, kSeedBank), cfg.samples_per_edge);
  const RiskField risk = build_risk(in, false, "");
  const AdjacencyBank crash_bank =
      build_adjacency(bank, risk, in.net, cfg.adjacency, false);
  const AdjacencyBank base_bank =
      build_adjacency(bank, risk, in.net, cfg.adjacency, true);

  fs::create_directories(cfg.out_dir);
  std::vector<std::string> outputs;
  for (int h : hours) {
    const Matrix delta = adjacency_delta(crash_bank, base_bank, h);
    char name[24];
    std::snprintf(name, sizeof(name), "delta_h%02d.csv", h);
    write_matrix_csv(delta, in.net, cfg.out_dir + "/" + name);
    outputs.push_back(name);
  }
  write_manifest(cfg.out_dir, "delta", cfg, in.hashes, outputs);
  std::cout << outputs.size() << " delta matrices written to " << cfg.out_dir
            << "\n";
  return 0;
}

int cmd_route_mc(const CommonFlags& common, const std::string& graphs_dir,
                 const std::string& route_arg, int start_hour, int runs,
                 bool incident) {
  RunConfig cfg = common.resolve();
  GraphDir g = load_graph_dir(graphs_dir);

  std::vector<std::size_t> route;
  std::stringstream ss(route_arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    bool found = false;
    for (std::size_t i = 0; i < g.net.size(); ++i)
      if (g.net.stations[i].id == tok) {
        route.push_back(i);
        found = true;
        break;
      }
    if (!found)
      throw ValidationError("route station '" + tok + "' not in the network");
  }

  const auto hourly = incident ? g.adjacency.t_eff
                               : replicate_hourly(g.bank.t_mean);
  const RouteMcResult mc =
      monte_carlo_route(hourly, g.profile, route, start_hour, runs,
                        component_seed(cfg.seed, kSeedRouteMc));
  const KsResult ks = ks_lognormal(mc.samples);

  fs::create_directories(cfg.out_dir);
  {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t r = 0; r < mc.samples.size(); ++r)
      rows.push_back({std::to_string(r), format_double(mc.samples[r])});
    write_csv(cfg.out_dir + "/trip_samples.csv", {"run", "minutes"}, rows);
  }
  {
    json report;
    report["runs"] = runs;
    report["start_hour"] = start_hour;
    report["incident_aware"] = incident;
    report["mean_minutes"] = mc.mean;
    report["std_minutes"] = mc.std_dev;
    report["ks_stat"] = ks.ks_stat;
    report["p_value"] = ks.p_value;
    report["fit_mu_ln"] = ks.mu_ln;
    report["fit_sigma_ln"] = ks.sigma_ln;
    std::ofstream out(cfg.out_dir + "/ks_report.json");
    out << report.dump(2) << "\n";
  }
  std::map<std::string, std::string> hashes{
      {graphs_dir + "/bank/t_mean.csv", hash_file(graphs_dir + "/bank/t_mean.csv")}};
  write_manifest(cfg.out_dir, "route-mc", cfg, hashes,
                 {"trip_samples.csv", "ks_report.json"});
  std::cout << "trip time mean " << mc.mean << " min, std " << mc.std_dev
            << " min; KS " << ks.ks_stat << ", p " << ks.p_value << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hour-conditioned, incident-aware traffic flow forecasting"};
  app.require_subcommand(1);

  CommonFlags common;

  auto* build = app.add_subcommand(
      "build-graphs", "construct the travel-time and adjacency banks");
  common.attach(build);
  bool no_crash = false, with_severity = false;
  build->add_flag("--no-crash", no_crash,
                  "build the crash-free bank (rho forced to 0)");
  build->add_flag("--severity-csv", with_severity,
                  "also export per-crash severity factors");

  auto* train_cmd = app.add_subcommand("train", "train the forecaster");
  common.attach(train_cmd);
  std::string graphs_dir;
  std::optional<std::string> ablation, cp_mode;
  std::optional<double> alpha;
  train_cmd->add_option("--graphs", graphs_dir, "build-graphs output directory")
      ->required();
  train_cmd->add_option_function<std::string>(
      "--ablation", [&](const std::string& v) { ablation = v; },
      "Full|EncoderOnly|DecoderOnly|NoPatch|NoCrossAttn");
  train_cmd->add_option_function<std::string>(
      "--cp-mode", [&](const std::string& v) { cp_mode = v; }, "acp|split");
  train_cmd->add_option_function<double>(
      "--alpha", [&](double v) { alpha = v; }, "miscoverage level");

  auto* cal = app.add_subcommand("calibrate", "recompute conformal radii");
  common.attach(cal);
  std::string cal_graphs, cal_model;
  std::optional<double> cal_alpha;
  cal->add_option("--graphs", cal_graphs)->required();
  cal->add_option("--model", cal_model, "train output directory")->required();
  cal->add_option_function<double>(
      "--alpha", [&](double v) { cal_alpha = v; }, "miscoverage level");

  auto* pred = app.add_subcommand("predict",
                                  "emit test-split forecasts with intervals");
  common.attach(pred);
  std::string pred_graphs, pred_model;
  std::optional<double> pred_alpha;
  pred->add_option("--graphs", pred_graphs)->required();
  pred->add_option("--model", pred_model)->required();
  pred->add_option_function<double>(
      "--alpha", [&](double v) { pred_alpha = v; },
      "must match the calibrated radii");

  auto* eval = app.add_subcommand("evaluate", "score the test split");
  common.attach(eval);
  std::string eval_graphs, eval_model, plot_path;
  std::optional<std::string> eval_ablation;
  std::size_t plot_node = 0, plot_horizon = 1;
  eval->add_option("--graphs", eval_graphs)->required();
  eval->add_option("--model", eval_model)->required();
  eval->add_option_function<std::string>(
      "--ablation", [&](const std::string& v) { eval_ablation = v; },
      "assert the checkpoint's ablation");
  eval->add_option("--plot", plot_path, "also write an SVG forecast plot");
  eval->add_option("--plot-node", plot_node, "station index for the plot");
  eval->add_option("--plot-horizon", plot_horizon, "horizon for the plot");

  auto* delta = app.add_subcommand(
      "delta", "crash-induced adjacency change per hour");
  common.attach(delta);
  std::vector<int> hours;
  delta->add_option("--hours", hours, "hours to emit (default 14-17)")
      ->delimiter(',');

  auto* mc = app.add_subcommand("route-mc",
                                "Monte-Carlo trip times along a route");
  common.attach(mc);
  std::string mc_graphs, route;
  int start_hour = 8, runs = 200;
  bool incident = false;
  mc->add_option("--graphs", mc_graphs)->required();
  mc->add_option("--route", route, "comma-separated station ids")->required();
  mc->add_option("--start-hour", start_hour, "departure hour (0-23)");
  mc->add_option("--runs", runs, "Monte-Carlo runs (default 200)");
  mc->add_flag("--incident", incident,
               "sample around incident-aware effective times");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (build->parsed()) return cmd_build_graphs(common, no_crash, with_severity);
    if (train_cmd->parsed())
      return cmd_train(common, graphs_dir, ablation, cp_mode, alpha);
    if (cal->parsed()) return cmd_calibrate(common, cal_graphs, cal_model, cal_alpha);
    if (pred->parsed()) return cmd_predict(common, pred_graphs, pred_model, pred_alpha);
    if (eval->parsed())
      return cmd_evaluate(common, eval_graphs, eval_model, eval_ablation,
                          plot_path, plot_node, plot_horizon);
    if (delta->parsed()) return cmd_delta(common, hours);
    if (mc->parsed())
      return cmd_route_mc(common, mc_graphs, route, start_hour, runs, incident);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ValidationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
