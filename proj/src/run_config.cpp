#include "flowcast/run_config.hpp"

#include <fstream>
#include <set>

#include "flowcast/common.hpp"
#include "flowcast/csv.hpp"

namespace flowcast {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "': expected a boolean, got '" +
                    v + "'");
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "synthetic",    "stations_csv",   "counts_csv",     "crashes_csv",
      "n_stations",   "days",           "step_minutes",   "ccs_fraction",
      "base_flow",    "peak_amplitude", "noise_sigma",    "day_amp_phi",
      "day_amp_sigma", "weekly_amp",    "hour_ar_phi",   "hour_ar_sigma",  "crash_rate",
      "seed",          "samples_per_edge",
      "speed_mph",    "tmean_override", "sigma_sq",       "rho_max",
      "window",       "horizon",        "patch",          "embed_dim",
      "heads",        "temporal_depth", "spatial_depth",  "ffn_mult",
      "dropout",      "ablation",       "lr",             "patience",
      "max_epochs",   "batch_size",     "alpha",          "cp_mode",
      "train_frac",   "cal_frac",       "out_dir",
  };
  return keys;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;

  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + " line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!known_keys().count(key))
      throw ConfigError(path + " line " + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    if (kv.count(key))
      throw ConfigError(path + " line " + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    kv[key] = value;
  }

  const std::string ctx = path;
  const auto geti = [&](const std::string& k, auto& out) {
    if (kv.count(k)) out = static_cast<std::remove_reference_t<decltype(out)>>(
        parse_int(kv[k], ctx + " key " + k));
  };
  const auto getd = [&](const std::string& k, double& out) {
    if (kv.count(k)) out = parse_double(kv[k], ctx + " key " + k);
  };
  const auto gets = [&](const std::string& k, std::string& out) {
    if (kv.count(k)) out = kv[k];
  };

  if (kv.count("synthetic")) cfg.synthetic = parse_bool(kv["synthetic"], "synthetic");
  gets("stations_csv", cfg.stations_csv);
  gets("counts_csv", cfg.counts_csv);
  gets("crashes_csv", cfg.crashes_csv);
  geti("n_stations", cfg.synth.n_stations);
  geti("days", cfg.synth.days);
  geti("step_minutes", cfg.synth.step_minutes);
  getd("ccs_fraction", cfg.synth.ccs_fraction);
  getd("base_flow", cfg.synth.base_flow);
  getd("peak_amplitude", cfg.synth.peak_amplitude);
  getd("noise_sigma", cfg.synth.noise_sigma);
  getd("day_amp_phi", cfg.synth.day_amp_phi);
  getd("day_amp_sigma", cfg.synth.day_amp_sigma);
  getd("weekly_amp", cfg.synth.weekly_amp);
  getd("hour_ar_phi", cfg.synth.hour_ar_phi);
  getd("hour_ar_sigma", cfg.synth.hour_ar_sigma);
  getd("crash_rate", cfg.synth.crash_rate);
  geti("seed", cfg.seed);
  geti("samples_per_edge", cfg.samples_per_edge);
  getd("speed_mph", cfg.speed_mph);
  if (kv.count("tmean_override")) cfg.tmean_override = kv["tmean_override"];
  getd("sigma_sq", cfg.adjacency.sigma_sq);
  getd("rho_max", cfg.adjacency.rho_max);
  geti("window", cfg.model.window_len);
  geti("horizon", cfg.model.horizon);
  geti("patch", cfg.model.patch_len);
  geti("embed_dim", cfg.model.embed_dim);
  geti("heads", cfg.model.heads);
  geti("temporal_depth", cfg.model.temporal_depth);
  geti("spatial_depth", cfg.model.spatial_depth);
  geti("ffn_mult", cfg.model.ffn_mult);
  getd("dropout", cfg.model.dropout);
  if (kv.count("ablation")) cfg.model.ablation = ablation_from_name(kv["ablation"]);
  getd("lr", cfg.training.lr);
  geti("patience", cfg.training.patience);
  geti("max_epochs", cfg.training.max_epochs);
  geti("batch_size", cfg.training.batch_size);
  getd("alpha", cfg.training.alpha);
  if (kv.count("cp_mode")) {
    if (kv["cp_mode"] == "acp")
      cfg.training.acp = true;
    else if (kv["cp_mode"] == "split")
      cfg.training.acp = false;
    else
      throw ConfigError("config: cp_mode must be 'acp' or 'split', got '" +
                        kv["cp_mode"] + "'");
  }
  getd("train_frac", cfg.splits.train_frac);
  getd("cal_frac", cfg.splits.cal_frac);
  gets("out_dir", cfg.out_dir);
  return cfg;
}

void RunConfig::validate() const {
  if (adjacency.sigma_sq <= 0.0)
    throw ConfigError("config: sigma_sq must be positive");
  if (adjacency.rho_max <= 0.0 || adjacency.rho_max > 1.0)
    throw ConfigError("config: rho_max must be in (0, 1]");
  if (training.alpha <= 0.0 || training.alpha >= 1.0)
    throw ConfigError("config: alpha must be in (0, 1)");
  if (samples_per_edge < 1)
    throw ConfigError("config: samples_per_edge must be >= 1");
  if (speed_mph <= 0.0) throw ConfigError("config: speed_mph must be positive");
  if (splits.train_frac <= 0.0 || splits.cal_frac < 0.0 ||
      splits.train_frac + splits.cal_frac >= 1.0)
    throw ConfigError("config: split fractions must leave room for a test set");
  if (!synthetic &&
      (stations_csv.empty() || counts_csv.empty()))
    throw ConfigError(
        "config: stations_csv and counts_csv required when synthetic=false");
  model.validate();
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> kv;
  kv["synthetic"] = synthetic ? "true" : "false";
  kv["stations_csv"] = stations_csv;
  kv["counts_csv"] = counts_csv;
  kv["crashes_csv"] = crashes_csv;
  kv["n_stations"] = std::to_string(synth.n_stations);
  kv["days"] = std::to_string(synth.days);
  kv["step_minutes"] = std::to_string(synth.step_minutes);
  kv["ccs_fraction"] = format_double(synth.ccs_fraction);
  kv["base_flow"] = format_double(synth.base_flow);
  kv["peak_amplitude"] = format_double(synth.peak_amplitude);
  kv["noise_sigma"] = format_double(synth.noise_sigma);
  kv["day_amp_phi"] = format_double(synth.day_amp_phi);
  kv["day_amp_sigma"] = format_double(synth.day_amp_sigma);
  kv["weekly_amp"] = format_double(synth.weekly_amp);
  kv["hour_ar_phi"] = format_double(synth.hour_ar_phi);
  kv["hour_ar_sigma"] = format_double(synth.hour_ar_sigma);
  kv["crash_rate"] = format_double(synth.crash_rate);
  kv["seed"] = std::to_string(seed);
  kv["samples_per_edge"] = std::to_string(samples_per_edge);
  kv["speed_mph"] = format_double(speed_mph);
  kv["tmean_override"] = tmean_override.value_or("");
  kv["sigma_sq"] = format_double(adjacency.sigma_sq);
  kv["rho_max"] = format_double(adjacency.rho_max);
  kv["window"] = std::to_string(model.window_len);
  kv["horizon"] = std::to_string(model.horizon);
  kv["patch"] = std::to_string(model.patch_len);
  kv["embed_dim"] = std::to_string(model.embed_dim);
  kv["heads"] = std::to_string(model.heads);
  kv["temporal_depth"] = std::to_string(model.temporal_depth);
  kv["spatial_depth"] = std::to_string(model.spatial_depth);
  kv["ffn_mult"] = std::to_string(model.ffn_mult);
  kv["dropout"] = format_double(model.dropout);
  kv["ablation"] = ablation_name(model.ablation);
  kv["lr"] = format_double(training.lr);
  kv["patience"] = std::to_string(training.patience);
  kv["max_epochs"] = std::to_string(training.max_epochs);
  kv["batch_size"] = std::to_string(training.batch_size);
  kv["alpha"] = format_double(training.alpha);
  kv["cp_mode"] = training.acp ? "acp" : "split";
  kv["train_frac"] = format_double(splits.train_frac);
  kv["cal_frac"] = format_double(splits.cal_frac);
  kv["out_dir"] = out_dir;
  return kv;
}

}  // namespace flowcast
