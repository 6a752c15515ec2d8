// mzmsim: seeded scenario runner for the dual-MZI modulator simulator.
// Subcommands: map, rabi, hist, gst. Exit codes: 0 ok, 2 config error,
// 3 numeric failure, 4 fit non-convergence.

#include "CLI11.hpp"

#include "mzmsim/dynamics.hpp"
#include "mzmsim/photonics.hpp"
#include "mzmsim/rng.hpp"
#include "mzmsim/tomography.hpp"
#include "mzmsim/version.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mzmsim;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  explicit Config(std::map<std::string, std::string> defaults)
      : values_(std::move(defaults)) {}

  void apply(const std::string& key, const std::string& value,
             const std::string& origin) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("unknown config key '" + key + "' (" + origin + ")");
    it->second = value;
  }

  void apply_preset(const std::map<std::string, std::string>& preset) {
    for (const auto& [k, v] : preset) values_.at(k) = v;
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) +
                          ": expected key = value");
      apply(trimmed(line.substr(0, eq)), trimmed(line.substr(eq + 1)),
            path + ":" + std::to_string(lineno));
    }
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  double num(const std::string& key) const {
    const std::string& v = values_.at(key);
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: " + v);
    }
  }

  long integer(const std::string& key) const {
    const double x = num(key);
    const long n = std::lround(x);
    if (std::abs(x - static_cast<double>(n)) > 0.0)
      throw ConfigError("config key '" + key + "' is not an integer");
    return n;
  }

  bool boolean(const std::string& key) const {
    const std::string& v = values_.at(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + v);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

struct CommonArgs {
  std::string config_path;
  std::string preset;
  std::string out = "mzmsim_out";
  std::string timestamp = "unspecified";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--preset", args.preset, "named parameter preset");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--timestamp", args.timestamp,
                  "metadata timestamp string (never wall clock)");
  cmd->add_option("--set", args.overrides, "inline override key=value")
      ->take_all();
  cmd->add_option("--seed", args.seed, "RNG seed (overrides config)")
      ->trigger_on_parse()
      ->each([&args](const std::string&) { args.seed_given = true; });
}

Config resolve(const CommonArgs& args,
               std::map<std::string, std::string> defaults,
               const std::map<std::string, std::map<std::string, std::string>>&
                   presets) {
  Config cfg(std::move(defaults));
  if (!args.preset.empty()) {
    auto it = presets.find(args.preset);
    if (it == presets.end()) throw ConfigError("unknown preset: " + args.preset);
    cfg.apply_preset(it->second);
  }
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got: " + kv);
    cfg.apply(kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  if (args.seed_given) cfg.apply("seed", std::to_string(args.seed), "--seed");
  return cfg;
}

std::ofstream open_output(const fs::path& dir, const std::string& name) {
  std::ofstream os(dir / name);
  if (!os) throw NumericError("cannot write output file: " + (dir / name).string());
  return os;
}

void write_echo(const fs::path& dir, const std::string& command,
                const CommonArgs& args, const Config& cfg) {
  auto os = open_output(dir, "config_echo.txt");
  os << "# mzmsim resolved configuration\n";
  os << "version = " << kVersion << "\n";
  os << "command = " << command << "\n";
  os << "preset = " << (args.preset.empty() ? "none" : args.preset) << "\n";
  os << "timestamp = " << args.timestamp << "\n";
  for (const auto& [k, v] : cfg.values()) os << k << " = " << v << "\n";
}

double ensure_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw NumericError("non-finite value in " + what);
  return x;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::vector<double> linspace(double lo, double hi, long n) {
  if (n < 1) throw ConfigError("grid size must be >= 1");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  if (n == 1) {
    out.push_back(lo);
    return out;
  }
  for (long i = 0; i < n; ++i)
    out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  return out;
}

// --- map ---------------------------------------------------------------------

int cmd_map(const CommonArgs& args) {
  std::map<std::string, std::string> defaults = {
      {"seed", "12345"},          {"split_in1", "0.5"},
      {"split_out1", "0.5"},      {"split_in2", "0.5"},
      {"split_out2", "0.5"},      {"coupler_loss_db", "0"},
      {"arm_loss_db", "0"},       {"vpi", "24"},
      {"routing", "straight"},    {"output_port", "0"},
      {"v1_min", "-48"},          {"v1_max", "48"},
      {"v2_min", "-48"},          {"v2_max", "48"},
      {"grid_n", "201"},          {"optimize", "1"},
  };
  const std::map<std::string, std::map<std::string, std::string>> presets = {
      {"perfect", {}},
      {"imperfect",
       {{"split_in1", "0.4"},
        {"split_out1", "0.4"},
        {"split_in2", "0.4"},
        {"split_out2", "0.4"}}},
  };
  Config cfg = resolve(args, std::move(defaults), presets);

  photonics::DeviceSpec dev;
  dev.stage1.splitter = {cfg.num("split_in1"), cfg.num("coupler_loss_db")};
  dev.stage1.combiner = {cfg.num("split_out1"), cfg.num("coupler_loss_db")};
  dev.stage2.splitter = {cfg.num("split_in2"), cfg.num("coupler_loss_db")};
  dev.stage2.combiner = {cfg.num("split_out2"), cfg.num("coupler_loss_db")};
  dev.stage1.arms.loss_db = dev.stage2.arms.loss_db = cfg.num("arm_loss_db");
  dev.stage1.arms.vpi = dev.stage2.arms.vpi = cfg.num("vpi");
  const std::string routing = cfg.str("routing");
  if (routing == "straight") dev.routing = photonics::Routing::straight;
  else if (routing == "crossed") dev.routing = photonics::Routing::crossed;
  else throw ConfigError("routing must be 'straight' or 'crossed'");
  const long port = cfg.integer("output_port");
  if (port != 0 && port != 1) throw ConfigError("output_port must be 0 or 1");
  dev.designated_output = static_cast<int>(port);

  const long n = cfg.integer("grid_n");
  const auto v1 = linspace(cfg.num("v1_min"), cfg.num("v1_max"), n);
  const auto v2 = linspace(cfg.num("v2_min"), cfg.num("v2_max"), n);

  const fs::path dir(args.out);
  fs::create_directories(dir);
  write_echo(dir, "map", args, cfg);

  const auto map = photonics::transmission_map(dev, v1, v2);
  ensure_finite(map.power.sum(), "transmission map");
  {
    auto os = open_output(dir, "map.csv");
    photonics::write_map_csv(map, os);
  }
  {
    auto os = open_output(dir, "rabi_map.csv");
    photonics::write_rabi_csv(map, os);
  }

  auto os = open_output(dir, "summary.txt");
  os << "# transmission-map summary\n";
  os << "version = " << kVersion << "\n";
  os << "grid_min_power = " << fmt(map.power.minCoeff()) << "\n";
  os << "grid_max_power = " << fmt(map.power.maxCoeff()) << "\n";
  os << "single_mzi_bar_extinction_db = "
     << fmt(photonics::single_mzi_bar_extinction_db(dev.stage1.splitter,
                                                    dev.stage1.combiner))
     << "\n";
  if (cfg.boolean("optimize")) {
    photonics::VoltageRange range{std::min(cfg.num("v1_min"), cfg.num("v2_min")),
                                  std::max(cfg.num("v1_max"), cfg.num("v2_max"))};
    const auto ext = photonics::optimize_extinction(dev, range);
    os << "v_on = " << fmt(ext.v_on[0]) << ' ' << fmt(ext.v_on[1]) << "\n";
    os << "v_off = " << fmt(ext.v_off[0]) << ' ' << fmt(ext.v_off[1]) << "\n";
    os << "on_power = " << fmt(ensure_finite(ext.on_power, "extinction on-power"))
       << "\n";
    os << "off_power = " << fmt(ext.off_power) << "\n";
    os << "dual_mzi_extinction_db = " << fmt(ext.extinction_db) << "\n";
  }
  return 0;
}

// --- rabi --------------------------------------------------------------------

int cmd_rabi(const CommonArgs& args) {
  std::map<std::string, std::string> defaults = {
      {"seed", "12345"},       {"extinction_db", "inf"},
      {"t_pi_on_us", "21.95"}, {"t_max_us", "2000"},
      {"n_points", "1001"},    {"on_power_rel", "1"},
  };
  const std::map<std::string, std::map<std::string, std::string>> presets = {
      {"ideal", {}},
      {"mzm", {{"extinction_db", "38.7"}}},
  };
  Config cfg = resolve(args, std::move(defaults), presets);

  const double er_db = cfg.num("extinction_db");
  const double t_pi_ref = cfg.num("t_pi_on_us");
  if (!(t_pi_ref > 0.0)) throw ConfigError("t_pi_on_us must be positive");
  const double omega_ref = std::numbers::pi / t_pi_ref;
  const double omega_on =
      dynamics::rabi_rate_from_power(cfg.num("on_power_rel"), omega_ref);
  const double amp_ratio = std::pow(10.0, -er_db / 20.0);  // 0 when er = inf
  const double omega_off = omega_on * amp_ratio;

  const auto t = linspace(0.0, cfg.num("t_max_us"), cfg.integer("n_points"));
  const auto p_on = dynamics::rabi_flop(omega_on, t);
  const auto p_off = dynamics::rabi_flop(omega_off, t);

  const fs::path dir(args.out);
  fs::create_directories(dir);
  write_echo(dir, "rabi", args, cfg);

  {
    auto os = open_output(dir, "rabi.csv");
    os << "t_us,p_on,p_off\n";
    for (std::size_t i = 0; i < t.size(); ++i)
      os << fmt(t[i]) << ',' << fmt(ensure_finite(p_on[i], "on curve")) << ','
         << fmt(ensure_finite(p_off[i], "off curve")) << '\n';
  }

  const double t_pi_on = std::numbers::pi / omega_on;
  const double t_pi_off = omega_off > 0.0
                              ? std::numbers::pi / omega_off
                              : std::numeric_limits<double>::infinity();
  std::size_t arg_off = 0;
  for (std::size_t i = 1; i < p_off.size(); ++i)
    if (p_off[i] > p_off[arg_off]) arg_off = i;

  auto os = open_output(dir, "summary.txt");
  os << "# Rabi-flopping summary\n";
  os << "version = " << kVersion << "\n";
  os << "t_pi_on_us = " << fmt(t_pi_on) << "\n";
  os << "t_pi_off_us = " << fmt(t_pi_off) << "\n";
  os << "pi_time_ratio = " << fmt(t_pi_off / t_pi_on) << "\n";
  os << "inferred_extinction_db = "
     << fmt(20.0 * std::log10(t_pi_off / t_pi_on)) << "\n";
  os << "grid_t_at_off_peak_us = " << fmt(t[arg_off]) << "\n";
  os << "grid_off_peak = " << fmt(p_off[arg_off]) << "\n";
  return 0;
}

// --- hist --------------------------------------------------------------------

int cmd_hist(const CommonArgs& args) {
  std::map<std::string, std::string> defaults = {
      {"seed", "12345"},           {"pulses", "1000"},
      {"jitter_rel", "0.006"},     {"drift", "0"},
      {"drift_std_rel", "0.01"},   {"drift_tau_s", "3600"},
      {"sample_period_s", "0.5"},  {"rise_us", "0.3"},
      {"fall_us", "0.5"},          {"plateau_us", "21.15"},
  };
  // The mzm preset samples every 30 s so a 1000-pulse run spans several
  // hour-scale drift reversion times; otherwise the slow drift is frozen
  // within the run and only shifts the mean.
  const std::map<std::string, std::map<std::string, std::string>> presets = {
      {"aom", {{"drift", "0"}}},
      {"mzm", {{"drift", "1"}, {"sample_period_s", "30"}}},
  };
  Config cfg = resolve(args, std::move(defaults), presets);

  dynamics::PulseShape pulse{cfg.num("rise_us"), cfg.num("fall_us"),
                             cfg.num("plateau_us")};
  dynamics::NoiseModel noise;
  noise.energy_jitter_rel = cfg.num("jitter_rel");
  noise.drift.enabled = cfg.boolean("drift");
  noise.drift.on_power_std_rel = cfg.num("drift_std_rel");
  noise.drift.reversion_time_s = cfg.num("drift_tau_s");
  noise.drift.sample_period_s = cfg.num("sample_period_s");

  const long n = cfg.integer("pulses");
  if (n < 1) throw ConfigError("pulses must be >= 1");
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  auto rng = rng::stream(seed, 0);
  const auto samples =
      dynamics::pulse_energy_histogram(static_cast<int>(n), pulse, noise, rng);

  const fs::path dir(args.out);
  fs::create_directories(dir);
  write_echo(dir, "hist", args, cfg);
  {
    auto os = open_output(dir, "hist.csv");
    dynamics::write_histogram_csv(samples, pulse, noise, seed, os);
  }

  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0, cross = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i] - mean;
    denom += d * d;
    if (i + 1 < samples.size()) cross += d * (samples[i + 1] - mean);
  }
  if (samples.size() > 1) var = denom / static_cast<double>(samples.size() - 1);
  const double lag1 = denom > 0.0 ? cross / denom : 0.0;

  auto os = open_output(dir, "summary.txt");
  os << "# pulse-energy summary\n";
  os << "version = " << kVersion << "\n";
  os << "pulses = " << samples.size() << "\n";
  os << "mean_rel = " << fmt(ensure_finite(mean, "histogram mean")) << "\n";
  os << "std_rel = " << fmt(std::sqrt(var)) << "\n";
  os << "lag1_autocorr = " << fmt(lag1) << "\n";
  return 0;
}

// --- gst ---------------------------------------------------------------------

int cmd_gst(const CommonArgs& args) {
  std::map<std::string, std::string> defaults = {
      {"seed", "12345"},
      {"method", "both"},
      {"shots", "1000"},
      {"infinite_shots", "0"},
      {"max_power", "4"},
      {"dtheta_rad", "0"},
      {"extinction_db", "inf"},
      {"phi_i_rad", "0"},
      {"duration_us", "10.975"},
      {"gap_us", "5"},
      {"jitter_rel", "0"},
      {"drift", "0"},
      {"drift_std_db", "1.5"},
      {"drift_power_std_rel", "0.01"},
      {"drift_tau_s", "3600"},
      {"sample_period_s", "0.5"},
      {"leakage_walk_rad", "0"},
      {"dephasing", "0"},
      {"t2_us", "600"},
      {"fit_spam", "0"},
  };
  const std::map<std::string, std::map<std::string, std::string>> presets = {
      {"ideal", {{"infinite_shots", "1"}}},
      {"aom",
       {{"extinction_db", "115"},
        {"dtheta_rad", "0"},
        {"jitter_rel", "0.006"},
        {"drift", "0"}}},
      {"mzm",
       {{"extinction_db", "25.8"},
        {"dtheta_rad", "-0.0301"},
        {"phi_i_rad", "3.16"},
        {"jitter_rel", "0.006"},
        {"drift", "1"}}},
  };
  Config cfg = resolve(args, std::move(defaults), presets);

  const std::string method = cfg.str("method");
  const bool run_physical = method == "physical" || method == "both";
  const bool run_standard = method == "standard" || method == "both";
  if (!run_physical && !run_standard)
    throw ConfigError("method must be 'physical', 'standard', or 'both'");

  tomo::PhysicalParams truth_params;
  truth_params.dtheta = cfg.num("dtheta_rad");
  truth_params.theta_i = dynamics::theta_from_extinction(cfg.num("extinction_db"));
  truth_params.phi_i = cfg.num("phi_i_rad");

  dynamics::NoiseModel noise;
  noise.energy_jitter_rel = cfg.num("jitter_rel");
  noise.drift.enabled = cfg.boolean("drift");
  noise.drift.extinction_std_db = cfg.num("drift_std_db");
  noise.drift.on_power_std_rel = cfg.num("drift_power_std_rel");
  noise.drift.reversion_time_s = cfg.num("drift_tau_s");
  noise.drift.sample_period_s = cfg.num("sample_period_s");
  noise.leakage_phase_walk_rad = cfg.num("leakage_walk_rad");
  noise.dephasing = cfg.boolean("dephasing");
  noise.t2_us = cfg.num("t2_us");
  noise.gap_us = cfg.num("gap_us");

  const auto design = tomo::make_design(static_cast<int>(cfg.integer("max_power")));
  const auto truth = tomo::make_truth(truth_params, noise, cfg.num("duration_us"));
  auto dataset = tomo::simulate_dataset(design, truth, cfg.num("shots"),
                                        static_cast<std::uint64_t>(cfg.integer("seed")),
                                        cfg.boolean("infinite_shots"));
  dataset.timestamp = args.timestamp;

  const fs::path dir(args.out);
  fs::create_directories(dir);
  write_echo(dir, "gst", args, cfg);
  {
    auto os = open_output(dir, "dataset.txt");
    tomo::write_dataset(dataset, os);
  }

  if (run_physical) {
    const auto fit = tomo::fit_physical_gst(dataset);
    const auto metrics = tomo::report_metrics(fit);
    auto os = open_output(dir, "fit_physical.txt");
    tomo::write_fit_report(fit, metrics, os);
    auto csv = open_output(dir, "metrics_physical.csv");
    tomo::write_metrics_csv(metrics, csv);
  }
  if (run_standard) {
    tomo::StandardOptions opts;
    opts.fit_spam = cfg.boolean("fit_spam");
    const auto fit = tomo::fit_standard_gst(dataset, opts);
    const auto metrics = tomo::report_metrics(fit);
    auto os = open_output(dir, "fit_standard.txt");
    tomo::write_fit_report(fit, metrics, os);
    auto csv = open_output(dir, "metrics_standard.csv");
    tomo::write_metrics_csv(metrics, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-MZI optical modulator and trapped-ion gate simulator"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonArgs map_args, rabi_args, hist_args, gst_args;
  auto* map_cmd =
      app.add_subcommand("map", "voltage-voltage transmission map of the modulator");
  add_common(map_cmd, map_args);
  auto* rabi_cmd =
      app.add_subcommand("rabi", "carrier Rabi flopping for on and off states");
  add_common(rabi_cmd, rabi_args);
  auto* hist_cmd = app.add_subcommand("hist", "pulse-energy stability histogram");
  add_common(hist_cmd, hist_args);
  auto* gst_cmd =
      app.add_subcommand("gst", "simulate and fit gate-set tomography data");
  add_common(gst_cmd, gst_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (map_cmd->parsed()) return cmd_map(map_args);
    if (rabi_cmd->parsed()) return cmd_rabi(rabi_args);
    if (hist_cmd->parsed()) return cmd_hist(hist_args);
    if (gst_cmd->parsed()) return cmd_gst(gst_args);
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tomo::FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  }
}
