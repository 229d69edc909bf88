#pragma once

#include "dem/estimator.hpp"
#include "dem/mcmc.hpp"
#include "dem/network.hpp"
#include "dem/trainer.hpp"

#include <map>
#include <string>
#include <vector>

namespace dem {

/// Raw key/value pairs of a sectioned text config, keyed "section.key".
/// Line numbers are kept for diagnostics.
struct ConfigEntry {
  std::string value;
  int line = 0;
};
using ConfigMap = std::map<std::string, ConfigEntry>;

/// Parses "[section]" headers, "key = value" lines and '#'/';' comments.
/// Throws Error(Config) naming the line for malformed input, duplicates or
/// keys that are not part of the schema.
ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap parse_config_file(const std::string& path);

/// Names of the built-in task presets.
std::vector<std::string> preset_names();

struct EvalSettings {
  std::size_t n_samples = 1000;
  std::vector<std::string> metrics;  // subset of w2, tv, ess, log_z, mode_recall
  std::string reference;             // optional path to a reference array file
  int tv_bins = 200;
  double tv_lo = -50.0;
  double tv_hi = 50.0;
  double mode_radius = 0.0;          // raw units
  int pf_ode_steps = 100;
};

struct RunConfig {
  std::string preset;                // empty when no preset was used
  std::string task;                  // gmm | dw4 | lj13 | lj55 | gaussian
  std::uint64_t seed = 0;
  int workers = 1;

  int gaussian_dim = 2;
  double scale = 1.0;                // network works on x / scale
  std::uint64_t gmm_seed = 0;        // mixture means when no table is given
  std::string gmm_table;
  double lj_oscillator = 0.5;        // harmonic restraint strength

  TrainConfig train;
  ArchSpec arch;
  EstimatorKind estimator = EstimatorKind::LogSumExp;
  int checkpoint_every = 0;          // outer loops; 0 writes only the final checkpoint
  bool save_buffer = false;

  EvalSettings eval;
  MalaConfig mcmc;

  /// Every key of the schema with its resolved value, in schema order.
  std::string resolved_text;
};

/// Resolves a parsed file against the schema: defaults, then the preset named
/// by run.preset, then the file itself, then `overrides`. Throws Error(Config)
/// for missing required keys and badly typed values.
RunConfig resolve_config(const ConfigMap& file, const ConfigMap& overrides = {});
RunConfig load_run_config(const std::string& path, const ConfigMap& overrides = {});

/// Builds the target described by the config (including input scaling).
TargetPtr make_target(const RunConfig& cfg);
/// The unscaled target, in the coordinates samples are reported in.
TargetPtr make_raw_target(const RunConfig& cfg);

/// Sweep description for the ablation command.
struct SweepSpec {
  std::vector<int> k_values;
  std::vector<double> t_values;
  std::vector<double> sigma_values;  // used instead of t when non-empty
  int n_points = 4;
  double point_scale = 1.0;          // probe points ~ N(0, point_scale^2 I)
  int repeats = 50;
  std::vector<EstimatorKind> kinds;
  double probe_energy_shift = 0.0;   // extra constant added to E for the comparison probes
};
SweepSpec load_sweep_spec(const std::string& path);
SweepSpec parse_sweep_text(const std::string& text, const std::string& origin = "<sweep>");

}  // namespace dem
