#pragma once

#include "dem/config.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dem {

/// Inputs shared by the command entry points. Unset fields fall back to the
/// config (or to documented defaults).
struct CommandOptions {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string reference;
  std::string samples;     // eval: score an existing sample file instead of sampling
  std::string sweep;
  std::string resume;      // train: checkpoint to continue from
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<long long> n;
  std::vector<std::string> metrics;
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

/// Each command throws dem::Error on failure. Training aborts surface as
/// Errc::TrainingAborted and MCMC runs without any chain in the acceptance
/// window as Errc::ChainsOutOfWindow (after the outputs are written).
void cmd_train(const CommandOptions& opt);
void cmd_sample(const CommandOptions& opt);
void cmd_eval(const CommandOptions& opt);
void cmd_ablate(const CommandOptions& opt);
void cmd_mcmc(const CommandOptions& opt);

/// Run directory used by `train` when no output directory is given:
/// $DEM_RUN_ROOT (or ./runs) / <task>_s<seed>_<UTC timestamp>.
std::string default_run_dir(const RunConfig& cfg);

/// Metric report for `samples` (raw coordinates, one per column). `reference`
/// may be empty; `net` is needed for ess / log_z.
nlohmann::json evaluate_samples(const RunConfig& cfg, const Mat& samples, const Mat* reference, const ScoreNet* net,
                                const std::vector<std::string>& metrics, long long step, std::uint64_t seed);

/// n reverse-SDE samples from `net` in raw coordinates (seeded from `seed`).
Mat generate_samples(const RunConfig& cfg, const ScoreNet& net, std::size_t n, std::uint64_t seed,
                     std::size_t* n_diverged = nullptr);

}  // namespace dem
