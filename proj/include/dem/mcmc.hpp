#pragma once

#include "dem/energy.hpp"

#include <string>
#include <vector>

namespace dem {

struct MalaConfig {
  double step_size = 1e-2;
  long n_steps = 1000;
  int n_chains = 4;
  long burn_in = 0;
  int thinning = 1;
  std::uint64_t seed = 0;
  double init_sigma = 1.0;         // scale of the mean-free Gaussian starting states
  double init_min_distance = 0.0;  // particle targets: redraw starts with a closer pair
  bool tune = false;               // bisection pre-run towards 50% acceptance
  int tune_steps = 200;
  int workers = 1;

  void validate() const;
};

struct MalaState {
  Vec x;
  double energy = 0.0;
  Vec grad;

  static MalaState at(const Target& target, const VecRef& x);
};

struct MalaStepResult {
  Vec x;
  bool accepted = false;
};

/// One Metropolis-adjusted Langevin step: proposal x' = x - h grad E(x) + sqrt(2h) eps
/// (mean-free eps for particle targets), accepted with the MH ratio including both
/// Gaussian proposal densities. Out-of-domain proposals are rejected.
MalaStepResult mala_step(const Target& target, const VecRef& x, double step, Rng& rng);
bool mala_step(const Target& target, MalaState& state, double step, Rng& rng);

/// log acceptance ratio of moving from `from` to `to` (both fully evaluated).
double mala_log_accept(const MalaState& from, const MalaState& to, double step);

struct ChainResult {
  Mat samples;                      // pooled post burn-in, thinned; ordered by chain index
  std::vector<double> acceptance;   // per chain
  double step_size = 0.0;           // the step actually used (tuned or configured)
  std::vector<std::string> warnings;
  int chains_in_window() const;     // chains with acceptance in [0.2, 0.8]
};

Vec mcmc_initial_state(const Target& target, const MalaConfig& cfg, Rng& rng);

/// Bisection on log step size so the pooled acceptance of short pre-runs is ~0.5.
double tune_step_size(const Target& target, const MalaConfig& cfg);

ChainResult run_chains(const Target& target, const MalaConfig& cfg);

}  // namespace dem
