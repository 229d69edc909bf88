#include "dem/mcmc.hpp"

#include "dem/parallel.hpp"
#include "dem/sde.hpp"
#include "dem/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dem {

void MalaConfig::validate() const {
  if (!(step_size > 0)) throw Error(Errc::Config, "mcmc.step_size must be positive");
  if (n_steps < 1) throw Error(Errc::Config, "mcmc.n_steps must be at least 1");
  if (n_chains < 1) throw Error(Errc::Config, "mcmc.n_chains must be at least 1");
  if (burn_in < 0 || burn_in >= n_steps) throw Error(Errc::Config, "mcmc.burn_in must satisfy 0 <= burn_in < n_steps");
  if (thinning < 1) throw Error(Errc::Config, "mcmc.thinning must be at least 1");
}

MalaState MalaState::at(const Target& target, const VecRef& x) {
  MalaState s;
  s.x = x;
  s.energy = target.energy_grad(x, s.grad);
  return s;
}

double mala_log_accept(const MalaState& from, const MalaState& to, double step) {
  const double fwd = -(to.x - from.x + step * from.grad).squaredNorm() / (4.0 * step);
  const double rev = -(from.x - to.x + step * to.grad).squaredNorm() / (4.0 * step);
  return (from.energy - to.energy) + rev - fwd;
}

bool mala_step(const Target& target, MalaState& state, double step, Rng& rng) {
  const Vec eps = standard_noise(target.dim(), target.particles(), rng);
  MalaState prop;
  prop.x = state.x - step * state.grad + std::sqrt(2.0 * step) * eps;
  prop.grad.resize(target.dim());
  const double u = rng.uniform();
  if (!prop.x.allFinite() || !target.try_eval(prop.x, prop.energy, &prop.grad) || !std::isfinite(prop.energy) ||
      !prop.grad.allFinite())
    return false;
  const double la = mala_log_accept(state, prop, step);
  if (std::log(u) < la) {
    state = std::move(prop);
    return true;
  }
  return false;
}

MalaStepResult mala_step(const Target& target, const VecRef& x, double step, Rng& rng) {
  MalaState st = MalaState::at(target, x);
  const bool acc = mala_step(target, st, step, rng);
  return {st.x, acc};
}

int ChainResult::chains_in_window() const {
  int c = 0;
  for (double a : acceptance)
    if (a >= 0.2 && a <= 0.8) ++c;
  return c;
}

Vec mcmc_initial_state(const Target& target, const MalaConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vec x = cfg.init_sigma * standard_noise(target.dim(), target.particles(), rng);
    if (target.particles() && cfg.init_min_distance > 0) {
      const auto d = pairwise_distances(x, *target.particles());
      if (*std::min_element(d.begin(), d.end()) < cfg.init_min_distance) continue;
    }
    double e = 0.0;
    if (target.try_eval(x, e, nullptr) && std::isfinite(e)) return x;
  }
  throw Error(Errc::Domain, "could not draw a valid MCMC starting state");
}

namespace {

// Runs `steps` MALA steps on every chain; returns pooled acceptance.
double pilot_acceptance(const Target& target, const MalaConfig& cfg, double step, std::uint64_t seed) {
  long accepted = 0, total = 0;
  const int chains = std::min(cfg.n_chains, 8);
  for (int c = 0; c < chains; ++c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    MalaState st = MalaState::at(target, mcmc_initial_state(target, cfg, rng));
    // short warm-up so the pilot measures acceptance near typical states
    for (int i = 0; i < cfg.tune_steps; ++i) mala_step(target, st, step, rng);
    for (int i = 0; i < cfg.tune_steps; ++i) {
      accepted += mala_step(target, st, step, rng) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(accepted) / static_cast<double>(total);
}

}  // namespace

double tune_step_size(const Target& target, const MalaConfig& cfg) {
  double lo = std::log(1e-7), hi = std::log(10.0);
  const std::uint64_t seed = derive_seed(cfg.seed, streams::kMcmc, 0xfeedULL);
  for (int it = 0; it < 14; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double acc = pilot_acceptance(target, cfg, std::exp(mid), seed);
    if (acc > 0.5) lo = mid;
    else hi = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

ChainResult run_chains(const Target& target, const MalaConfig& cfg) {
  cfg.validate();
  ChainResult res;
  res.step_size = cfg.tune ? tune_step_size(target, cfg) : cfg.step_size;
  const long kept = (cfg.n_steps - cfg.burn_in + cfg.thinning - 1) / cfg.thinning;
  std::vector<Mat> per_chain(static_cast<std::size_t>(cfg.n_chains));
  res.acceptance.assign(static_cast<std::size_t>(cfg.n_chains), 0.0);
  parallel_for(static_cast<std::size_t>(cfg.n_chains), cfg.workers, [&](std::size_t c) {
    Rng rng(derive_seed(cfg.seed, streams::kMcmc, c));
    MalaState st = MalaState::at(target, mcmc_initial_state(target, cfg, rng));
    Mat out(target.dim(), kept);
    long acc = 0, col = 0;
    for (long s = 0; s < cfg.n_steps; ++s) {
      acc += mala_step(target, st, res.step_size, rng) ? 1 : 0;
      if (s >= cfg.burn_in && (s - cfg.burn_in) % cfg.thinning == 0) out.col(col++) = st.x;
    }
    per_chain[c] = std::move(out);
    res.acceptance[c] = static_cast<double>(acc) / static_cast<double>(cfg.n_steps);
  });
  res.samples.resize(target.dim(), kept * cfg.n_chains);
  for (int c = 0; c < cfg.n_chains; ++c) {
    res.samples.middleCols(c * kept, kept) = per_chain[static_cast<std::size_t>(c)];
    const double a = res.acceptance[static_cast<std::size_t>(c)];
    if (a < 0.2 || a > 0.8) {
      std::ostringstream msg;
      msg << "chain " << c << " acceptance " << a << " outside [0.2, 0.8]";
      res.warnings.push_back(msg.str());
    }
  }
  return res;
}

}  // namespace dem
