#pragma once

#include "dem/energy.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace dem {

enum class ScheduleKind { Geometric, Linear };

/// Variance-exploding noise schedule on t in [0, 1]; t = 0 is the target and
/// t = 1 the prior. A linear schedule may start at sigma_min = 0.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::Geometric;
  double sigma_min = 1e-5;
  double sigma_max = 1.0;

  static NoiseSchedule geometric(double sigma_min, double sigma_max);
  static NoiseSchedule linear(double sigma_min, double sigma_max);

  void validate() const;
  double sigma(double t) const;
  /// d sigma^2 / dt.
  double g2(double t) const;
  double g(double t) const;
};

struct IntegratorConfig {
  int n_steps = 100;
  double diffusion_scale = 1.0;
};

/// Batched score field: columns of xs are points, all at the same time t.
using ScoreField = std::function<Mat(const Mat& xs, double t)>;

/// Standard normal noise of the right flavour for the target (mean-free for particles).
Vec standard_noise(int dim, const std::optional<ParticleShape>& particles, Rng& rng);

Vec forward_perturb(const NoiseSchedule& sched, const VecRef& x0, double t, Rng& rng,
                    const std::optional<ParticleShape>& particles = std::nullopt);

/// n draws (as columns) from N(0, sigma_max^2 I), mean-free for particle targets.
Mat prior_sample(const NoiseSchedule& sched, int dim, std::size_t n, Rng& rng,
                 const std::optional<ParticleShape>& particles = std::nullopt);

struct ReverseResult {
  Mat x;                        // final states, one column per trajectory
  std::vector<char> finite;     // per-trajectory flag; diverged columns hold NaN
  std::vector<Mat> trajectory;  // optional: state after each step (L+1 entries incl. start)
  std::size_t n_diverged() const;
};

/// Euler-Maruyama for the VE reverse SDE from t = 1 to t = 0 on a uniform
/// grid: x <- x + g^2(t) s(x,t) dt + diffusion_scale g(t) sqrt(dt) eps.
/// Column j draws its noise from Rng(derive_seed(seed, j)).
ReverseResult integrate_reverse_batch(const NoiseSchedule& sched, const IntegratorConfig& cfg, const ScoreField& score,
                                      const Mat& x1, std::uint64_t seed,
                                      const std::optional<ParticleShape>& particles = std::nullopt,
                                      bool record_trajectory = false);

/// Single trajectory; throws NonFiniteState on divergence.
Vec integrate_reverse(const NoiseSchedule& sched, const IntegratorConfig& cfg, const ScoreField& score,
                      const VecRef& x1, std::uint64_t seed,
                      const std::optional<ParticleShape>& particles = std::nullopt);

/// Explicit Euler on the probability-flow ODE dx = -1/2 g^2 s dt, run from t=1
/// down to t=0 with L uniform steps.
Mat pf_ode_reverse_euler(const NoiseSchedule& sched, const ScoreField& score, const Mat& x1, int n_steps);

inline constexpr int kPfOdeMaxDim = 16;

/// log p_0(x) of the sampler defined by `score`: RK4 on the augmented
/// probability-flow ODE from t=0 to t=1, divergence by central differences
/// (step 1e-4), closed with the N(0, sigma_max^2) prior density. Particle
/// systems use the mean-free subspace dimension for the prior term.
Vec logdensity_pf_ode_batch(const NoiseSchedule& sched, const ScoreField& score, const Mat& xs, int n_steps,
                            const std::optional<ParticleShape>& particles = std::nullopt);
double logdensity_pf_ode(const NoiseSchedule& sched, const ScoreField& score, const VecRef& x, int n_steps,
                         const std::optional<ParticleShape>& particles = std::nullopt);

/// Score field of a target's analytic convolved score.
ScoreField analytic_score_field(const NoiseSchedule& sched, TargetPtr target);

}  // namespace dem
