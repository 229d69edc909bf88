#pragma once

#include "dem/energy.hpp"
#include "dem/sde.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace dem {

enum class EstimatorKind { LogSumExp, Ratio, Jensen };

const char* to_string(EstimatorKind kind);

/// K-sample Monte Carlo estimate of the noised score grad log p_t(x_t).
struct ScoreEstimate {
  Vec value;
  int k = 0;
  bool clipped = false;
  double pre_clip_norm = 0.0;
  double max_weight = 0.0;  // largest self-normalized weight (log-sum-exp only)
  bool finite = true;
  int n_valid = 0;          // perturbed samples inside the energy domain
};

/// dim x k standard normal draws, mean-free projected for particle targets.
Mat draw_estimator_noise(const Target& target, int k, Rng& rng);

/// Core estimator on pre-drawn noise: samples are x_t + sigma * eps_i.
///  LogSumExp: -sum_i softmax(-E)_i grad E_i, weights computed in log space.
///  Ratio:     mean(grad exp(-E)) / mean(exp(-E)) in raw scale, non-finite kept.
///  Jensen:    -(1/sigma^2) mean(E_i (x_i - x_t)), gradient free.
/// Throws AllSamplesInvalid (LogSumExp only) when no sample is in the domain.
ScoreEstimate estimate_score_from_noise(const Target& target, const VecRef& x_t, double sigma, const Mat& eps,
                                        EstimatorKind kind);

ScoreEstimate estimate_score_logsumexp(const Target& target, const VecRef& x_t, double t, int k,
                                       const NoiseSchedule& sched, Rng& rng, std::optional<double> clip = std::nullopt);
ScoreEstimate estimate_score_ratio(const Target& target, const VecRef& x_t, double t, int k,
                                   const NoiseSchedule& sched, Rng& rng);
ScoreEstimate estimate_score_jensen(const Target& target, const VecRef& x_t, double t, int k,
                                    const NoiseSchedule& sched, Rng& rng);

/// Same estimators addressed by noise level directly.
ScoreEstimate estimate_score_at_sigma(const Target& target, const VecRef& x_t, double sigma, int k, Rng& rng,
                                      EstimatorKind kind = EstimatorKind::LogSumExp,
                                      std::optional<double> clip = std::nullopt);

Vec clip_norm(const VecRef& v, double max_norm, bool* clipped = nullptr);
void apply_clip(ScoreEstimate& est, double max_norm);

struct SweepRow {
  int dim = 0;
  double t = 0.0;
  double sigma = 0.0;
  int k = 0;
  int point = 0;
  double bias_sq = 0.0;
  double mse = 0.0;
  double cosine = 0.0;
  int n_repeats = 0;
  int n_nonfinite = 0;
};

/// Bias^2, MSE and cosine similarity of the estimator mean against the exact
/// noised score, over n_repeats independent estimates per (point, sigma, K).
/// Non-finite estimates are counted and excluded from the moments.
std::vector<SweepRow> bias_mse_sweep_sigma(const Target& target, const Mat& points, const std::vector<double>& sigmas,
                                           const std::vector<int>& k_list, int n_repeats, std::uint64_t seed,
                                           EstimatorKind kind = EstimatorKind::LogSumExp);

std::vector<SweepRow> bias_mse_sweep(const Target& target, const Mat& points, const std::vector<double>& t_grid,
                                     const NoiseSchedule& sched, const std::vector<int>& k_list, int n_repeats,
                                     std::uint64_t seed, EstimatorKind kind = EstimatorKind::LogSumExp);

/// CSV with header dim,t,k,bias_sq,mse,cosine,n_repeats.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace dem
