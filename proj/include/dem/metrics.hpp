#pragma once

#include "dem/energy.hpp"

#include <optional>
#include <vector>

namespace dem {

/// Exact minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials, O(n^3)). Returns assignment[row] = col.
std::vector<int> solve_assignment(const Mat& cost, double* total_cost = nullptr);

/// Empirical W2 between equal-size point sets (columns), via exact assignment
/// on squared Euclidean costs.
double wasserstein2(const Mat& a, const Mat& b);
inline constexpr Eigen::Index kW2MaxPoints = 2000;

struct HistRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// 0.5 * L1 between the normalized histograms of two 1-D samples on a fixed
/// range. Mass outside the range is kept in one extra overflow bin so the
/// result stays in [0, 1].
double tv_histogram_1d(const std::vector<double>& a, const std::vector<double>& b, int bins, HistRange range);

/// Same on a bins x bins grid over range^2 (2-D samples only).
double tv_grid(const Mat& samples, const Mat& reference, int bins, HistRange range);

/// TV between pooled pairwise-distance distributions.
double tv_interatomic(const Mat& samples, const Mat& reference, const ParticleShape& shape, int bins, HistRange range);

/// 1 / (n sum w_i^2) for softmax-normalized log weights; non-finite entries get weight 0.
double ess_normalized(const std::vector<double>& log_weights);

struct LogZEstimate {
  double value = 0.0;
  std::size_t n_used = 0;
  std::size_t n_dropped = 0;
};

/// mean over samples of -E(x) - log q(x); non-finite terms are dropped and counted.
LogZEstimate log_z_lower(const Target& target, const Mat& samples, const std::vector<double>& log_q);

/// Fraction of mixture means with at least one sample within radius.
double mode_recall(const Mat& means, const Mat& samples, double radius);

}  // namespace dem
