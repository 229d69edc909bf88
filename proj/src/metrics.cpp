#include "dem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dem {

std::vector<int> solve_assignment(const Mat& cost, double* total_cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw Error(Errc::SizeMismatch, "assignment needs a square cost matrix");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials u (rows), v (cols); p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n));
  double total = 0.0;
  for (int j = 1; j <= n; ++j) {
    assignment[static_cast<std::size_t>(p[j] - 1)] = j - 1;
    total += cost(p[j] - 1, j - 1);
  }
  if (total_cost) *total_cost = total;
  return assignment;
}

double wasserstein2(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols() || a.rows() != b.rows())
    throw Error(Errc::SizeMismatch, "W2 needs equal-size sets of equal dimension");
  if (a.cols() > kW2MaxPoints) throw Error(Errc::SizeMismatch, "W2 is limited to 2000 points per set");
  const auto n = a.cols();
  if (n == 0) return 0.0;
  Mat cost(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) cost(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  double total = 0.0;
  solve_assignment(cost, &total);
  return std::sqrt(std::max(0.0, total / static_cast<double>(n)));
}

namespace {

// bins + 1 slots; the last one collects out-of-range and non-finite values.
std::vector<double> normalized_hist(const std::vector<double>& xs, int bins, HistRange r) {
  std::vector<double> h(static_cast<std::size_t>(bins) + 1, 0.0);
  const double w = (r.hi - r.lo) / bins;
  for (double x : xs) {
    std::size_t k = static_cast<std::size_t>(bins);
    if (std::isfinite(x) && x >= r.lo && x <= r.hi)
      k = std::min(static_cast<std::size_t>((x - r.lo) / w), static_cast<std::size_t>(bins - 1));
    h[k] += 1.0;
  }
  if (!xs.empty())
    for (auto& v : h) v /= static_cast<double>(xs.size());
  return h;
}

double half_l1(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

void check_hist_args(int bins, HistRange r) {
  if (bins < 1 || !(r.hi > r.lo)) throw Error(Errc::InvalidArgument, "histogram needs bins >= 1 and hi > lo");
}

}  // namespace

double tv_histogram_1d(const std::vector<double>& a, const std::vector<double>& b, int bins, HistRange range) {
  check_hist_args(bins, range);
  if (a.empty() || b.empty()) throw Error(Errc::SizeMismatch, "TV needs non-empty sample sets");
  return half_l1(normalized_hist(a, bins, range), normalized_hist(b, bins, range));
}

double tv_grid(const Mat& samples, const Mat& reference, int bins, HistRange range) {
  if (samples.rows() > 2 || reference.rows() > 2)
    throw Error(Errc::DimensionTooLarge, "grid TV is only defined for 2-D samples");
  if (samples.rows() != 2 || reference.rows() != 2) throw Error(Errc::ShapeMismatch, "grid TV needs 2-D samples");
  check_hist_args(bins, range);
  if (samples.cols() == 0 || reference.cols() == 0) throw Error(Errc::SizeMismatch, "TV needs non-empty sample sets");
  // flatten each point to one cell index; out-of-range maps to the overflow cell
  auto cells = [&](const Mat& pts) {
    std::vector<double> idx;
    idx.reserve(static_cast<std::size_t>(pts.cols()));
    const double w = (range.hi - range.lo) / bins;
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      const double x = pts(0, j), y = pts(1, j);
      if (!(std::isfinite(x) && std::isfinite(y) && x >= range.lo && x <= range.hi && y >= range.lo &&
            y <= range.hi)) {
        idx.push_back(-1.0);
        continue;
      }
      const int ix = std::min(static_cast<int>((x - range.lo) / w), bins - 1);
      const int iy = std::min(static_cast<int>((y - range.lo) / w), bins - 1);
      idx.push_back(static_cast<double>(ix * bins + iy) + 0.5);
    }
    return idx;
  };
  const int cells_total = bins * bins;
  return tv_histogram_1d(cells(samples), cells(reference), cells_total, HistRange{0.0, static_cast<double>(cells_total)});
}

double tv_interatomic(const Mat& samples, const Mat& reference, const ParticleShape& shape, int bins,
                      HistRange range) {
  const auto dim = static_cast<Eigen::Index>(shape.n_particles) * shape.space_dim;
  if (samples.rows() != dim || reference.rows() != dim)
    throw Error(Errc::ShapeMismatch, "interatomic TV needs particle-shaped samples");
  auto pooled = [&](const Mat& pts) {
    std::vector<double> d;
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      const auto pd = pairwise_distances(pts.col(j), shape);
      d.insert(d.end(), pd.begin(), pd.end());
    }
    return d;
  };
  return tv_histogram_1d(pooled(samples), pooled(reference), bins, range);
}

double ess_normalized(const std::vector<double>& log_weights) {
  if (log_weights.empty()) throw Error(Errc::InvalidArgument, "ESS needs at least one weight");
  double m = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights)
    if (std::isfinite(lw)) m = std::max(m, lw);
  if (!std::isfinite(m)) throw Error(Errc::AllNonFinite, "every log weight is non-finite");
  double s = 0.0, s2 = 0.0;
  for (double lw : log_weights) {
    if (!std::isfinite(lw)) continue;
    const double w = std::exp(lw - m);
    s += w;
    s2 += w * w;
  }
  // sum (w/s)^2 = s2 / s^2
  return (s * s) / (static_cast<double>(log_weights.size()) * s2);
}

LogZEstimate log_z_lower(const Target& target, const Mat& samples, const std::vector<double>& log_q) {
  if (static_cast<std::size_t>(samples.cols()) != log_q.size())
    throw Error(Errc::SizeMismatch, "log_q count differs from sample count");
  LogZEstimate out;
  double acc = 0.0;
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    double e = 0.0;
    const bool ok = samples.col(j).allFinite() && target.try_eval(samples.col(j), e, nullptr);
    const double term = -e - log_q[static_cast<std::size_t>(j)];
    if (!ok || !std::isfinite(term)) {
      ++out.n_dropped;
      continue;
    }
    acc += term;
    ++out.n_used;
  }
  out.value = out.n_used ? acc / static_cast<double>(out.n_used) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double mode_recall(const Mat& means, const Mat& samples, double radius) {
  if (!(radius > 0)) throw Error(Errc::InvalidArgument, "mode recall radius must be positive");
  if (means.cols() == 0) return 0.0;
  if (samples.cols() > 0 && samples.rows() != means.rows())
    throw Error(Errc::ShapeMismatch, "samples and means differ in dimension");
  const double r2 = radius * radius;
  int hit = 0;
  for (Eigen::Index k = 0; k < means.cols(); ++k) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
      if ((samples.col(j) - means.col(k)).squaredNorm() < r2) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(means.cols());
}

}  // namespace dem
