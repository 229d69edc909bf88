#include "dem/estimator.hpp"

#include "dem/symmetry.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace dem {

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::LogSumExp: return "logsumexp";
    case EstimatorKind::Ratio: return "ratio";
    case EstimatorKind::Jensen: return "jensen";
  }
  return "?";
}

Mat draw_estimator_noise(const Target& target, int k, Rng& rng) {
  if (k < 1) throw Error(Errc::InvalidArgument, "estimator needs k >= 1");
  Mat eps(target.dim(), k);
  rng.fill_normal(eps);
  if (target.particles()) project_mean_free_columns(eps, *target.particles());
  return eps;
}

namespace {

ScoreEstimate lse_estimate(const Target& target, const VecRef& x_t, double sigma, const Mat& eps) {
  const int d = target.dim();
  const auto k = eps.cols();
  ScoreEstimate est;
  est.k = static_cast<int>(k);
  // Online log-sum-exp: acc holds sum_i exp(-E_i - m) grad E_i for the running max m.
  double m = -std::numeric_limits<double>::infinity();
  double wsum = 0.0, wmax = 0.0;
  Vec acc = Vec::Zero(d), x(d), g(d);
  for (Eigen::Index i = 0; i < k; ++i) {
    x = x_t + sigma * eps.col(i);
    double e = 0.0;
    if (!target.try_eval(x, e, &g) || !std::isfinite(e) || !g.allFinite()) continue;
    ++est.n_valid;
    const double lw = -e;
    if (lw > m) {
      const double r = std::exp(m - lw);
      acc *= r;
      wsum *= r;
      wmax *= r;
      m = lw;
    }
    const double w = std::exp(lw - m);
    acc += w * g;
    wsum += w;
    wmax = std::max(wmax, w);
  }
  if (est.n_valid == 0) throw Error(Errc::AllSamplesInvalid, "every perturbed sample left the energy domain");
  est.value = -acc / wsum;
  est.max_weight = wmax / wsum;
  est.finite = est.value.allFinite();
  est.pre_clip_norm = est.value.norm();
  return est;
}

ScoreEstimate ratio_estimate(const Target& target, const VecRef& x_t, double sigma, const Mat& eps) {
  const int d = target.dim();
  const auto k = eps.cols();
  ScoreEstimate est;
  est.k = static_cast<int>(k);
  double den = 0.0;
  Vec num = Vec::Zero(d), x(d), g(d);
  for (Eigen::Index i = 0; i < k; ++i) {
    x = x_t + sigma * eps.col(i);
    double e = 0.0;
    if (!target.try_eval(x, e, &g)) continue;
    ++est.n_valid;
    const double w = std::exp(-e);
    num -= w * g;  // grad exp(-E) = -exp(-E) grad E
    den += w;
  }
  const double kk = static_cast<double>(k);
  est.value = (num / kk) / (den / kk);
  est.finite = est.value.allFinite();
  est.pre_clip_norm = est.value.norm();
  return est;
}

ScoreEstimate jensen_estimate(const Target& target, const VecRef& x_t, double sigma, const Mat& eps) {
  const int d = target.dim();
  const auto k = eps.cols();
  ScoreEstimate est;
  est.k = static_cast<int>(k);
  Vec acc = Vec::Zero(d), x(d);
  for (Eigen::Index i = 0; i < k; ++i) {
    x = x_t + sigma * eps.col(i);
    double e = 0.0;
    if (!target.try_eval(x, e, nullptr)) e = std::numeric_limits<double>::infinity();
    else ++est.n_valid;
    acc += e * (sigma * eps.col(i));
  }
  est.value = -acc / (sigma * sigma * static_cast<double>(k));
  est.finite = est.value.allFinite();
  est.pre_clip_norm = est.value.norm();
  return est;
}

}  // namespace

ScoreEstimate estimate_score_from_noise(const Target& target, const VecRef& x_t, double sigma, const Mat& eps,
                                        EstimatorKind kind) {
  if (x_t.size() != target.dim() || eps.rows() != target.dim())
    throw Error(Errc::ShapeMismatch, "estimator input dimension does not match the target");
  if (eps.cols() < 1) throw Error(Errc::InvalidArgument, "estimator needs k >= 1");
  switch (kind) {
    case EstimatorKind::LogSumExp: return lse_estimate(target, x_t, sigma, eps);
    case EstimatorKind::Ratio: return ratio_estimate(target, x_t, sigma, eps);
    case EstimatorKind::Jensen: return jensen_estimate(target, x_t, sigma, eps);
  }
  throw Error(Errc::InvalidArgument, "unknown estimator kind");
}

ScoreEstimate estimate_score_at_sigma(const Target& target, const VecRef& x_t, double sigma, int k, Rng& rng,
                                      EstimatorKind kind, std::optional<double> clip) {
  const Mat eps = draw_estimator_noise(target, k, rng);
  ScoreEstimate est = estimate_score_from_noise(target, x_t, sigma, eps, kind);
  if (clip) apply_clip(est, *clip);
  return est;
}

ScoreEstimate estimate_score_logsumexp(const Target& target, const VecRef& x_t, double t, int k,
                                       const NoiseSchedule& sched, Rng& rng, std::optional<double> clip) {
  return estimate_score_at_sigma(target, x_t, sched.sigma(t), k, rng, EstimatorKind::LogSumExp, clip);
}

ScoreEstimate estimate_score_ratio(const Target& target, const VecRef& x_t, double t, int k,
                                   const NoiseSchedule& sched, Rng& rng) {
  return estimate_score_at_sigma(target, x_t, sched.sigma(t), k, rng, EstimatorKind::Ratio);
}

ScoreEstimate estimate_score_jensen(const Target& target, const VecRef& x_t, double t, int k,
                                    const NoiseSchedule& sched, Rng& rng) {
  return estimate_score_at_sigma(target, x_t, sched.sigma(t), k, rng, EstimatorKind::Jensen);
}

Vec clip_norm(const VecRef& v, double max_norm, bool* clipped) {
  if (!(max_norm > 0)) throw Error(Errc::InvalidArgument, "clip norm must be positive");
  const double n = v.norm();
  if (clipped) *clipped = n > max_norm;
  if (n <= max_norm) return v;
  return v * (max_norm / n);
}

void apply_clip(ScoreEstimate& est, double max_norm) {
  est.value = clip_norm(est.value, max_norm, &est.clipped);
}

std::vector<SweepRow> bias_mse_sweep_sigma(const Target& target, const Mat& points, const std::vector<double>& sigmas,
                                           const std::vector<int>& k_list, int n_repeats, std::uint64_t seed,
                                           EstimatorKind kind) {
  if (!target.has_convolved_score())
    throw Error(Errc::InvalidArgument, "bias sweep needs a target with an exact noised score");
  if (n_repeats < 1) throw Error(Errc::InvalidArgument, "bias sweep needs n_repeats >= 1");
  std::vector<SweepRow> rows;
  for (Eigen::Index p = 0; p < points.cols(); ++p) {
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
      const double sigma = sigmas[si];
      const Vec truth = target.convolved_score(points.col(p), sigma);
      for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
        SweepRow row;
        row.dim = target.dim();
        row.sigma = sigma;
        row.t = sigma;
        row.k = k_list[ki];
        row.point = static_cast<int>(p);
        row.n_repeats = n_repeats;
        Vec mean = Vec::Zero(target.dim());
        double sq = 0.0;
        int ok = 0;
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p) * 1000003ULL + si * 1009ULL + ki));
        for (int r = 0; r < n_repeats; ++r) {
          ScoreEstimate est;
          try {
            est = estimate_score_at_sigma(target, points.col(p), sigma, k_list[ki], rng, kind);
          } catch (const Error& e) {
            if (e.code() != Errc::AllSamplesInvalid) throw;
            est.finite = false;
          }
          if (!est.finite) {
            ++row.n_nonfinite;
            continue;
          }
          ++ok;
          mean += est.value;
          sq += (est.value - truth).squaredNorm();
        }
        if (ok == 0) {
          row.bias_sq = row.mse = row.cosine = std::numeric_limits<double>::quiet_NaN();
        } else {
          mean /= ok;
          row.bias_sq = (mean - truth).squaredNorm();
          row.mse = sq / ok;
          const double denom = mean.norm() * truth.norm();
          row.cosine = denom > 0 ? mean.dot(truth) / denom : 1.0;
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::vector<SweepRow> bias_mse_sweep(const Target& target, const Mat& points, const std::vector<double>& t_grid,
                                     const NoiseSchedule& sched, const std::vector<int>& k_list, int n_repeats,
                                     std::uint64_t seed, EstimatorKind kind) {
  std::vector<double> sigmas;
  for (double t : t_grid) sigmas.push_back(sched.sigma(t));
  auto rows = bias_mse_sweep_sigma(target, points, sigmas, k_list, n_repeats, seed, kind);
  const std::size_t per_point = t_grid.size() * k_list.size();
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].t = t_grid[(i % per_point) / k_list.size()];
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "dim,t,k,bias_sq,mse,cosine,n_repeats\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.dim << ',' << r.t << ',' << r.k << ',' << r.bias_sq << ',' << r.mse << ',' << r.cosine << ','
        << r.n_repeats << '\n';
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::InvalidArgument, "slope needs >= 2 matched points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace dem
