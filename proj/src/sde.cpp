#include "dem/sde.hpp"

#include "dem/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dem {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::Domain, "time must lie in [0, 1]");
}

}  // namespace

NoiseSchedule NoiseSchedule::geometric(double sigma_min, double sigma_max) {
  NoiseSchedule s{ScheduleKind::Geometric, sigma_min, sigma_max};
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::linear(double sigma_min, double sigma_max) {
  NoiseSchedule s{ScheduleKind::Linear, sigma_min, sigma_max};
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  const bool min_ok = kind == ScheduleKind::Geometric ? sigma_min > 0.0 : sigma_min >= 0.0;
  if (!min_ok || !(sigma_max > sigma_min) || !std::isfinite(sigma_max))
    throw Error(Errc::InvalidArgument, "noise schedule needs 0 < sigma_min < sigma_max (linear allows sigma_min = 0)");
}

double NoiseSchedule::sigma(double t) const {
  check_time(t);
  if (kind == ScheduleKind::Geometric) return sigma_min * std::pow(sigma_max / sigma_min, t);
  return sigma_min + t * (sigma_max - sigma_min);
}

double NoiseSchedule::g2(double t) const {
  const double s = sigma(t);
  if (kind == ScheduleKind::Geometric) return 2.0 * std::log(sigma_max / sigma_min) * s * s;
  return 2.0 * s * (sigma_max - sigma_min);
}

double NoiseSchedule::g(double t) const { return std::sqrt(g2(t)); }

Vec standard_noise(int dim, const std::optional<ParticleShape>& particles, Rng& rng) {
  Vec eps(dim);
  rng.fill_normal(eps);
  if (particles) project_mean_free_inplace(eps, *particles);
  return eps;
}

Vec forward_perturb(const NoiseSchedule& sched, const VecRef& x0, double t, Rng& rng,
                    const std::optional<ParticleShape>& particles) {
  const double s = sched.sigma(t);
  return x0 + s * standard_noise(static_cast<int>(x0.size()), particles, rng);
}

Mat prior_sample(const NoiseSchedule& sched, int dim, std::size_t n, Rng& rng,
                 const std::optional<ParticleShape>& particles) {
  Mat out(dim, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) = sched.sigma_max * standard_noise(dim, particles, rng);
  return out;
}

std::size_t ReverseResult::n_diverged() const {
  return static_cast<std::size_t>(std::count(finite.begin(), finite.end(), 0));
}

ReverseResult integrate_reverse_batch(const NoiseSchedule& sched, const IntegratorConfig& cfg, const ScoreField& score,
                                      const Mat& x1, std::uint64_t seed,
                                      const std::optional<ParticleShape>& particles, bool record_trajectory) {
  if (cfg.n_steps < 1) throw Error(Errc::InvalidArgument, "integrator needs at least one step");
  if (cfg.diffusion_scale < 0) throw Error(Errc::InvalidArgument, "diffusion_scale must be non-negative");
  const auto n = x1.cols();
  const int dim = static_cast<int>(x1.rows());
  ReverseResult res;
  res.x = x1;
  res.finite.assign(static_cast<std::size_t>(n), 1);
  for (Eigen::Index j = 0; j < n; ++j)
    if (!x1.col(j).allFinite()) res.finite[static_cast<std::size_t>(j)] = 0;

  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(j)));

  const double dt = 1.0 / cfg.n_steps;
  if (record_trajectory) res.trajectory.push_back(res.x);
  Mat live = res.x;
  for (int step = 0; step < cfg.n_steps; ++step) {
    const double t = 1.0 - step * dt;
    const double g2 = sched.g2(t);
    const double noise = cfg.diffusion_scale * std::sqrt(g2 * dt);
    // diverged columns are parked at zero so they cannot poison batched evaluation
    for (Eigen::Index j = 0; j < n; ++j)
      if (!res.finite[static_cast<std::size_t>(j)]) live.col(j).setZero();
    const Mat s = score(live, t);
    for (Eigen::Index j = 0; j < n; ++j) {
      auto& ok = res.finite[static_cast<std::size_t>(j)];
      if (!ok) continue;
      Vec next = live.col(j) + (g2 * dt) * s.col(j);
      if (noise > 0.0) next += noise * standard_noise(dim, particles, rngs[static_cast<std::size_t>(j)]);
      if (particles) project_mean_free_inplace(next, *particles);
      if (!next.allFinite()) {
        ok = 0;
        continue;
      }
      live.col(j) = next;
    }
    if (record_trajectory) res.trajectory.push_back(live);
  }
  res.x = live;
  for (Eigen::Index j = 0; j < n; ++j)
    if (!res.finite[static_cast<std::size_t>(j)]) res.x.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
  return res;
}

Vec integrate_reverse(const NoiseSchedule& sched, const IntegratorConfig& cfg, const ScoreField& score,
                      const VecRef& x1, std::uint64_t seed, const std::optional<ParticleShape>& particles) {
  const Mat start = x1;
  ReverseResult r = integrate_reverse_batch(sched, cfg, score, start, seed, particles);
  if (!r.finite[0]) throw Error(Errc::NonFiniteState, "reverse SDE diverged");
  return r.x.col(0);
}

Mat pf_ode_reverse_euler(const NoiseSchedule& sched, const ScoreField& score, const Mat& x1, int n_steps) {
  if (n_steps < 1) throw Error(Errc::InvalidArgument, "integrator needs at least one step");
  Mat x = x1;
  const double dt = 1.0 / n_steps;
  for (int step = 0; step < n_steps; ++step) {
    const double t = 1.0 - step * dt;
    x += (0.5 * sched.g2(t) * dt) * score(x, t);
  }
  return x;
}

namespace {

constexpr double kDivStep = 1e-4;

// Drift f = -1/2 g^2 s and its divergence, for every column of xs.
void drift_and_div(const NoiseSchedule& sched, const ScoreField& score, const Mat& xs, double t, Mat& drift,
                   Vec& div) {
  const auto d = xs.rows(), b = xs.cols();
  Mat probe(d, b * (1 + 2 * d));
  for (Eigen::Index j = 0; j < b; ++j) {
    const Eigen::Index base = j * (1 + 2 * d);
    probe.col(base) = xs.col(j);
    for (Eigen::Index i = 0; i < d; ++i) {
      probe.col(base + 1 + 2 * i) = xs.col(j);
      probe(i, base + 1 + 2 * i) += kDivStep;
      probe.col(base + 2 + 2 * i) = xs.col(j);
      probe(i, base + 2 + 2 * i) -= kDivStep;
    }
  }
  const Mat s = score(probe, t);
  const double c = -0.5 * sched.g2(t);
  drift.resize(d, b);
  div.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const Eigen::Index base = j * (1 + 2 * d);
    drift.col(j) = c * s.col(base);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) acc += s(i, base + 1 + 2 * i) - s(i, base + 2 + 2 * i);
    div(j) = c * acc / (2.0 * kDivStep);
  }
}

}  // namespace

Vec logdensity_pf_ode_batch(const NoiseSchedule& sched, const ScoreField& score, const Mat& xs, int n_steps,
                            const std::optional<ParticleShape>& particles) {
  if (xs.rows() > kPfOdeMaxDim)
    throw Error(Errc::DimensionTooLarge, "probability-flow log-density is limited to dim <= 16");
  if (n_steps < 1) throw Error(Errc::InvalidArgument, "integrator needs at least one step");
  const auto b = xs.cols();
  Mat x = xs;
  Vec acc = Vec::Zero(b);
  const double h = 1.0 / n_steps;
  Mat k1, k2, k3, k4;
  Vec l1, l2, l3, l4;
  for (int step = 0; step < n_steps; ++step) {
    const double t = step * h;
    drift_and_div(sched, score, x, t, k1, l1);
    drift_and_div(sched, score, x + 0.5 * h * k1, t + 0.5 * h, k2, l2);
    drift_and_div(sched, score, x + 0.5 * h * k2, t + 0.5 * h, k3, l3);
    drift_and_div(sched, score, x + h * k3, std::min(1.0, t + h), k4, l4);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    acc += (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
  }
  const double var = sched.sigma_max * sched.sigma_max;
  double d_eff = static_cast<double>(xs.rows());
  if (particles) d_eff = static_cast<double>((particles->n_particles - 1) * particles->space_dim);
  Vec out(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const double prior = -0.5 * d_eff * std::log(2.0 * std::numbers::pi * var) - x.col(j).squaredNorm() / (2.0 * var);
    out(j) = prior + acc(j);
    if (!std::isfinite(out(j))) out(j) = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

double logdensity_pf_ode(const NoiseSchedule& sched, const ScoreField& score, const VecRef& x, int n_steps,
                         const std::optional<ParticleShape>& particles) {
  const Mat xs = x;
  const double v = logdensity_pf_ode_batch(sched, score, xs, n_steps, particles)(0);
  if (!std::isfinite(v)) throw Error(Errc::NonFiniteState, "probability-flow ODE diverged");
  return v;
}

ScoreField analytic_score_field(const NoiseSchedule& sched, TargetPtr target) {
  return [sched, target](const Mat& xs, double t) {
    const double s = sched.sigma(t);
    Mat out(xs.rows(), xs.cols());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) out.col(j) = target->convolved_score(xs.col(j), s);
    return out;
  };
}

}  // namespace dem
