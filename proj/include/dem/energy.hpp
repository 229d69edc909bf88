#pragma once

#include "dem/common.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dem {

struct ParticleShape {
  int n_particles = 0;
  int space_dim = 0;
};

using VecRef = Eigen::Ref<const Vec>;
using VecOut = Eigen::Ref<Vec>;

/// An unnormalized Boltzmann density exp(-E(x)) over R^dim.
///
/// Implementations are immutable after construction; every method is safe to
/// call concurrently. Optional analytic facilities (convolved score, exact
/// sampler, log partition function) are reported through the has_* queries.
class Target {
 public:
  virtual ~Target() = default;

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }
  const std::optional<ParticleShape>& particles() const { return particles_; }
  bool is_particle_system() const { return particles_.has_value(); }

  /// Evaluates E(x) and, when grad is non-null, its gradient. Returns false
  /// (leaving outputs unspecified) when x lies outside the energy domain.
  virtual bool try_eval(const VecRef& x, double& energy, Vec* grad) const = 0;

  double energy(const VecRef& x) const;
  Vec grad(const VecRef& x) const;
  double energy_grad(const VecRef& x, Vec& grad) const;

  virtual bool has_convolved_score() const { return false; }
  /// grad log (p * N(0, sigma^2 I))(x), the exact noised score.
  virtual Vec convolved_score(const VecRef& x, double sigma) const;

  virtual bool has_exact_sampler() const { return false; }
  virtual Mat sample_exact(std::size_t n, Rng& rng) const;

  /// log of the normalizer of exp(-E), when known in closed form.
  virtual std::optional<double> log_partition() const { return std::nullopt; }

 protected:
  Target(std::string name, int dim, std::optional<ParticleShape> particles = std::nullopt);

 private:
  std::string name_;
  int dim_;
  std::optional<ParticleShape> particles_;
};

using TargetPtr = std::shared_ptr<const Target>;

// ---------------------------------------------------------------------------
// Gaussian oracle E(x) = |x|^2 / 2.

class GaussianOracle final : public Target {
 public:
  explicit GaussianOracle(int dim);
  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;
  bool has_convolved_score() const override { return true; }
  Vec convolved_score(const VecRef& x, double sigma) const override;
  bool has_exact_sampler() const override { return true; }
  Mat sample_exact(std::size_t n, Rng& rng) const override;
  std::optional<double> log_partition() const override;
};

// ---------------------------------------------------------------------------
// Gaussian mixture with isotropic shared covariance.

struct GmmSpec {
  Mat means;                 // 2 x n_components
  Vec log_weights;           // unnormalized; softmax gives the mixture weights
  double variance = 40.0;    // per-axis component variance

  int n_components() const { return static_cast<int>(means.cols()); }
  Vec weights() const;

  /// 40 means uniform on [-40, 40]^2 drawn from the given seed, uniform weights.
  static GmmSpec standard(std::uint64_t seed = 0);
  /// Reads a whitespace-separated table of rows "mx my".
  static GmmSpec from_table(const std::string& path);
};

class GmmTarget final : public Target {
 public:
  explicit GmmTarget(GmmSpec spec);
  const GmmSpec& spec() const { return spec_; }

  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;
  bool has_convolved_score() const override { return true; }
  Vec convolved_score(const VecRef& x, double sigma) const override;
  bool has_exact_sampler() const override { return true; }
  Mat sample_exact(std::size_t n, Rng& rng) const override;
  std::optional<double> log_partition() const override { return 0.0; }

 private:
  // log of the normalized mixture density with per-axis variance var.
  double log_density(const VecRef& x, double var, Vec* grad) const;
  GmmSpec spec_;
  Vec log_w_;  // normalized log weights
};

// ---------------------------------------------------------------------------
// Double-well pair potential.

struct DoubleWellSpec {
  double a = 0.0;
  double b = -4.0;
  double c = 0.9;
  double d0 = 4.0;
  double tau = 1.0;
  int n_particles = 4;
  int space_dim = 2;

  /// Pair term f(d) = a(d-d0) + b(d-d0)^2 + c(d-d0)^4 and its derivative.
  double pair(double d, double* dfdd = nullptr) const;
};

class DoubleWellTarget final : public Target {
 public:
  explicit DoubleWellTarget(DoubleWellSpec spec = {});
  const DoubleWellSpec& spec() const { return spec_; }
  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;

 private:
  DoubleWellSpec spec_;
};

// ---------------------------------------------------------------------------
// Lennard-Jones cluster with a harmonic restraint to the center of mass.

struct LennardJonesSpec {
  double r_m = 1.0;
  double tau = 1.0;
  double epsilon = 1.0;
  double osc_scale = 0.5;
  int n_particles = 13;
  int space_dim = 3;
  double distance_floor = 1e-4;

  /// Repulsive-convention pair term (r_m/d)^12 - 2 (r_m/d)^6 (unscaled).
  double pair(double d, double* dfdd = nullptr) const;
};

class LennardJonesTarget final : public Target {
 public:
  explicit LennardJonesTarget(LennardJonesSpec spec = {});
  const LennardJonesSpec& spec() const { return spec_; }
  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;

  /// Split evaluation used by tests: pairwise part and harmonic part.
  double lj_part(const VecRef& x) const;
  double osc_part(const VecRef& x) const;

 private:
  LennardJonesSpec spec_;
};

// ---------------------------------------------------------------------------
// Input normalization: E_scaled(x) = E(scale * x).

class ScaledTarget final : public Target {
 public:
  ScaledTarget(TargetPtr base, double scale);
  double scale() const { return scale_; }
  const Target& base() const { return *base_; }

  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;
  bool has_convolved_score() const override { return base_->has_convolved_score(); }
  Vec convolved_score(const VecRef& x, double sigma) const override;
  bool has_exact_sampler() const override { return base_->has_exact_sampler(); }
  Mat sample_exact(std::size_t n, Rng& rng) const override;
  std::optional<double> log_partition() const override;

 private:
  TargetPtr base_;
  double scale_;
};

/// Energy shifted by a constant; the Boltzmann density is unchanged up to Z.
class ShiftedTarget final : public Target {
 public:
  ShiftedTarget(TargetPtr base, double shift);
  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;
  // the noised score does not see the constant
  bool has_convolved_score() const override { return base_->has_convolved_score(); }
  Vec convolved_score(const VecRef& x, double sigma) const override { return base_->convolved_score(x, sigma); }

 private:
  TargetPtr base_;
  double shift_;
};

/// E(x) = c everywhere.
class ConstantTarget final : public Target {
 public:
  ConstantTarget(int dim, double value);
  bool try_eval(const VecRef& x, double& energy, Vec* grad) const override;

 private:
  double value_;
};

TargetPtr gaussian_oracle(int dim);

/// Unordered pairwise distances of a flattened particle configuration.
std::vector<double> pairwise_distances(const VecRef& x, const ParticleShape& shape);

}  // namespace dem
