#pragma once

#include "dem/energy.hpp"
#include "dem/sde.hpp"

#include "json.hpp"

#include <memory>
#include <optional>
#include <string>

namespace dem {

enum class ArchType { Mlp, Egnn };

struct ArchSpec {
  ArchType type = ArchType::Mlp;
  int dim = 2;
  int hidden = 128;
  int layers = 3;          // MLP: hidden activations; EGNN: message-passing layers
  int emb_pairs = 64;      // sinusoidal frequency pairs per embedding
  double t_freq_max = 100.0;
  double x_freq_max = 30.0;
  int n_particles = 0;     // EGNN only
  int space_dim = 0;       // EGNN only
  double coord_range = 15.0;  // EGNN: bound on per-edge coordinate-update weights
  double out_range = 20.0;    // EGNN: bound on per-edge output weights

  nlohmann::json to_json() const;
  static ArchSpec from_json(const nlohmann::json& j);
};

/// Geometrically spaced angular frequencies from 1 to f_max.
Vec sinusoid_frequencies(int pairs, double f_max);

/// Parameterized score field s_theta(x, t) with hand-written reverse-mode
/// parameter gradients. Points are columns.
class ScoreNet {
 public:
  virtual ~ScoreNet() = default;

  const ArchSpec& arch() const { return arch_; }
  Vec& params() { return params_; }
  const Vec& params() const { return params_; }
  Eigen::Index n_params() const { return params_.size(); }

  virtual Mat forward(const Mat& xs, const Vec& ts) const = 0;
  Mat forward(const Mat& xs, double t) const;

  /// Mean over the batch of ||target - s_theta(x, t)||^2 and its parameter
  /// gradient (written to grad, resized to n_params()).
  virtual double loss_and_grad(const Mat& xs, const Vec& ts, const Mat& targets, Vec& grad) const = 0;

  /// Gradient-free view for sampling.
  ScoreField as_field() const;

  static std::unique_ptr<ScoreNet> create(const ArchSpec& arch, std::uint64_t init_seed);
  static std::unique_ptr<ScoreNet> create_uninitialized(const ArchSpec& arch);

 protected:
  explicit ScoreNet(ArchSpec arch) : arch_(std::move(arch)) {}
  ArchSpec arch_;
  Vec params_;
};

class MlpScoreNet;
class EgnnScoreNet;

/// Returns -grad E(x) for t < t_pin, else the network output.
Mat pinned_forward(const ScoreNet& net, const Target& target, const Mat& xs, double t, double t_pin);
/// Score field for sampling with optional pinning at small t.
ScoreField pinned_field(const ScoreNet& net, TargetPtr target, double t_pin);

/// Single-point DEM loss ||target - s_theta(x,t)||^2 and parameter gradient.
/// Throws NonFiniteLoss when the loss is not finite.
double dem_loss_and_grad(const ScoreNet& net, const VecRef& x_t, double t, const VecRef& target_score, Vec& grad);
double dem_loss_and_grad_batch(const ScoreNet& net, const Mat& xs, const Vec& ts, const Mat& targets, Vec& grad);

struct AdamState {
  Vec m;
  Vec v;
  long long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(Eigen::Index n, double lr);
  void update(Vec& params, const Vec& grad);
};

struct Checkpoint {
  std::unique_ptr<ScoreNet> net;
  nlohmann::json meta;             // caller metadata stored next to the architecture
  std::optional<AdamState> optimizer;
};

/// Self-describing file: one JSON header line, then little-endian f64 blocks
/// (params, and adam_m / adam_v when an optimizer state is given).
void save_checkpoint(const std::string& path, const ScoreNet& net, const nlohmann::json& meta,
                     const AdamState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dem
