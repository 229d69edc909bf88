#pragma once

#include "dem/energy.hpp"
#include "dem/network.hpp"
#include "dem/sde.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace dem {

/// Bounded FIFO of points; eviction is oldest-first, sampling uniform with replacement.
class ReplayBuffer {
 public:
  ReplayBuffer(int dim, std::size_t capacity);

  int dim() const { return dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  /// Appends the columns of `points`, evicting the oldest beyond capacity.
  void push(const Mat& points);
  void push_point(const VecRef& point);
  /// i-th oldest stored point.
  Vec at(std::size_t i) const;
  /// n uniform draws with replacement (as columns); also returns the drawn indices.
  Mat sample(std::size_t n, Rng& rng, std::vector<std::size_t>* indices = nullptr) const;
  /// Removes the given positions (oldest-first numbering), keeping FIFO order.
  void erase(std::vector<std::size_t> positions);
  /// All points oldest-first.
  Mat contents() const;

 private:
  int dim_;
  std::size_t capacity_;
  Mat storage_;
  std::size_t head_ = 0;  // index of the oldest point
  std::size_t size_ = 0;
};

enum class TrainMode { Idem, Pdem };

struct TrainConfig {
  TrainMode mode = TrainMode::Idem;
  int batch_size = 256;
  int populate_size = 0;  // prior draws per outer loop; 0 means batch_size
  int inner_steps = 10;
  int outer_loops = 100;
  int k = 500;
  double clip = 70.0;     // <= 0 disables clipping
  double lr = 5e-4;
  NoiseSchedule schedule = NoiseSchedule::geometric(1e-5, 1.0);
  IntegratorConfig integrator;
  std::size_t buffer_capacity = 10000;
  double t_pin = 0.0;
  bool stratified_t = false;
  int max_invalid_retries = 5;
  double abort_drop_fraction = 0.5;
  int abort_patience = 3;
  std::uint64_t seed = 0;
  int workers = 1;

  int population() const { return populate_size > 0 ? populate_size : batch_size; }
  void validate() const;
};

struct PopulateStats {
  std::size_t pushed = 0;
  std::size_t dropped = 0;
};

struct StepRecord {
  long long step = 0;
  long long outer = 0;
  double loss = 0.0;
  std::size_t buffer_size = 0;
  std::size_t drop_count = 0;  // cumulative: diverged outer samples + dropped buffer points
  int clipped = 0;
  int flagged = 0;             // estimates whose dominant weight exceeds 0.99
  bool skipped = false;        // non-finite loss, no update
};

/// Fills the buffer for outer loop `outer`: iDEM integrates the reverse SDE
/// from prior draws with a read-only network; pDEM pushes the prior draws.
PopulateStats outer_loop_populate(const TrainConfig& cfg, const ScoreNet& net, TargetPtr target,
                                  ReplayBuffer& buf, std::uint64_t stream_seed, bool force_prior = false);

using TargetOverride = std::function<Mat(const ScoreNet& net, const Mat& xt, const Vec& ts)>;

class Trainer {
 public:
  Trainer(TrainConfig cfg, TargetPtr target, std::unique_ptr<ScoreNet> net);

  const TrainConfig& config() const { return cfg_; }
  const Target& target() const { return *target_; }
  TargetPtr target_ptr() const { return target_; }
  const ScoreNet& net() const { return *net_; }
  ScoreNet& net() { return *net_; }
  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  AdamState& optimizer() { return opt_; }
  long long global_step() const { return step_; }
  long long outer_done() const { return outer_done_; }
  std::size_t drop_count() const { return drops_; }

  /// Test hook replacing the estimator targets.
  void set_target_override(TargetOverride fn) { override_ = std::move(fn); }

  /// Everything besides parameters, optimizer and buffer that a resumed run needs.
  struct Counters {
    long long global_step = 0;
    long long outer_done = 0;
    std::size_t drops = 0;
    bool seeded = false;
    int bad_outer_streak = 0;
    double last_loss = 0.0;
  };
  Counters counters() const { return {step_, outer_done_, drops_, seeded_, bad_outer_streak_, last_loss_}; }
  /// Restores optimizer state and counters after loading a checkpoint.
  void restore(AdamState opt, const Counters& c);

  PopulateStats populate(long long outer_index);
  /// One inner-loop update (estimator targets, DEM loss, Adam step).
  StepRecord inner_step();

  using StepCallback = std::function<void(const StepRecord&)>;
  using OuterCallback = std::function<void(const Trainer&)>;
  /// Runs the remaining outer loops. Throws TrainingAborted when the sampler diverges.
  void train(const StepCallback& on_step = {}, const OuterCallback& on_outer = {});

 private:
  TrainConfig cfg_;
  TargetPtr target_;
  std::unique_ptr<ScoreNet> net_;
  ReplayBuffer buffer_;
  AdamState opt_;
  TargetOverride override_;
  long long step_ = 0;
  long long outer_done_ = 0;
  std::size_t drops_ = 0;
  bool seeded_ = false;
  double last_loss_ = 0.0;
  int bad_outer_streak_ = 0;
};

}  // namespace dem
