#include "dem/trainer.hpp"

#include "dem/estimator.hpp"
#include "dem/parallel.hpp"
#include "dem/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace dem {

ReplayBuffer::ReplayBuffer(int dim, std::size_t capacity) : dim_(dim), capacity_(capacity) {
  if (dim < 1 || capacity < 1) throw Error(Errc::InvalidArgument, "buffer needs dim >= 1 and capacity >= 1");
  storage_.resize(dim, static_cast<Eigen::Index>(capacity));
}

void ReplayBuffer::push_point(const VecRef& point) {
  if (point.size() != dim_) throw Error(Errc::ShapeMismatch, "buffer point dimension mismatch");
  const std::size_t slot = (head_ + size_) % capacity_;
  storage_.col(static_cast<Eigen::Index>(slot)) = point;
  if (size_ < capacity_) ++size_;
  else head_ = (head_ + 1) % capacity_;
}

void ReplayBuffer::push(const Mat& points) {
  if (points.cols() > 0 && points.rows() != dim_) throw Error(Errc::ShapeMismatch, "buffer point dimension mismatch");
  for (Eigen::Index j = 0; j < points.cols(); ++j) push_point(points.col(j));
}

Vec ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw Error(Errc::InvalidArgument, "buffer index out of range");
  return storage_.col(static_cast<Eigen::Index>((head_ + i) % capacity_));
}

Mat ReplayBuffer::sample(std::size_t n, Rng& rng, std::vector<std::size_t>* indices) const {
  if (size_ == 0) throw Error(Errc::EmptyBuffer, "cannot sample from an empty buffer");
  Mat out(dim_, static_cast<Eigen::Index>(n));
  if (indices) indices->resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = rng.below(size_);
    if (indices) (*indices)[j] = i;
    out.col(static_cast<Eigen::Index>(j)) = storage_.col(static_cast<Eigen::Index>((head_ + i) % capacity_));
  }
  return out;
}

void ReplayBuffer::erase(std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  if (positions.empty()) return;
  Mat keep = contents();
  const std::size_t old = size_;
  head_ = 0;
  size_ = 0;
  std::size_t p = 0;
  for (std::size_t i = 0; i < old; ++i) {
    if (p < positions.size() && positions[p] == i) {
      ++p;
      continue;
    }
    push_point(keep.col(static_cast<Eigen::Index>(i)));
  }
}

Mat ReplayBuffer::contents() const {
  Mat out(dim_, static_cast<Eigen::Index>(size_));
  for (std::size_t i = 0; i < size_; ++i)
    out.col(static_cast<Eigen::Index>(i)) = storage_.col(static_cast<Eigen::Index>((head_ + i) % capacity_));
  return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1 || inner_steps < 1 || outer_loops < 0 || k < 1 || populate_size < 0)
    throw Error(Errc::Config, "train counts must be positive");
  if (!(lr > 0)) throw Error(Errc::Config, "learning rate must be positive");
  if (buffer_capacity < 1) throw Error(Errc::Config, "buffer capacity must be positive");
  if (integrator.n_steps < 1) throw Error(Errc::Config, "sde.steps must be positive");
  if (!(integrator.diffusion_scale >= 0)) throw Error(Errc::Config, "sde.diffusion_scale must be >= 0");
  schedule.validate();
}

PopulateStats outer_loop_populate(const TrainConfig& cfg, const ScoreNet& net, TargetPtr target,
                                  ReplayBuffer& buf, std::uint64_t stream_seed, bool force_prior) {
  PopulateStats st;
  const auto n = static_cast<std::size_t>(cfg.population());
  if (n == 0) return st;
  Rng rng(derive_seed(stream_seed, 0));
  const Mat x1 = prior_sample(cfg.schedule, target->dim(), n, rng, target->particles());
  if (cfg.mode == TrainMode::Pdem || force_prior) {
    buf.push(x1);
    st.pushed = n;
    return st;
  }
  const ReverseResult res = integrate_reverse_batch(cfg.schedule, cfg.integrator, pinned_field(net, target, cfg.t_pin),
                                                    x1, derive_seed(stream_seed, 1), target->particles());
  for (Eigen::Index j = 0; j < res.x.cols(); ++j) {
    if (res.finite[static_cast<std::size_t>(j)]) {
      buf.push_point(res.x.col(j));
      ++st.pushed;
    } else {
      ++st.dropped;
    }
  }
  return st;
}

Trainer::Trainer(TrainConfig cfg, TargetPtr target, std::unique_ptr<ScoreNet> net)
    : cfg_(std::move(cfg)),
      target_(std::move(target)),
      net_(std::move(net)),
      buffer_(target_->dim(), cfg_.buffer_capacity),
      opt_(AdamState::for_params(net_->n_params(), cfg_.lr)) {
  cfg_.validate();
  if (net_->arch().dim != target_->dim()) throw Error(Errc::ShapeMismatch, "network and target dimensions differ");
}

void Trainer::restore(AdamState opt, const Counters& c) {
  if (opt.m.size() != net_->n_params()) throw Error(Errc::ShapeMismatch, "optimizer state size mismatch");
  opt_ = std::move(opt);
  step_ = c.global_step;
  outer_done_ = c.outer_done;
  drops_ = c.drops;
  seeded_ = c.seeded;
  bad_outer_streak_ = c.bad_outer_streak;
  last_loss_ = c.last_loss;
}

PopulateStats Trainer::populate(long long outer_index) {
  const auto st = outer_loop_populate(cfg_, *net_, target_, buffer_,
                                      derive_seed(cfg_.seed, streams::kPopulate, static_cast<std::uint64_t>(outer_index)));
  drops_ += st.dropped;
  return st;
}

StepRecord Trainer::inner_step() {
  if (buffer_.empty()) throw Error(Errc::EmptyBuffer, "inner loop needs a non-empty buffer");
  const std::uint64_t step_seed = derive_seed(cfg_.seed, streams::kInner, static_cast<std::uint64_t>(step_));
  Rng rng(step_seed);
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  std::vector<std::size_t> idx;
  const Mat x0 = buffer_.sample(b, rng, &idx);
  Vec ts(static_cast<Eigen::Index>(b));
  for (std::size_t i = 0; i < b; ++i) {
    const double u = rng.uniform();
    ts(static_cast<Eigen::Index>(i)) = cfg_.stratified_t ? (static_cast<double>(i) + u) / static_cast<double>(b) : u;
  }

  const int dim = target_->dim();
  Mat xt(dim, static_cast<Eigen::Index>(b));
  Mat targets(dim, static_cast<Eigen::Index>(b));
  std::vector<char> keep(b, 1);
  std::vector<char> clipped(b, 0), flagged(b, 0);
  const bool use_override = static_cast<bool>(override_);

  parallel_for(b, cfg_.workers, [&](std::size_t i) {
    const auto col = static_cast<Eigen::Index>(i);
    Rng erng(derive_seed(step_seed, i + 1));
    const double t = ts(col);
    const double sigma = cfg_.schedule.sigma(t);
    xt.col(col) = x0.col(col) + sigma * standard_noise(dim, target_->particles(), erng);
    if (use_override) return;
    for (int attempt = 0;; ++attempt) {
      try {
        ScoreEstimate est = estimate_score_at_sigma(*target_, xt.col(col), sigma, cfg_.k, erng);
        if (cfg_.clip > 0) apply_clip(est, cfg_.clip);
        targets.col(col) = est.value;
        clipped[i] = est.clipped;
        flagged[i] = est.max_weight > 0.99;
        if (!est.finite) keep[i] = 0;
        return;
      } catch (const Error& e) {
        if (e.code() != Errc::AllSamplesInvalid) throw;
        if (attempt + 1 >= cfg_.max_invalid_retries) {
          keep[i] = 0;
          return;
        }
      }
    }
  });
  if (use_override) targets = override_(*net_, xt, ts);

  std::vector<std::size_t> dropped_positions;
  std::vector<Eigen::Index> cols;
  for (std::size_t i = 0; i < b; ++i) {
    if (keep[i]) cols.push_back(static_cast<Eigen::Index>(i));
    else dropped_positions.push_back(idx[i]);
  }

  StepRecord rec;
  rec.step = step_;
  rec.outer = outer_done_;
  for (std::size_t i = 0; i < b; ++i) {
    rec.clipped += clipped[i];
    rec.flagged += flagged[i];
  }

  if (!cols.empty()) {
    Mat xs(dim, static_cast<Eigen::Index>(cols.size())), tg(dim, static_cast<Eigen::Index>(cols.size()));
    Vec tk(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      xs.col(static_cast<Eigen::Index>(j)) = xt.col(cols[j]);
      tg.col(static_cast<Eigen::Index>(j)) = targets.col(cols[j]);
      tk(static_cast<Eigen::Index>(j)) = ts(cols[j]);
    }
    Vec grad;
    try {
      last_loss_ = dem_loss_and_grad_batch(*net_, xs, tk, tg, grad);
      opt_.update(net_->params(), grad);
    } catch (const Error& e) {
      if (e.code() != Errc::NonFiniteLoss) throw;
      rec.skipped = true;
    }
  } else {
    rec.skipped = true;
  }
  if (!dropped_positions.empty()) {
    drops_ += dropped_positions.size();
    buffer_.erase(dropped_positions);
  }
  rec.loss = last_loss_;
  rec.buffer_size = buffer_.size();
  rec.drop_count = drops_;
  ++step_;
  return rec;
}

void Trainer::train(const StepCallback& on_step, const OuterCallback& on_outer) {
  if (!seeded_) {
    outer_loop_populate(cfg_, *net_, target_, buffer_, derive_seed(cfg_.seed, streams::kPopulate, ~0ULL), true);
    seeded_ = true;
  }
  if (cfg_.outer_loops == 0) {
    // pure inner-loop training on whatever the buffer holds
    for (int s = 0; s < cfg_.inner_steps; ++s) {
      const StepRecord r = inner_step();
      if (on_step) on_step(r);
    }
    return;
  }
  for (long long o = outer_done_; o < cfg_.outer_loops; ++o) {
    const PopulateStats ps = populate(o);
    const double frac = ps.pushed + ps.dropped > 0
                            ? static_cast<double>(ps.dropped) / static_cast<double>(ps.pushed + ps.dropped)
                            : 0.0;
    bad_outer_streak_ = frac > cfg_.abort_drop_fraction ? bad_outer_streak_ + 1 : 0;
    if (bad_outer_streak_ >= cfg_.abort_patience)
      throw Error(Errc::TrainingAborted, "sampler diverged: more than half of the outer-loop samples were dropped in " +
                                             std::to_string(cfg_.abort_patience) + " consecutive outer loops");
    if (buffer_.empty()) throw Error(Errc::TrainingAborted, "buffer is empty after population");
    for (int s = 0; s < cfg_.inner_steps; ++s) {
      const StepRecord r = inner_step();
      if (on_step) on_step(r);
    }
    outer_done_ = o + 1;
    if (on_outer) on_outer(*this);
  }
}

}  // namespace dem
