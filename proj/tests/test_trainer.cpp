#include "doctest.h"
#include "support.hpp"

#include "dem/trainer.hpp"

#include <map>

using namespace dem;

namespace {

ArchSpec small_mlp(int dim) {
  ArchSpec a;
  a.type = ArchType::Mlp;
  a.dim = dim;
  a.hidden = 32;
  a.layers = 2;
  a.emb_pairs = 8;
  return a;
}

ArchSpec small_egnn(int n, int s) {
  ArchSpec a;
  a.type = ArchType::Egnn;
  a.n_particles = n;
  a.space_dim = s;
  a.dim = n * s;
  a.hidden = 8;
  a.layers = 2;
  a.emb_pairs = 4;
  return a;
}

TrainConfig gaussian_cfg() {
  TrainConfig c;
  c.mode = TrainMode::Pdem;
  c.batch_size = 32;
  c.inner_steps = 5;
  c.outer_loops = 2;
  c.k = 100;
  c.clip = 20.0;
  c.lr = 1e-3;
  c.schedule = NoiseSchedule::geometric(0.01, 2.0);
  c.integrator.n_steps = 20;
  c.buffer_capacity = 1000;
  c.seed = 5;
  return c;
}

std::vector<double> losses_of(Trainer& tr) {
  std::vector<double> out;
  tr.train([&](const StepRecord& r) { out.push_back(r.loss); });
  return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("replay buffer is a bounded FIFO") {
  ReplayBuffer buf(1, 2);
  Mat pts(1, 3);
  pts << 1.0, 2.0, 3.0;
  buf.push(pts);
  REQUIRE(buf.size() == 2);
  CHECK(buf.at(0)(0) == 2.0);
  CHECK(buf.at(1)(0) == 3.0);
  buf.push(Mat(1, 0));
  CHECK(buf.size() == 2);
  CHECK(buf.at(0)(0) == 2.0);

  ReplayBuffer b2(2, 5);
  std::size_t pushed = 0;
  Rng rng(1);
  for (int n : {0, 2, 1, 3, 4}) {
    b2.push(Mat::NullaryExpr(2, n, [&] { return rng.normal(); }));
    pushed += static_cast<std::size_t>(n);
    CHECK(b2.size() == std::min<std::size_t>(pushed, 5));
  }
  CHECK_THROWS_AS(b2.push(Mat::Zero(3, 1)), Error);
  try {
    b2.push_point(Vec::Zero(1));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ShapeMismatch);
  }
}

TEST_CASE("replay buffer eviction order over many pushes") {
  ReplayBuffer buf(1, 4);
  for (int i = 0; i < 11; ++i) buf.push_point(Vec::Constant(1, i));
  for (std::size_t i = 0; i < 4; ++i) CHECK(buf.at(i)(0) == 7.0 + static_cast<double>(i));
  buf.erase({1, 1, 3});
  REQUIRE(buf.size() == 2);
  CHECK(buf.at(0)(0) == 7.0);
  CHECK(buf.at(1)(0) == 9.0);
}

TEST_CASE("replay buffer sampling") {
  Rng rng(2);
  ReplayBuffer one(2, 3);
  Vec p(2);
  p << 4.0, -1.0;
  one.push_point(p);
  const Mat s = one.sample(50, rng);
  for (Eigen::Index j = 0; j < s.cols(); ++j) CHECK(s.col(j) == p);

  ReplayBuffer ten(1, 10);
  for (int i = 0; i < 10; ++i) ten.push_point(Vec::Constant(1, i));
  const int n = 100000;
  std::vector<std::size_t> idx;
  const Mat d = ten.sample(n, rng, &idx);
  std::vector<int> counts(10, 0);
  for (Eigen::Index j = 0; j < d.cols(); ++j) ++counts[static_cast<std::size_t>(d(0, j))];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 10.0) * (c - n / 10.0) / (n / 10.0);
  CHECK(chi2 < 21.666);  // chi-square, 9 degrees of freedom, 0.01 level
  for (std::size_t j = 0; j < idx.size(); ++j) CHECK(static_cast<double>(idx[j]) == d(0, static_cast<Eigen::Index>(j)));

  ReplayBuffer empty(2, 3);
  try {
    empty.sample(1, rng);
    FAIL("expected EmptyBuffer");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyBuffer);
  }
}

TEST_CASE("pDEM population pushes mean-free prior draws") {
  TrainConfig cfg = gaussian_cfg();
  cfg.schedule = NoiseSchedule::geometric(1e-5, 1.0);
  auto target = std::make_shared<DoubleWellTarget>();
  auto net = ScoreNet::create(small_egnn(4, 2), 1);
  ReplayBuffer buf(8, 100);
  const PopulateStats st = outer_loop_populate(cfg, *net, target, buf, 3);
  CHECK(st.pushed == 32);
  CHECK(st.dropped == 0);
  for (std::size_t i = 0; i < buf.size(); ++i) CHECK(center_of_mass(buf.at(i), {4, 2}).norm() <= 1e-12);
}

TEST_CASE("iDEM population with the untrained network is prior plus reverse noise") {
  TrainConfig cfg = gaussian_cfg();
  cfg.mode = TrainMode::Idem;
  cfg.populate_size = 20000;
  cfg.integrator.n_steps = 100;
  cfg.schedule = NoiseSchedule::geometric(0.01, 2.0);
  auto target = gaussian_oracle(2);
  auto net = ScoreNet::create(small_mlp(2), 1);
  const Vec before = net->params();
  ReplayBuffer buf(2, 20000);
  outer_loop_populate(cfg, *net, target, buf, 4);
  CHECK(net->params() == before);  // sampling never touches the parameters
  const Mat x = buf.contents();
  const double sd = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  // zero drift: N(0, sigma_max^2) plus independent noise of variance sigma_max^2 - sigma_min^2
  const double expected = std::sqrt(2.0 * 4.0 - 1e-4);
  MESSAGE("bridge std " << sd << " vs " << expected);
  CHECK(std::abs(sd - expected) <= 0.1 * expected);
}

TEST_CASE("inner step with the target forced to the network output") {
  auto target = gaussian_oracle(2);
  auto net = ScoreNet::create(small_mlp(2), 2);
  Rng rng(3);
  for (auto& p : net->params()) p = 0.2 * rng.normal();
  Trainer tr(gaussian_cfg(), target, std::move(net));
  tr.populate(0);
  tr.set_target_override([](const ScoreNet& n, const Mat& xt, const Vec& ts) { return n.forward(xt, ts); });
  const Vec before = tr.net().params();
  const StepRecord r = tr.inner_step();
  CHECK(r.loss == 0.0);
  CHECK_FALSE(r.skipped);
  CHECK(tr.net().params() == before);
  CHECK(tr.optimizer().step == 1);
}

TEST_CASE("inner step on an empty buffer") {
  Trainer tr(gaussian_cfg(), gaussian_oracle(2), ScoreNet::create(small_mlp(2), 2));
  CHECK_THROWS_AS(tr.inner_step(), Error);
}

TEST_CASE("estimator-driven training reduces the score error on the gaussian oracle") {
  TrainConfig cfg = gaussian_cfg();
  cfg.batch_size = 64;
  cfg.inner_steps = 50;
  cfg.outer_loops = 10;  // 500 inner steps
  cfg.k = 500;
  cfg.lr = 3e-3;
  auto target = gaussian_oracle(2);
  Trainer tr(cfg, target, ScoreNet::create(small_mlp(2), 6));

  auto probe_error = [&] {
    double e = 0.0;
    int n = 0;
    for (double t : {0.2, 0.5, 0.8}) {
      const double s = cfg.schedule.sigma(t);
      for (double u = -2.0; u <= 2.01; u += 1.0)
        for (double v = -2.0; v <= 2.01; v += 1.0) {
          Mat x(2, 1);
          x << u, v;
          e += (tr.net().forward(x, t).col(0) - target->convolved_score(x.col(0), s)).squaredNorm();
          ++n;
        }
    }
    return e / n;
  };
  const double e0 = probe_error();
  std::vector<double> losses;
  tr.train([&](const StepRecord& r) {
    CHECK(r.loss >= 0.0);
    losses.push_back(r.loss);
  });
  CHECK(losses.size() == 500);
  const double e1 = probe_error();
  MESSAGE("probe mse " << e0 << " -> " << e1);
  CHECK(e1 <= 0.5 * e0);
}

TEST_CASE("same seed gives the same loss sequence") {
  auto target = gaussian_oracle(2);
  Trainer a(gaussian_cfg(), target, ScoreNet::create(small_mlp(2), 7));
  Trainer b(gaussian_cfg(), target, ScoreNet::create(small_mlp(2), 7));
  const auto la = losses_of(a), lb = losses_of(b);
  CHECK(la == lb);
  TrainConfig other = gaussian_cfg();
  other.seed = 6;
  Trainer c(other, target, ScoreNet::create(small_mlp(2), 7));
  CHECK(losses_of(c) != la);
}

TEST_CASE("worker count does not change the result") {
  auto target = std::make_shared<DoubleWellTarget>();
  TrainConfig cfg = gaussian_cfg();
  cfg.mode = TrainMode::Idem;
  cfg.batch_size = 16;
  cfg.k = 32;
  cfg.schedule = NoiseSchedule::geometric(1e-3, 3.0);
  Trainer a(cfg, target, ScoreNet::create(small_egnn(4, 2), 8));
  cfg.workers = 3;
  Trainer b(cfg, target, ScoreNet::create(small_egnn(4, 2), 8));
  CHECK(losses_of(a) == losses_of(b));
  CHECK(a.net().params() == b.net().params());
}

TEST_CASE("particle buffers stay mean-free through training") {
  auto target = std::make_shared<DoubleWellTarget>();
  TrainConfig cfg = gaussian_cfg();
  cfg.mode = TrainMode::Idem;
  cfg.batch_size = 16;
  cfg.k = 32;
  cfg.schedule = NoiseSchedule::geometric(1e-3, 3.0);
  Trainer tr(cfg, target, ScoreNet::create(small_egnn(4, 2), 9));
  tr.train();
  const Mat c = tr.buffer().contents();
  for (Eigen::Index j = 0; j < c.cols(); ++j) CHECK(center_of_mass(c.col(j), {4, 2}).norm() <= 1e-10);
}

TEST_CASE("zero outer loops runs pure inner training on a seeded buffer") {
  TrainConfig cfg = gaussian_cfg();
  cfg.outer_loops = 0;
  cfg.inner_steps = 7;
  Trainer tr(cfg, gaussian_oracle(2), ScoreNet::create(small_mlp(2), 10));
  Rng rng(11);
  tr.buffer().push(Mat::NullaryExpr(2, 50, [&] { return rng.normal(); }));
  const auto l = losses_of(tr);
  CHECK(l.size() == 7);
  CHECK(tr.global_step() == 7);
  CHECK(tr.outer_done() == 0);
}

TEST_CASE("resume reproduces the uninterrupted loss sequence") {
  auto target = std::make_shared<DoubleWellTarget>();
  TrainConfig cfg = gaussian_cfg();
  cfg.mode = TrainMode::Idem;
  cfg.batch_size = 16;
  cfg.k = 32;
  cfg.outer_loops = 4;
  cfg.inner_steps = 3;
  cfg.schedule = NoiseSchedule::geometric(1e-3, 3.0);

  Trainer full(cfg, target, ScoreNet::create(small_egnn(4, 2), 12));
  const auto expected = losses_of(full);

  TrainConfig half = cfg;
  half.outer_loops = 2;
  Trainer first(half, target, ScoreNet::create(small_egnn(4, 2), 12));
  auto got = losses_of(first);

  // what a checkpoint carries: parameters, optimizer, counters and buffer
  auto net = ScoreNet::create_uninitialized(first.net().arch());
  net->params() = first.net().params();
  Trainer second(cfg, target, std::move(net));
  second.restore(first.optimizer(), first.counters());
  second.buffer().push(first.buffer().contents());
  const auto rest = losses_of(second);
  got.insert(got.end(), rest.begin(), rest.end());
  CHECK(got == expected);
  CHECK(second.net().params() == full.net().params());
}

TEST_CASE("a diverging sampler aborts training") {
  TrainConfig cfg = gaussian_cfg();
  cfg.mode = TrainMode::Idem;
  cfg.outer_loops = 10;
  auto net = ScoreNet::create(small_mlp(2), 13);
  net->params().setConstant(std::numeric_limits<double>::quiet_NaN());
  Trainer tr(cfg, gaussian_oracle(2), std::move(net));
  int outers = 0;
  try {
    tr.train({}, [&](const Trainer&) { ++outers; });
    FAIL("expected TrainingAborted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TrainingAborted);
  }
  CHECK(outers == 2);  // the third bad outer loop aborts before its inner steps
  CHECK(tr.drop_count() >= 3u * 32u);
}

TEST_CASE("invalid train configs") {
  TrainConfig cfg = gaussian_cfg();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = gaussian_cfg();
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = gaussian_cfg();
  CHECK_THROWS_AS(Trainer(cfg, gaussian_oracle(3), ScoreNet::create(small_mlp(2), 1)), Error);
}

}  // TEST_SUITE
