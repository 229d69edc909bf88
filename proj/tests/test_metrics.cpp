#include "doctest.h"
#include "support.hpp"

#include "dem/metrics.hpp"
#include "dem/sde.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>

using namespace dem;

namespace {

// Minimum over all permutations of the mean matched squared distance.
double w2_bruteforce(const Mat& a, const Mat& b) {
  std::vector<int> p(static_cast<std::size_t>(a.cols()));
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (a.col(static_cast<Eigen::Index>(i)) - b.col(p[i])).squaredNorm();
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return std::sqrt(best / static_cast<double>(a.cols()));
}

Mat random_points(int d, int n, double scale, Rng& rng) {
  return Mat::NullaryExpr(d, n, [&] { return scale * rng.normal(); });
}

Mat shuffled(const Mat& a, Rng& rng) {
  std::vector<Eigen::Index> p(static_cast<std::size_t>(a.cols()));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng.engine());
  Mat out(a.rows(), a.cols());
  for (std::size_t j = 0; j < p.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = a.col(p[j]);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("W2 of a set against a permutation of itself is zero") {
  Rng rng(1);
  const Mat a = random_points(3, 50, 1.0, rng);
  CHECK(wasserstein2(a, shuffled(a, rng)) == 0.0);
}

TEST_CASE("W2 of one-dimensional translated sets") {
  Mat a(1, 3), b(1, 3);
  for (double c : {0.0, 0.7, -2.5}) {
    a << 0, 1, 2;
    b << 2 + c, c, 1 + c;
    CHECK(wasserstein2(a, b) == doctest::Approx(std::abs(c)).epsilon(1e-12));
  }
}

TEST_CASE("W2 equals the exhaustive permutation oracle") {
  Rng rng(2);
  for (int n : {1, 2, 3, 4, 5, 6}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Mat a = random_points(2, n, 1.0, rng), b = random_points(2, n, 1.5, rng);
      CHECK(std::abs(wasserstein2(a, b) - w2_bruteforce(a, b)) <= 1e-10);
    }
  }
}

TEST_CASE("assignment solver returns a permutation with the reported cost") {
  Rng rng(3);
  const Mat cost = Mat::NullaryExpr(7, 7, [&] { return rng.uniform(); });
  double total = 0.0;
  const auto asg = solve_assignment(cost, &total);
  std::vector<int> sorted = asg;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 7; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  double s = 0.0;
  for (int i = 0; i < 7; ++i) s += cost(i, asg[static_cast<std::size_t>(i)]);
  CHECK(s == doctest::Approx(total).epsilon(1e-14));
}

TEST_CASE("W2 metric properties") {
  Rng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const Mat a = random_points(2, 12, 1.0, rng), b = random_points(2, 12, 2.0, rng), c = random_points(2, 12, 0.5, rng);
    const double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
    CHECK(ab >= 0.0);
    CHECK(std::abs(ab - ba) <= 1e-12);
    CHECK(ab > 0.0);
    CHECK(ab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-9);
  }
}

TEST_CASE("W2 size checks") {
  try {
    wasserstein2(Mat::Zero(2, 3), Mat::Zero(2, 4));
    FAIL("expected SizeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::SizeMismatch);
  }
  CHECK_THROWS_AS(wasserstein2(Mat::Zero(2, 3), Mat::Zero(3, 3)), Error);
  CHECK_THROWS_AS(wasserstein2(Mat::Zero(1, 2001), Mat::Zero(1, 2001)), Error);
}

TEST_CASE("grid TV endpoints and a hand-built case") {
  Rng rng(5);
  const Mat a = random_points(2, 500, 10.0, rng);
  CHECK(tv_grid(a, a, 200, {-50, 50}) == 0.0);
  CHECK(tv_grid(a, shuffled(a, rng), 200, {-50, 50}) == 0.0);
  const Mat far = a.array() + 200.0;
  Mat b = a;
  b.row(0).array() += 45.0;
  b = b.cwiseMin(49.0).cwiseMax(-49.0);
  Mat left(2, 3), right(2, 3);
  left << -40, -30, -20, 0, 0, 0;
  right << 20, 30, 40, 0, 0, 0;
  CHECK(tv_grid(left, right, 200, {-50, 50}) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(tv_grid(a, far, 200, {-50, 50}) == doctest::Approx(1.0));

  // two cells of mass 1/2 against the other two
  Mat p(2, 2), q(2, 2);
  p << 0.25, 0.25, 0.25, 0.75;
  q << 0.75, 0.75, 0.25, 0.75;
  CHECK(tv_grid(p, q, 2, {0, 1}) == doctest::Approx(1.0));
  Mat r(2, 2);
  r << 0.25, 0.75, 0.25, 0.25;
  CHECK(tv_grid(p, r, 2, {0, 1}) == doctest::Approx(0.5));

  const double v = tv_grid(a, b, 50, {-50, 50});
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
}

TEST_CASE("grid TV rejects higher dimensions") {
  try {
    tv_grid(Mat::Zero(3, 4), Mat::Zero(3, 4), 10, {0, 1});
    FAIL("expected DimensionTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DimensionTooLarge);
  }
}

TEST_CASE("interatomic TV") {
  Rng rng(6);
  const ParticleShape sh{4, 2};
  const Mat a = random_points(8, 300, 2.0, rng);
  CHECK(tv_interatomic(a, a, sh, 50, {0, 8}) == 0.0);
  CHECK(tv_interatomic(a, shuffled(a, rng), sh, 50, {0, 8}) == 0.0);
  const double v = tv_interatomic(a, 2.0 * a, sh, 50, {0, 40});
  CHECK(v > 0.0);
  CHECK(v <= 1.0);
  CHECK_THROWS_AS(tv_interatomic(a, a, {13, 3}, 50, {0, 8}), Error);
}

TEST_CASE("interatomic TV matches the 1-D histogram kernel") {
  // two particles on a line: the only pair distance is |x1 - x2|
  Rng rng(7);
  const ParticleShape sh{2, 1};
  const Mat a = random_points(2, 400, 1.0, rng), b = random_points(2, 300, 1.3, rng);
  std::vector<double> da, db;
  for (Eigen::Index j = 0; j < a.cols(); ++j) da.push_back(std::abs(a(0, j) - a(1, j)));
  for (Eigen::Index j = 0; j < b.cols(); ++j) db.push_back(std::abs(b(0, j) - b(1, j)));
  CHECK(tv_interatomic(a, b, sh, 30, {0, 4}) == tv_histogram_1d(da, db, 30, {0, 4}));

  // and the 2-D grid reduces to the same kernel when every point shares one y cell
  Mat ga(2, a.cols()), gb(2, b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) ga.col(j) << da[static_cast<std::size_t>(j)], 0.1;
  for (Eigen::Index j = 0; j < b.cols(); ++j) gb.col(j) << db[static_cast<std::size_t>(j)], 0.1;
  CHECK(tv_grid(ga, gb, 30, {0, 4}) == doctest::Approx(tv_histogram_1d(da, db, 30, {0, 4})).epsilon(1e-14));
}

TEST_CASE("1-D TV keeps out-of-range mass") {
  CHECK(tv_histogram_1d({0.5}, {5.0}, 10, {0, 1}) == 1.0);
  CHECK(tv_histogram_1d({5.0, 6.0}, {-3.0}, 10, {0, 1}) == 0.0);
  CHECK_THROWS_AS(tv_histogram_1d({}, {1.0}, 10, {0, 1}), Error);
  CHECK_THROWS_AS(tv_histogram_1d({1.0}, {1.0}, 0, {0, 1}), Error);
}

TEST_CASE("normalized ESS closed forms") {
  CHECK(ess_normalized(std::vector<double>(10, -3.0)) == doctest::Approx(1.0));
  std::vector<double> one(8, 0.0);
  one[3] = 50.0;
  CHECK(ess_normalized(one) == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
  std::vector<double> two = {50.0, 50.0, 0.0, 0.0};
  CHECK(ess_normalized(two) == doctest::Approx(0.5).epsilon(1e-12));
  std::vector<double> two8(8, 0.0);
  two8[0] = two8[5] = 60.0;
  CHECK(ess_normalized(two8) == doctest::Approx(2.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("ESS is shift invariant and bounded") {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> lw(30);
    for (auto& v : lw) v = 3.0 * rng.normal();
    const double e = ess_normalized(lw);
    CHECK(e > 0.0);
    CHECK(e <= 1.0);
    for (auto& v : lw) v += 123.0;
    CHECK(ess_normalized(lw) == doctest::Approx(e).epsilon(1e-12));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    ess_normalized({nan, nan});
    FAIL("expected AllNonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AllNonFinite);
  }
}

TEST_CASE("log Z lower bound") {
  auto t = gaussian_oracle(2);
  Rng rng(9);
  const Mat x = random_points(2, 5, 1.0, rng);
  std::vector<double> lq(5);
  for (int j = 0; j < 5; ++j) lq[static_cast<std::size_t>(j)] = -std::log(2 * std::numbers::pi) - 0.5 * x.col(j).squaredNorm();
  const LogZEstimate z = log_z_lower(*t, x, lq);
  CHECK(z.value == doctest::Approx(std::log(2 * std::numbers::pi)));
  CHECK(z.n_used == 5);

  std::vector<double> shifted = lq;
  for (auto& v : shifted) v += 0.75;
  CHECK(log_z_lower(*t, x, shifted).value == doctest::Approx(z.value - 0.75).epsilon(1e-14));

  const LogZEstimate one = log_z_lower(*t, x.leftCols(1), {0.3});
  CHECK(one.value == doctest::Approx(-t->energy(x.col(0)) - 0.3));

  std::vector<double> bad = lq;
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  const LogZEstimate d = log_z_lower(*t, x, bad);
  CHECK(d.n_dropped == 1);
  CHECK(d.n_used == 4);
  CHECK_THROWS_AS(log_z_lower(*t, x, {1.0}), Error);
}

TEST_CASE("log Z with the probability-flow density of the exact sampler") {
  const auto sched = NoiseSchedule::geometric(1e-3, 20.0);
  auto t = gaussian_oracle(2);
  Rng rng(10);
  const Mat x = random_points(2, 200, 1.0, rng);
  const Vec lq = logdensity_pf_ode_batch(sched, analytic_score_field(sched, t), x, 100);
  const LogZEstimate z = log_z_lower(*t, x, std::vector<double>(lq.data(), lq.data() + lq.size()));
  CHECK(std::abs(z.value - std::log(2 * std::numbers::pi)) <= 0.05);
}

TEST_CASE("log Z on the normalized GMM with the exact model density") {
  GmmTarget t(GmmSpec::standard(0));
  Rng rng(11);
  const Mat x = t.sample_exact(10000, rng);
  std::vector<double> lq(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) lq[static_cast<std::size_t>(j)] = -t.energy(x.col(j));
  CHECK(log_z_lower(t, x, lq).value <= 0.05);
}

TEST_CASE("mode recall") {
  const GmmSpec s = GmmSpec::standard(0);
  CHECK(mode_recall(s.means, s.means, 1.0) == 1.0);
  CHECK(mode_recall(s.means, Mat(2, 0), 1.0) == 0.0);
  Mat half = s.means.leftCols(20).array() + 0.1;
  CHECK(mode_recall(s.means, half, 0.5) == doctest::Approx(0.5));
  CHECK_THROWS_AS(mode_recall(s.means, half, 0.0), Error);
}

}  // TEST_SUITE
