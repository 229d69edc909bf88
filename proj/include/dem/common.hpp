#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dem {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error categories shared by the core and the C API. The C API maps these
// one-to-one onto dem_status values.
enum class Errc {
  InvalidArgument = 1,
  Domain,
  DistanceFloor,
  NonFiniteState,
  NonFiniteLoss,
  AllSamplesInvalid,
  ShapeMismatch,
  SizeMismatch,
  DimensionTooLarge,
  EmptyBuffer,
  AllNonFinite,
  Config,
  Io,
  TrainingAborted,
  ChainsOutOfWindow,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream split: every random stream in a run is derive_seed(run_seed, stream, index).
// Streams never share state, so results do not depend on evaluation order or worker count.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(base) ^ (stream * 0xd6e8feb86659fd93ULL)) ^ (index + 0x632be59bd9b4e019ULL));
}

// Well-known stream ids.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kPopulate = 2;
inline constexpr std::uint64_t kInner = 3;
inline constexpr std::uint64_t kSample = 4;
inline constexpr std::uint64_t kMcmc = 5;
inline constexpr std::uint64_t kEval = 6;
inline constexpr std::uint64_t kAblate = 7;
inline constexpr std::uint64_t kGmmMeans = 8;
}  // namespace streams

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <typename Derived>
  void fill_normal(Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal();
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

}  // namespace dem
