#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <functional>
#include <cmath>

#include <Eigen/Dense>

namespace mmspec {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class ErrorCode {
  NonProbabilityMeasure,
  MetricViolation,
  DuplicateId,
  SpaceMismatch,
  InvalidParameter,
  SolverFailure,
  IllPosed,
  OutsideDomain,
  InvarianceBroken,
  NoConvergence,
  NotOrthonormal,
  InvalidK,
  NotQuadratic,
  DimensionMismatch,
  EmptySet,
  NormCollapse,
  Unbounded,
  IoError,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonProbabilityMeasure: return "NonProbabilityMeasure";
    case ErrorCode::MetricViolation: return "MetricViolation";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::SpaceMismatch: return "SpaceMismatch";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::IllPosed: return "IllPosed";
    case ErrorCode::OutsideDomain: return "OutsideDomain";
    case ErrorCode::InvarianceBroken: return "InvarianceBroken";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NotOrthonormal: return "NotOrthonormal";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::NotQuadratic: return "NotQuadratic";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::NormCollapse: return "NormCollapse";
    case ErrorCode::Unbounded: return "Unbounded";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

/// Deterministic RNG. mt19937_64 is fully specified by the standard and the
/// distribution transforms below are hand-rolled, so a seed determines every
/// stochastic choice bit for bit, independent of platform and thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  /// Independent child stream; used to give each multistart its own RNG.
  Rng fork(std::uint64_t stream) const { return Rng(seed_mix(seed_, stream)); }

  double uniform() {  // [0, 1)
    return (engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t bits() { return engine_(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  double normal() {
    // Box-Muller, one value per call (the spare is dropped to keep state simple).
    double a = uniform(), b = uniform();
    if (a < 1e-300) a = 1e-300;
    return std::sqrt(-2.0 * std::log(a)) * std::cos(6.283185307179586476925286766559 * b);
  }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

 private:
  static std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the pair
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
};

/// Runs fn(i) for i in [0, n). Work items must be independent; results are
/// written into caller-owned slots so the outcome does not depend on `jobs`.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned jobs = 0) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  if (jobs == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  unsigned used = static_cast<unsigned>(std::min<std::size_t>(jobs, n));
  pool.reserve(used);
  for (unsigned t = 0; t < used; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

/// FNV-1a over a canonical string; embedded in output files so runs can be
/// matched to the exact configuration that produced them.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace mmspec
