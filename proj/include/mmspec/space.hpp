#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mmspec/common.hpp"

namespace mmspec {

/// Tolerance for the probability and metric invariants. Inputs failing by
/// more are rejected rather than repaired, so generator bugs stay visible.
inline constexpr double kSpaceTol = 1e-12;

struct RawSpace {
  std::vector<std::string> ids;
  std::vector<Vec> coords;     // per-point ambient coordinates, all same dimension
  Mat dist;                    // intrinsic metric; empty => use ambient distances
  Vec measure;                 // per-point probability weights
};

struct ValidationIssue {
  ErrorCode code;
  std::string detail;
};

/// Finite metric measure space (X, d, m) embedded in a common Euclidean
/// ambient space. Immutable after construction; share freely across threads.
///
/// The metric may vanish between distinct points: spaces obtained by atom
/// splitting carry duplicated coordinates, and only zero diagonal, symmetry
/// and the triangle inequality are required.
class DiscreteSpace {
 public:
  static std::vector<ValidationIssue> check(const RawSpace& raw) {
    std::vector<ValidationIssue> issues;
    const std::size_t n = raw.ids.size();
    if (n == 0) {
      issues.push_back({ErrorCode::InvalidParameter, "space has no points"});
      return issues;
    }
    if (raw.coords.size() != n || static_cast<std::size_t>(raw.measure.size()) != n) {
      issues.push_back({ErrorCode::InvalidParameter, "field sizes disagree with point count"});
      return issues;
    }
    const Eigen::Index dim = raw.coords[0].size();
    for (const auto& c : raw.coords) {
      if (c.size() != dim) {
        issues.push_back({ErrorCode::DimensionMismatch, "ambient coordinate dimensions differ"});
        return issues;
      }
    }

    std::unordered_set<std::string> seen;
    for (const auto& id : raw.ids) {
      if (!seen.insert(id).second)
        issues.push_back({ErrorCode::DuplicateId, "duplicate point id '" + id + "'"});
    }

    double total = 0.0;
    bool positive = true;
    for (Eigen::Index i = 0; i < raw.measure.size(); ++i) {
      if (!(raw.measure[i] > 0.0)) positive = false;
      total += raw.measure[i];
    }
    if (!positive)
      issues.push_back({ErrorCode::NonProbabilityMeasure, "weights must be strictly positive"});
    else if (std::abs(total - 1.0) > kSpaceTol)
      issues.push_back({ErrorCode::NonProbabilityMeasure,
                        "weights sum to " + std::to_string(total) + ", not 1"});

    if (raw.dist.size() != 0) {
      if (raw.dist.rows() != static_cast<Eigen::Index>(n) ||
          raw.dist.cols() != static_cast<Eigen::Index>(n)) {
        issues.push_back({ErrorCode::MetricViolation, "distance matrix has wrong shape"});
        return issues;
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(raw.dist(i, i)) > kSpaceTol) {
          issues.push_back({ErrorCode::MetricViolation, "nonzero diagonal"});
          break;
        }
      }
      bool sym = true, nonneg = true;
      for (std::size_t i = 0; i < n && (sym || nonneg); ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          if (std::abs(raw.dist(i, j) - raw.dist(j, i)) > kSpaceTol) sym = false;
          if (raw.dist(i, j) < -kSpaceTol) nonneg = false;
        }
      if (!sym) issues.push_back({ErrorCode::MetricViolation, "distance matrix not symmetric"});
      if (!nonneg) issues.push_back({ErrorCode::MetricViolation, "negative distance"});
      if (sym && nonneg) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k)
              if (raw.dist(i, j) > raw.dist(i, k) + raw.dist(k, j) + kSpaceTol) {
                issues.push_back({ErrorCode::MetricViolation,
                                  "triangle inequality fails at (" + raw.ids[i] + "," +
                                      raw.ids[j] + "," + raw.ids[k] + ")"});
                return issues;
              }
      }
    }
    return issues;
  }

  static DiscreteSpace validate(RawSpace raw) {
    auto issues = check(raw);
    if (!issues.empty()) fail(issues.front().code, issues.front().detail);
    if (raw.dist.size() == 0) {
      const std::size_t n = raw.ids.size();
      raw.dist = Mat::Zero(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          raw.dist(i, j) = raw.dist(j, i) = (raw.coords[i] - raw.coords[j]).norm();
    }
    return DiscreteSpace(std::move(raw));
  }

  std::size_t size() const { return ids_.size(); }
  Eigen::Index ambient_dim() const { return coords_.empty() ? 0 : coords_[0].size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Vec& coord(std::size_t i) const { return coords_[i]; }
  const std::vector<Vec>& coords() const { return coords_; }
  double dist(std::size_t i, std::size_t j) const { return dist_(i, j); }
  const Mat& dist_matrix() const { return dist_; }
  const Vec& measure() const { return measure_; }

  /// Ambient (extrinsic) distance between point i here and point j of other.
  double ambient_dist(std::size_t i, const DiscreteSpace& other, std::size_t j) const {
    return (coords_[i] - other.coords_[j]).norm();
  }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    require(it != index_.end(), ErrorCode::InvalidParameter, "unknown point id '" + id + "'");
    return it->second;
  }

  bool same_as(const DiscreteSpace& other) const { return this == &other; }

 private:
  explicit DiscreteSpace(RawSpace raw)
      : ids_(std::move(raw.ids)),
        coords_(std::move(raw.coords)),
        dist_(std::move(raw.dist)),
        measure_(std::move(raw.measure)) {
    for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
  }

  std::vector<std::string> ids_;
  std::vector<Vec> coords_;
  Mat dist_;
  Vec measure_;
  std::unordered_map<std::string, std::size_t> index_;
};

using SpacePtr = std::shared_ptr<const DiscreteSpace>;

inline SpacePtr make_space(RawSpace raw) {
  return std::make_shared<const DiscreteSpace>(DiscreteSpace::validate(std::move(raw)));
}

/// Element of L^2(m): per-point real values over a fixed space.
struct L2Function {
  SpacePtr space;
  Vec values;

  L2Function() = default;
  L2Function(SpacePtr s, Vec v) : space(std::move(s)), values(std::move(v)) {
    require(space != nullptr, ErrorCode::InvalidParameter, "null space");
    require(values.size() == static_cast<Eigen::Index>(space->size()), ErrorCode::SpaceMismatch,
            "value count differs from point count");
  }
};

inline void require_same_space(const L2Function& f, const L2Function& g) {
  require(f.space == g.space, ErrorCode::SpaceMismatch, "functions live on different spaces");
}

inline double l2_inner(const L2Function& f, const L2Function& g) {
  require_same_space(f, g);
  return f.values.cwiseProduct(g.values).dot(f.space->measure());
}

inline double l2_inner(const DiscreteSpace& space, const Vec& a, const Vec& b) {
  return a.cwiseProduct(b).dot(space.measure());
}

inline double l2_norm(const DiscreteSpace& space, const Vec& a) {
  return std::sqrt(std::max(0.0, l2_inner(space, a, a)));
}

inline double l2_norm(const L2Function& f) { return l2_norm(*f.space, f.values); }

inline double l2_mean(const DiscreteSpace& space, const Vec& a) {
  return a.dot(space.measure());
}

/// Truncated ambient cost min{1, rho(x,y)}; its square is the transport cost.
inline double truncated_rho(double rho) { return std::min(1.0, rho); }
inline double truncated_cost(double rho) {
  double r = truncated_rho(rho);
  return r * r;
}

/// n equally spaced points on a planar circle of the given circumference,
/// uniform measure, arc-length metric. n = 1 gives the single-point space.
inline SpacePtr make_cycle(std::size_t n, double circumference) {
  require(n >= 1, ErrorCode::InvalidParameter, "cycle needs n >= 1");
  require(circumference > 0, ErrorCode::InvalidParameter, "circumference must be positive");
  const double pi = 3.14159265358979323846264338327950288;
  const double radius = circumference / (2.0 * pi);
  RawSpace raw;
  raw.ids.reserve(n);
  raw.coords.reserve(n);
  raw.measure = Vec::Constant(n, 1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    raw.ids.push_back("p" + std::to_string(i));
    double theta = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n);
    Vec c(2);
    c << radius * std::cos(theta), radius * std::sin(theta);
    raw.coords.push_back(std::move(c));
  }
  raw.dist = Mat::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t hops = std::min(j - i, n - (j - i));
      raw.dist(i, j) = raw.dist(j, i) =
          circumference * static_cast<double>(hops) / static_cast<double>(n);
    }
  return make_space(std::move(raw));
}

/// n points on the segment [0, length], uniform measure, line metric.
inline SpacePtr make_path(std::size_t n, double length) {
  require(n >= 1, ErrorCode::InvalidParameter, "path needs n >= 1");
  require(length > 0, ErrorCode::InvalidParameter, "length must be positive");
  RawSpace raw;
  raw.measure = Vec::Constant(n, 1.0 / static_cast<double>(n));
  const double h = (n > 1) ? length / static_cast<double>(n - 1) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    raw.ids.push_back("p" + std::to_string(i));
    Vec c(1);
    c << h * static_cast<double>(i);
    raw.coords.push_back(std::move(c));
  }
  raw.dist = Mat::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      raw.dist(i, j) = raw.dist(j, i) = h * static_cast<double>(j - i);
  return make_space(std::move(raw));
}

/// Product space with the l^2 metric, product measure and concatenated
/// ambient coordinates. Point (i, j) gets index i * |B| + j.
inline SpacePtr make_product(const DiscreteSpace& a, const DiscreteSpace& b) {
  RawSpace raw;
  const std::size_t n = a.size(), m = b.size();
  raw.measure = Vec(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      raw.ids.push_back(a.ids()[i] + "x" + b.ids()[j]);
      Vec c(a.ambient_dim() + b.ambient_dim());
      c << a.coord(i), b.coord(j);
      raw.coords.push_back(std::move(c));
      raw.measure[i * m + j] = a.measure()[i] * b.measure()[j];
    }
  raw.dist = Mat::Zero(n * m, n * m);
  for (std::size_t i = 0; i < n * m; ++i)
    for (std::size_t j = i + 1; j < n * m; ++j) {
      double da = a.dist(i / m, j / m);
      double db = b.dist(i % m, j % m);
      raw.dist(i, j) = raw.dist(j, i) = std::hypot(da, db);
    }
  return make_space(std::move(raw));
}

/// Discrete thin torus: product of a circumference-1 base cycle (n points)
/// and a circumference-eps fiber cycle (m points). Collapses to the base
/// cycle as eps -> 0.
inline SpacePtr make_thin_torus(std::size_t n, std::size_t m, double eps) {
  require(n >= 2 && m >= 2, ErrorCode::InvalidParameter, "thin torus needs n, m >= 2");
  require(eps > 0, ErrorCode::InvalidParameter, "fiber scale must be positive");
  SpacePtr base = make_cycle(n, 1.0);
  SpacePtr fiber = make_cycle(m, eps);
  return make_product(*base, *fiber);
}

}  // namespace mmspec
