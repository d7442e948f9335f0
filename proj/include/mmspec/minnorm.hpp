#pragma once

#include <limits>
#include <vector>

#include "mmspec/common.hpp"
#include "mmspec/space.hpp"

namespace mmspec {

/// Minimum-norm point of  base + sum_b conv(blocks[b])  in L^2(m).
///
/// Wolfe's minimum-norm-point algorithm, run in the m-weighted inner
/// product. The linear minimization oracle decomposes over blocks, so
/// Minkowski sums of small simplices and segments (subdifferential
/// polytopes of piecewise-quadratic energies) are handled directly.
struct MinNormResult {
  Vec point;        // the min-norm element
  double norm = 0;  // its m-norm
  double gap = 0;   // duality-gap certificate <x,x> - min_p <x,p>
  bool converged = false;
  int iterations = 0;
};

class MinNormProblem {
 public:
  explicit MinNormProblem(const DiscreteSpace& space) : space_(&space) {
    base_ = Vec::Zero(space.size());
  }

  void add_offset(const Vec& b) { base_ += b; }
  void add_block(std::vector<Vec> vertices) {
    if (vertices.size() == 1) {
      base_ += vertices[0];  // singleton blocks are just offsets
      return;
    }
    if (!vertices.empty()) blocks_.push_back(std::move(vertices));
  }

  bool trivial() const { return blocks_.empty(); }

  /// Same polytope translated by `offset`.
  MinNormProblem shifted(const Vec& offset) const {
    MinNormProblem p(*this);
    p.base_ += offset;
    return p;
  }

  /// The polytope scaled by a positive factor.
  MinNormProblem scaled(double factor) const {
    MinNormProblem p(*this);
    p.base_ *= factor;
    for (auto& blk : p.blocks_)
      for (auto& v : blk) v *= factor;
    return p;
  }

  /// Image of the polytope under the tangential projection
  /// v -> v - <v, un>_m un (un must be m-unit). Projection is linear, so the
  /// image of the convex hull is the convex hull of the images.
  MinNormProblem projected_tangent(const Vec& un) const {
    auto proj = [&](const Vec& v) -> Vec {
      double r = l2_inner(*space_, v, un);
      return v - r * un;
    };
    MinNormProblem p(*space_);
    p.base_ = proj(base_);
    for (const auto& blk : blocks_) {
      std::vector<Vec> verts;
      verts.reserve(blk.size());
      for (const auto& v : blk) verts.push_back(proj(v));
      p.blocks_.push_back(std::move(verts));
    }
    return p;
  }

  MinNormResult solve(double tol = 1e-13, int max_iter = 0) const {
    MinNormResult res;
    if (blocks_.empty()) {
      res.point = base_;
      res.norm = l2_norm(*space_, base_);
      res.gap = 0;
      res.converged = true;
      return res;
    }
    const Vec& m = space_->measure();
    auto dot_m = [&](const Vec& a, const Vec& b) { return a.cwiseProduct(b).dot(m); };

    // LMO: per block, the vertex minimizing <v, d>_m.
    auto lmo = [&](const Vec& d) {
      Vec p = base_;
      for (const auto& blk : blocks_) {
        int best = 0;
        double bv = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < blk.size(); ++j) {
          double v = dot_m(blk[j], d);
          if (v < bv) {
            bv = v;
            best = static_cast<int>(j);
          }
        }
        p += blk[best];
      }
      return p;
    };

    if (max_iter == 0) max_iter = 64 + 16 * static_cast<int>(space_->size() + blocks_.size());

    std::vector<Vec> corral;
    std::vector<double> weight;
    Vec x = lmo(base_);
    corral.push_back(x);
    weight.push_back(1.0);

    auto affine_min = [&](const std::vector<Vec>& pts) {
      // min ||sum a_i p_i||_m^2  s.t.  sum a_i = 1  via  a = G^-1 1 / (1' G^-1 1)
      const int k = static_cast<int>(pts.size());
      Mat G(k, k);
      for (int i = 0; i < k; ++i)
        for (int j = i; j < k; ++j) G(i, j) = G(j, i) = dot_m(pts[i], pts[j]);
      double reg = 1e-14 * (1.0 + G.diagonal().maxCoeff());
      G.diagonal().array() += reg;
      Eigen::LDLT<Mat> ldlt(G);
      Vec ones = Vec::Ones(k);
      Vec y = ldlt.solve(ones);
      double denom = ones.dot(y);
      if (!(std::abs(denom) > 1e-300)) y = ones / static_cast<double>(k);
      else y /= denom;
      return y;
    };

    double scale = 1.0 + dot_m(x, x);
    for (int it = 0; it < max_iter; ++it) {
      res.iterations = it + 1;
      Vec q = lmo(x);
      double xx = dot_m(x, x);
      res.gap = xx - dot_m(x, q);
      scale = 1.0 + xx;
      if (res.gap <= tol * scale) {
        res.converged = true;
        break;
      }
      bool duplicate = false;
      for (const auto& p : corral)
        if (dot_m(q - p, q - p) <= 1e-28 * scale) {
          duplicate = true;
          break;
        }
      if (duplicate) break;  // no further progress possible numerically
      corral.push_back(q);
      weight.push_back(0.0);

      // Minor cycle: move to the affine min over the corral, dropping
      // vertices whose weight would go negative.
      for (;;) {
        Vec alpha = affine_min(corral);
        bool ok = true;
        for (int i = 0; i < alpha.size(); ++i)
          if (alpha[i] < 1e-12) ok = false;
        if (ok) {
          for (std::size_t i = 0; i < corral.size(); ++i) weight[i] = alpha[i];
          break;
        }
        double theta = 1.0;
        for (std::size_t i = 0; i < corral.size(); ++i) {
          double d = weight[i] - alpha[i];
          if (d > 1e-300 && alpha[i] < 1e-12)
            theta = std::min(theta, weight[i] / d);
        }
        for (std::size_t i = 0; i < corral.size(); ++i)
          weight[i] += theta * (alpha[i] - weight[i]);
        for (std::size_t i = corral.size(); i-- > 0;) {
          if (weight[i] <= 1e-13) {
            corral.erase(corral.begin() + static_cast<std::ptrdiff_t>(i));
            weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(i));
          }
        }
        if (corral.size() <= 1) break;
      }
      x.setZero();
      for (std::size_t i = 0; i < corral.size(); ++i) x += weight[i] * corral[i];
    }
    res.point = x;
    res.norm = l2_norm(*space_, x);
    return res;
  }

 private:
  const DiscreteSpace* space_;
  Vec base_;
  std::vector<std::vector<Vec>> blocks_;
};

}  // namespace mmspec
