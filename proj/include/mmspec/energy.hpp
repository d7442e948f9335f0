#pragma once

#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "mmspec/common.hpp"
#include "mmspec/minnorm.hpp"
#include "mmspec/space.hpp"

namespace mmspec {

inline constexpr double kLqInfinity = std::numeric_limits<double>::infinity();

struct Edge {
  std::size_t a, b;
  double w;
};

struct QuadraticKind {
  std::vector<Edge> edges;
};

struct LqNeighbor {
  std::size_t y;
  double w;
};

struct LqKind {
  double q = 2.0;  // in [1, inf]; kLqInfinity means max over neighbors
  std::vector<std::vector<LqNeighbor>> neighbors;  // per point
};

/// Even, convex, 2-homogeneous Dirichlet energy over a DiscreteSpace.
///
/// Quadratic kind:  Ch(u) = sum_edges w (u_b - u_a)^2.
/// Lq kind:         Ch(u) = sum_x m(x) ( sum_{y~x} w_xy |u_y - u_x|^q )^{2/q},
///                  with the max over neighbors, squared, at q = inf.
///
/// The nonlinear Laplacian -Delta u is the element of minimal L^2(m) norm in
/// the subdifferential of Ch/2; at nonsmooth points (q = 1 or q = inf) it is
/// obtained by projecting 0 onto the subdifferential polytope.
class EnergyForm {
 public:
  EnergyForm(SpacePtr space, QuadraticKind kind)
      : space_(std::move(space)), kind_(std::move(kind)) {
    require(space_ != nullptr, ErrorCode::InvalidParameter, "null space");
    const auto& k = std::get<QuadraticKind>(kind_);
    for (const auto& e : k.edges) {
      require(e.a < space_->size() && e.b < space_->size(), ErrorCode::InvalidParameter,
              "edge endpoint out of range");
      require(e.a != e.b, ErrorCode::InvalidParameter, "self-loop edge");
      require(e.w >= 0.0, ErrorCode::InvalidParameter, "negative edge weight");
    }
  }

  EnergyForm(SpacePtr space, LqKind kind) : space_(std::move(space)), kind_(std::move(kind)) {
    require(space_ != nullptr, ErrorCode::InvalidParameter, "null space");
    auto& k = std::get<LqKind>(kind_);
    require(k.q >= 1.0, ErrorCode::InvalidParameter, "q must lie in [1, inf]");
    require(k.neighbors.size() == space_->size(), ErrorCode::InvalidParameter,
            "neighbor lists must cover every point");
    for (std::size_t x = 0; x < k.neighbors.size(); ++x)
      for (const auto& nb : k.neighbors[x]) {
        require(nb.y < space_->size() && nb.y != x, ErrorCode::InvalidParameter,
                "bad neighbor index");
        require(nb.w >= 0.0, ErrorCode::InvalidParameter, "negative neighbor weight");
      }
  }

  const DiscreteSpace& space() const { return *space_; }
  const SpacePtr& space_ptr() const { return space_; }
  bool is_quadratic() const { return std::holds_alternative<QuadraticKind>(kind_); }
  const QuadraticKind& quadratic() const {
    require(is_quadratic(), ErrorCode::NotQuadratic, "energy is not quadratic");
    return std::get<QuadraticKind>(kind_);
  }
  const LqKind& lq() const { return std::get<LqKind>(kind_); }
  double q_exponent() const { return is_quadratic() ? 2.0 : lq().q; }

  /// Dense matrix of the quadratic form: Ch(u) = u' A u (Euclidean pairing).
  const Mat& quadratic_matrix() const {
    require(is_quadratic(), ErrorCode::NotQuadratic, "energy is not quadratic");
    if (A_.size() == 0) {
      const std::size_t n = space_->size();
      Mat A = Mat::Zero(n, n);
      for (const auto& e : quadratic().edges) {
        A(e.a, e.a) += e.w;
        A(e.b, e.b) += e.w;
        A(e.a, e.b) -= e.w;
        A(e.b, e.a) -= e.w;
      }
      A_ = std::move(A);
    }
    return A_;
  }

  double eval(const Vec& u) const {
    check_dim(u);
    if (is_quadratic()) {
      double s = 0;
      for (const auto& e : quadratic().edges) {
        double d = u[e.b] - u[e.a];
        s += e.w * d * d;
      }
      return s;
    }
    const auto& k = lq();
    const Vec& m = space_->measure();
    double total = 0;
    for (std::size_t x = 0; x < k.neighbors.size(); ++x) {
      if (k.neighbors[x].empty()) continue;
      double inner;
      if (k.q == kLqInfinity) {
        inner = 0;
        for (const auto& nb : k.neighbors[x]) inner = std::max(inner, nb.w * std::abs(u[nb.y] - u[x]));
        total += m[x] * inner * inner;
      } else {
        inner = 0;
        for (const auto& nb : k.neighbors[x]) inner += nb.w * std::pow(std::abs(u[nb.y] - u[x]), k.q);
        total += m[x] * std::pow(inner, 2.0 / k.q);
      }
    }
    return total;
  }

  double eval(const L2Function& f) const {
    require(f.space == space_, ErrorCode::SpaceMismatch, "function on foreign space");
    return eval(f.values);
  }

  /// True if the edge/neighbor structure connects all points.
  bool connected() const {
    const std::size_t n = space_->size();
    std::vector<std::size_t> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    auto unite = [&](std::size_t a, std::size_t b) { parent[find(a)] = find(b); };
    if (is_quadratic()) {
      for (const auto& e : quadratic().edges)
        if (e.w > 0) unite(e.a, e.b);
    } else {
      for (std::size_t x = 0; x < lq().neighbors.size(); ++x)
        for (const auto& nb : lq().neighbors[x])
          if (nb.w > 0) unite(x, nb.y);
    }
    for (std::size_t i = 1; i < n; ++i)
      if (find(i) != find(0)) return false;
    return true;
  }

  /// Subdifferential of Ch/2 at u, as offset + Minkowski blocks of L^2(m)
  /// representers. Smooth kinds yield an offset only.
  MinNormProblem half_subdifferential(const Vec& u) const {
    check_dim(u);
    const Vec& m = space_->measure();
    MinNormProblem prob(*space_);
    Vec base = Vec::Zero(u.size());
    if (is_quadratic()) {
      for (const auto& e : quadratic().edges) {
        double d = u[e.a] - u[e.b];
        base[e.a] += e.w * d / m[e.a];
        base[e.b] -= e.w * d / m[e.b];
      }
      prob.add_offset(base);
      return prob;
    }
    const auto& k = lq();
    // Near-ties are treated as ties (an epsilon-enlarged subdifferential):
    // minimizers of the piecewise-quadratic objectives sit at kinks that
    // floating-point iterates only approach, so exact tie detection would
    // make the minimal selection discontinuous at the very points we need it.
    const double tie_rel = 1e-9;
    const double tie_abs = 1e-13 * (1.0 + u.cwiseAbs().maxCoeff());
    for (std::size_t x = 0; x < k.neighbors.size(); ++x) {
      if (k.neighbors[x].empty()) continue;
      if (k.q == kLqInfinity) {
        double s = 0;
        for (const auto& nb : k.neighbors[x]) s = std::max(s, nb.w * std::abs(u[nb.y] - u[x]));
        if (s <= tie_abs) continue;  // differentiable with zero gradient
        std::vector<Vec> verts;
        for (const auto& nb : k.neighbors[x]) {
          double d = u[nb.y] - u[x];
          if (nb.w * std::abs(d) >= s * (1.0 - tie_rel) - tie_abs) {
            double c = m[x] * s * nb.w * (d >= 0 ? 1.0 : -1.0);
            Vec v = Vec::Zero(u.size());
            v[nb.y] += c / m[nb.y];
            v[x] -= c / m[x];
            verts.push_back(std::move(v));
          }
        }
        prob.add_block(std::move(verts));
      } else if (k.q == 1.0) {
        double t = 0, dmax = 0;
        for (const auto& nb : k.neighbors[x]) {
          t += nb.w * std::abs(u[nb.y] - u[x]);
          dmax = std::max(dmax, std::abs(u[nb.y] - u[x]));
        }
        if (t <= tie_abs) continue;
        for (const auto& nb : k.neighbors[x]) {
          double d = u[nb.y] - u[x];
          double c = m[x] * t * nb.w;
          if (std::abs(d) > tie_rel * dmax + tie_abs) {
            double s = (d >= 0 ? 1.0 : -1.0);
            base[nb.y] += c * s / m[nb.y];
            base[x] -= c * s / m[x];
          } else if (c > 0) {
            Vec vp = Vec::Zero(u.size());
            vp[nb.y] += c / m[nb.y];
            vp[x] -= c / m[x];
            prob.add_block({vp, -vp});
          }
        }
      } else {
        // q in (1, inf): C^1, single-valued gradient.
        double s = 0;
        for (const auto& nb : k.neighbors[x]) s += nb.w * std::pow(std::abs(u[nb.y] - u[x]), k.q);
        if (s <= 0) continue;
        double outer = m[x] * std::pow(s, (2.0 - k.q) / k.q);
        for (const auto& nb : k.neighbors[x]) {
          double d = u[nb.y] - u[x];
          if (d == 0) continue;
          double c = outer * nb.w * std::pow(std::abs(d), k.q - 1.0) * (d >= 0 ? 1.0 : -1.0);
          base[nb.y] += c / m[nb.y];
          base[x] -= c / m[x];
        }
      }
    }
    prob.add_offset(base);
    return prob;
  }

  bool has_smooth_gradient_at(const Vec& u) const {
    if (is_quadratic()) return true;
    double q = lq().q;
    if (q != 1.0 && q != kLqInfinity) return true;
    return half_subdifferential(u).trivial();
  }

 private:
  void check_dim(const Vec& u) const {
    require(u.size() == static_cast<Eigen::Index>(space_->size()), ErrorCode::SpaceMismatch,
            "value count differs from point count");
  }

  SpacePtr space_;
  std::variant<QuadraticKind, LqKind> kind_;
  mutable Mat A_;  // lazily assembled quadratic matrix
};

inline double eval_energy(const EnergyForm& E, const L2Function& u) { return E.eval(u); }

/// -Delta u: the minimal selection in the subdifferential of Ch/2.
inline Vec laplacian(const EnergyForm& E, const Vec& u, double tol = 1e-10) {
  auto prob = E.half_subdifferential(u);
  auto res = prob.solve();
  require(res.converged || res.gap <= tol, ErrorCode::SolverFailure,
          "subdifferential projection did not converge");
  return res.point;
}

inline L2Function laplacian(const EnergyForm& E, const L2Function& u) {
  require(u.space == E.space_ptr(), ErrorCode::SpaceMismatch, "function on foreign space");
  return L2Function(u.space, laplacian(E, u.values));
}

/// Constraint descriptor for the sphere-restricted functional
/// Phi_L = Ch + indicator{ ||u|| <= 1, Ch(u) <= cap_M } - shift_L ||u||^2.
struct SphereCapConstraint {
  double cap_M;
  double shift_L;
};

/// Descending slope. Unconstrained: |d(Ch/2)|(u) = ||laplacian(u)||.
/// Constrained: minimal norm over the Frechet subdifferential of Phi_L,
/// evaluated on the sphere (tangential projection of the Ch subdifferential,
/// with the radial multiplier clamped at zero from below).
inline double descending_slope(const EnergyForm& E, const Vec& u,
                               std::optional<SphereCapConstraint> constraint = std::nullopt) {
  if (!constraint) return l2_norm(E.space(), laplacian(E, u));

  const double M = constraint->cap_M, L = constraint->shift_L;
  const double nu = l2_norm(E.space(), u);
  const double ch = E.eval(u);
  require(nu <= 1.0 + 1e-9, ErrorCode::OutsideDomain, "outside the unit ball");
  require(ch <= M + 1e-9 * (1.0 + M), ErrorCode::OutsideDomain, "energy cap exceeded");

  auto prob = E.half_subdifferential(u);
  if (std::abs(nu - 1.0) <= 1e-9) {
    // On the sphere every xi in dCh(u) has the same radial component
    // <xi, u> = 2 Ch(u), so the minimal tangential norm is attained by the
    // projected polytope; the normal-cone multiplier cancels the radial part
    // whenever Ch(u) < L.
    Vec un = u / nu;
    MinNormResult res = prob.projected_tangent(un).solve();
    double radial = 2.0 * std::max(0.0, ch - L);
    return std::sqrt(4.0 * res.norm * res.norm + radial * radial);
  }
  // Interior of the ball: the subdifferential is 2 d(Ch/2)(u) - 2 L u.
  MinNormResult res = prob.shifted(-L * u).solve();
  return 2.0 * res.norm;
}

/// Lq form with the same energy values as a quadratic form when q = 2:
/// each edge (a, b, w) contributes w/(2 m_a) to a's list and w/(2 m_b) to b's.
inline EnergyForm quadratic_as_lq(const EnergyForm& E, double q) {
  const auto& edges = E.quadratic().edges;
  const Vec& m = E.space().measure();
  LqKind k;
  k.q = q;
  k.neighbors.resize(E.space().size());
  for (const auto& e : edges) {
    k.neighbors[e.a].push_back({e.b, e.w / (2.0 * m[e.a])});
    k.neighbors[e.b].push_back({e.a, e.w / (2.0 * m[e.b])});
  }
  return EnergyForm(E.space_ptr(), std::move(k));
}

/// Default quadratic discretizations of |grad u|^2 integrated against the
/// probability measure: an edge across spacing h carries weight m_pt / h^2,
/// so cycle spectra follow the circulant values 2 n^2 (1 - cos(2 pi j / n)) / c^2.
inline EnergyForm default_cycle_energy(SpacePtr cycle, double circumference) {
  const std::size_t n = cycle->size();
  QuadraticKind k;
  if (n >= 2) {
    double w = static_cast<double>(n) / (circumference * circumference);
    for (std::size_t i = 0; i + 1 < n; ++i) k.edges.push_back({i, i + 1, w});
    if (n == 2)
      k.edges[0].w += w;  // the wrap edge coincides with the only edge
    else
      k.edges.push_back({n - 1, 0, w});
  }
  return EnergyForm(std::move(cycle), std::move(k));
}

inline EnergyForm default_path_energy(SpacePtr path, double length) {
  const std::size_t n = path->size();
  QuadraticKind k;
  if (n >= 2) {
    double h = length / static_cast<double>(n - 1);
    double w = 1.0 / (static_cast<double>(n) * h * h);
    for (std::size_t i = 0; i + 1 < n; ++i) k.edges.push_back({i, i + 1, w});
  }
  return EnergyForm(std::move(path), std::move(k));
}

/// Product energy over make_product(a, b): base edges from ea, fiber edges
/// from eb, indices laid out as i * |B| + j. Spectra are Kronecker sums of
/// the factor spectra.
inline EnergyForm product_energy(SpacePtr product, const EnergyForm& ea, const EnergyForm& eb) {
  const std::size_t n = ea.space().size(), m = eb.space().size();
  require(product->size() == n * m, ErrorCode::SpaceMismatch, "product size mismatch");
  const Vec& ma = ea.space().measure();
  const Vec& mb = eb.space().measure();
  QuadraticKind k;
  for (const auto& e : ea.quadratic().edges)
    for (std::size_t j = 0; j < m; ++j)
      k.edges.push_back({e.a * m + j, e.b * m + j, e.w * mb[j]});
  for (const auto& e : eb.quadratic().edges)
    for (std::size_t i = 0; i < n; ++i)
      k.edges.push_back({i * m + e.a, i * m + e.b, e.w * ma[i]});
  return EnergyForm(std::move(product), std::move(k));
}

inline EnergyForm default_thin_torus_energy(SpacePtr torus, std::size_t n, std::size_t m,
                                            double eps) {
  EnergyForm base = default_cycle_energy(make_cycle(n, 1.0), 1.0);
  EnergyForm fiber = default_cycle_energy(make_cycle(m, eps), eps);
  return product_energy(std::move(torus), base, fiber);
}

/// Lift of an energy to a refinement of its space. `parent[i]` is the
/// original point behind refined point i. Weights are split by mass
/// fraction, so lifted functions keep their energy and pullbacks of target
/// functions are evaluated consistently.
inline EnergyForm refine_energy(const EnergyForm& E, SpacePtr refined,
                                const std::vector<std::size_t>& parent) {
  const DiscreteSpace& orig = E.space();
  require(parent.size() == refined->size(), ErrorCode::InvalidParameter,
          "parent map must cover the refined space");
  std::vector<std::vector<std::size_t>> copies(orig.size());
  for (std::size_t i = 0; i < parent.size(); ++i) {
    require(parent[i] < orig.size(), ErrorCode::InvalidParameter, "parent index out of range");
    copies[parent[i]].push_back(i);
  }
  auto frac = [&](std::size_t i) {
    return refined->measure()[i] / orig.measure()[parent[i]];
  };
  if (E.is_quadratic()) {
    QuadraticKind k;
    for (const auto& e : E.quadratic().edges)
      for (std::size_t ia : copies[e.a])
        for (std::size_t ib : copies[e.b])
          k.edges.push_back({ia, ib, e.w * frac(ia) * frac(ib)});
    return EnergyForm(std::move(refined), std::move(k));
  }
  LqKind k;
  k.q = E.lq().q;
  k.neighbors.resize(refined->size());
  // Inner sums are linear in the weights, so mass-fraction splitting keeps
  // lifted energies; the max at q = inf is not, so copies keep full weight.
  const bool split = (k.q != kLqInfinity);
  for (std::size_t x = 0; x < orig.size(); ++x)
    for (const auto& nb : E.lq().neighbors[x])
      for (std::size_t ix : copies[x])
        for (std::size_t iy : copies[nb.y])
          k.neighbors[ix].push_back({iy, split ? nb.w * frac(iy) : nb.w});
  return EnergyForm(std::move(refined), std::move(k));
}

}  // namespace mmspec
