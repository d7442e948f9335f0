#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mmspec/common.hpp"
#include "mmspec/space.hpp"

namespace mmspec {

struct PlanEntry {
  std::size_t src, dst;
  double mass;
};

/// Optimal coupling between two discrete probability measures under the
/// truncated squared ambient cost min{1, rho^2}. Solutions are basic, so at
/// most |source| + |target| - 1 entries are positive. Optimality is
/// certified by the dual potentials: every cell satisfies
/// c_ij - u_i - v_j >= -dual_residual, with equality on support cells.
struct CouplingPlan {
  SpacePtr source, target;
  std::vector<PlanEntry> entries;  // positive masses only
  double cost = 0;
  Vec dual_u, dual_v;
  double dual_residual = 0;
  double slack = 0;  // the 2^-i almost-optimality slack; exact solves use 0

  Mat dense() const {
    Mat P = Mat::Zero(source->size(), target->size());
    for (const auto& e : entries) P(e.src, e.dst) = e.mass;
    return P;
  }
};

namespace detail {

/// Transportation simplex (MODI) with Bland's entering rule, which also
/// rules out cycling on the heavily degenerate uniform instances.
class TransportSimplex {
 public:
  TransportSimplex(const Vec& a, const Vec& b, const Mat& C)
      : a_(a), b_(b), C_(C), n_(a.size()), m_(b.size()) {}

  void solve() {
    northwest_start();
    const long max_iter = 200L * (n_ + m_) * (n_ + m_) + 10000L;
    for (long it = 0; it < max_iter; ++it) {
      compute_duals();
      long enter = find_entering();
      if (enter < 0) return;  // dual feasible: optimal
      pivot(enter / m_, enter % m_);
    }
    fail(ErrorCode::SolverFailure, "transportation simplex exceeded its iteration budget");
  }

  const std::vector<std::vector<double>>& flow() const { return flow_; }
  const std::vector<std::vector<char>>& basis() const { return basis_; }
  Vec dual_u() const { return u_; }
  Vec dual_v() const { return v_; }

 private:
  void northwest_start() {
    flow_.assign(n_, std::vector<double>(m_, 0.0));
    basis_.assign(n_, std::vector<char>(m_, 0));
    Vec ra = a_, rb = b_;
    Eigen::Index i = 0, j = 0;
    while (true) {
      double f = std::min(ra[i], rb[j]);
      flow_[i][j] = f;
      basis_[i][j] = 1;
      ra[i] -= f;
      rb[j] -= f;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (ra[i] <= rb[j] && i < n_ - 1)
        ++i;
      else if (j < m_ - 1)
        ++j;
      else
        ++i;
    }
  }

  void compute_duals() {
    u_ = Vec::Constant(n_, std::numeric_limits<double>::quiet_NaN());
    v_ = Vec::Constant(m_, std::numeric_limits<double>::quiet_NaN());
    u_[0] = 0.0;
    // BFS over the basis tree, alternating rows and columns.
    std::vector<Eigen::Index> row_stack{0}, col_stack;
    while (!row_stack.empty() || !col_stack.empty()) {
      if (!row_stack.empty()) {
        Eigen::Index i = row_stack.back();
        row_stack.pop_back();
        for (Eigen::Index j = 0; j < m_; ++j)
          if (basis_[i][j] && std::isnan(v_[j])) {
            v_[j] = C_(i, j) - u_[i];
            col_stack.push_back(j);
          }
      } else {
        Eigen::Index j = col_stack.back();
        col_stack.pop_back();
        for (Eigen::Index i = 0; i < n_; ++i)
          if (basis_[i][j] && std::isnan(u_[i])) {
            u_[i] = C_(i, j) - v_[j];
            row_stack.push_back(i);
          }
      }
    }
  }

  long find_entering() const {
    for (Eigen::Index i = 0; i < n_; ++i)
      for (Eigen::Index j = 0; j < m_; ++j)
        if (!basis_[i][j] && C_(i, j) - u_[i] - v_[j] < -1e-12) return i * m_ + j;
    return -1;
  }

  /// Finds the unique alternating cycle the entering cell closes in the
  /// basis tree and pivots the minimum flow around it.
  void pivot(Eigen::Index ei, Eigen::Index ej) {
    // Path from row ei to column ej through basis cells, found by DFS.
    // Nodes: rows [0, n), columns [n, n+m).
    std::vector<int> prev_cell_row(n_, -1), prev_cell_col(m_, -1);
    std::vector<char> vis_row(n_, 0), vis_col(m_, 0);
    vis_row[ei] = 1;
    bool reached = false;
    std::vector<Eigen::Index> frontier_rows{ei}, frontier_cols;
    while ((!frontier_rows.empty() || !frontier_cols.empty()) && !reached) {
      if (!frontier_rows.empty()) {
        Eigen::Index i = frontier_rows.back();
        frontier_rows.pop_back();
        for (Eigen::Index j = 0; j < m_; ++j)
          if (basis_[i][j] && !vis_col[j]) {
            vis_col[j] = 1;
            prev_cell_col[j] = static_cast<int>(i);
            if (j == ej) {
              reached = true;
              break;
            }
            frontier_cols.push_back(j);
          }
      } else {
        Eigen::Index j = frontier_cols.back();
        frontier_cols.pop_back();
        for (Eigen::Index i = 0; i < n_; ++i)
          if (basis_[i][j] && !vis_row[i]) {
            vis_row[i] = 1;
            prev_cell_row[i] = static_cast<int>(j);
            frontier_rows.push_back(i);
          }
      }
    }
    require(reached, ErrorCode::SolverFailure, "basis lost its spanning-tree structure");

    // Reconstruct the cycle: (ei,ej) plus the tree path ej -> ... -> ei.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> minus, plus;
    plus.push_back({ei, ej});
    Eigen::Index j = ej;
    while (true) {
      Eigen::Index i = prev_cell_col[j];
      minus.push_back({i, j});
      if (i == ei) break;
      j = prev_cell_row[i];
      plus.push_back({i, j});
    }

    double theta = std::numeric_limits<double>::infinity();
    std::pair<Eigen::Index, Eigen::Index> leave = minus.front();
    for (const auto& c : minus)
      if (flow_[c.first][c.second] < theta - 1e-18) {
        theta = flow_[c.first][c.second];
        leave = c;
      }
    for (const auto& c : plus) flow_[c.first][c.second] += theta;
    for (const auto& c : minus) flow_[c.first][c.second] -= theta;
    flow_[leave.first][leave.second] = 0.0;
    basis_[leave.first][leave.second] = 0;
    basis_[ei][ej] = 1;
  }

  Vec a_, b_;
  Mat C_;
  Eigen::Index n_, m_;
  std::vector<std::vector<double>> flow_;
  std::vector<std::vector<char>> basis_;
  Vec u_, v_;
};

}  // namespace detail

/// Exact optimal transport between the measures of two spaces sharing an
/// ambient coordinate system, under the truncated squared distance.
inline CouplingPlan solve_ot(SpacePtr source, SpacePtr target) {
  require(source->ambient_dim() == target->ambient_dim(), ErrorCode::DimensionMismatch,
          "spaces live in different ambient dimensions");
  const Eigen::Index n = source->size(), m = target->size();
  Mat C(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      C(i, j) = truncated_cost(source->ambient_dist(i, *target, j));

  detail::TransportSimplex simplex(source->measure(), target->measure(), C);
  simplex.solve();

  CouplingPlan plan;
  plan.source = std::move(source);
  plan.target = std::move(target);
  plan.dual_u = simplex.dual_u();
  plan.dual_v = simplex.dual_v();
  double worst = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double rc = C(i, j) - plan.dual_u[i] - plan.dual_v[j];
      double f = simplex.flow()[i][j];
      if (f > 0) {
        plan.entries.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), f});
        plan.cost += f * C(i, j);
        worst = std::max(worst, std::abs(rc));  // complementary slackness
      }
      worst = std::max(worst, -rc);  // dual feasibility
    }
  plan.dual_residual = worst;
  require(worst <= 1e-9, ErrorCode::SolverFailure, "dual certificate residual too large");

  Vec row = Vec::Zero(n), col = Vec::Zero(m);
  for (const auto& e : plan.entries) {
    row[e.src] += e.mass;
    col[e.dst] += e.mass;
  }
  require((row - plan.source->measure()).cwiseAbs().maxCoeff() <= 1e-10 &&
              (col - plan.target->measure()).cwiseAbs().maxCoeff() <= 1e-10,
          ErrorCode::SolverFailure, "marginal constraints violated");
  return plan;
}

/// Deterministic map obtained from a plan by atom splitting: each source
/// atom is cut into mass intervals, ordered by target index, one refined
/// point per positive plan entry. The pushforward of the refined measure
/// equals the target measure exactly.
struct TransportMap {
  SpacePtr source, target;
  SpacePtr refined_source;
  std::vector<std::size_t> parent;  // refined point -> source point
  std::vector<std::size_t> assign;  // refined point -> target point
  std::vector<double> cut_lo;       // interval [cut_lo, cut_lo + mass) inside the atom
  double cost = 0;

  /// Pullback f -> f o T from L^2(target) to L^2(refined_source); a linear
  /// isometry because the pushforward matches the target measure.
  Vec pullback(const Vec& f_on_target) const {
    require(f_on_target.size() == static_cast<Eigen::Index>(target->size()),
            ErrorCode::SpaceMismatch, "function does not live on the map's target");
    Vec out(refined_source->size());
    for (std::size_t r = 0; r < assign.size(); ++r) out[r] = f_on_target[assign[r]];
    return out;
  }
};

inline TransportMap plan_to_map(const CouplingPlan& plan) {
  const DiscreteSpace& src = *plan.source;
  std::vector<std::vector<PlanEntry>> rows(src.size());
  for (const auto& e : plan.entries) rows[e.src].push_back(e);
  for (auto& r : rows)
    std::sort(r.begin(), r.end(), [](const PlanEntry& x, const PlanEntry& y) { return x.dst < y.dst; });

  TransportMap map;
  map.source = plan.source;
  map.target = plan.target;
  RawSpace raw;
  for (std::size_t x = 0; x < rows.size(); ++x) {
    double off = 0;
    for (std::size_t r = 0; r < rows[x].size(); ++r) {
      const auto& e = rows[x][r];
      raw.ids.push_back(src.ids()[x] + "#" + std::to_string(r));
      raw.coords.push_back(src.coord(x));
      map.parent.push_back(x);
      map.assign.push_back(e.dst);
      map.cut_lo.push_back(off);
      off += e.mass;
      map.cost += e.mass * truncated_cost(src.ambient_dist(x, *plan.target, e.dst));
    }
  }
  const std::size_t nr = map.parent.size();
  raw.measure = Vec(nr);
  for (std::size_t r = 0; r < nr; ++r) {
    double lo = map.cut_lo[r];
    double hi = (r + 1 < nr && map.parent[r + 1] == map.parent[r])
                    ? map.cut_lo[r + 1]
                    : src.measure()[map.parent[r]];
    raw.measure[r] = hi - lo;
  }
  raw.dist = Mat(nr, nr);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nr; ++j) raw.dist(i, j) = src.dist(map.parent[i], map.parent[j]);
  map.refined_source = make_space(std::move(raw));

  // Exact pushforward: refined masses grouped by target reproduce the
  // target measure (simplex marginals are already tight to 1e-10).
  Vec push = Vec::Zero(plan.target->size());
  for (std::size_t r = 0; r < nr; ++r) push[map.assign[r]] += map.refined_source->measure()[r];
  require((push - plan.target->measure()).cwiseAbs().maxCoeff() <= 1e-12 +
              1e-12 * plan.target->measure().maxCoeff(),
          ErrorCode::SolverFailure, "pushforward does not match the target measure");
  return map;
}

/// Direction tag for the two isometry families of the stability argument:
/// pi pulls limit functions onto (refinements of) the approximants, sigma
/// pulls approximant functions onto (a refinement of) the limit.
enum class IsometryDirection { PiLimitToApproximant, SigmaApproximantToLimit };

struct Isometry {
  IsometryDirection direction;
  TransportMap map;

  Vec apply(const Vec& f_on_target) const { return map.pullback(f_on_target); }
};

inline L2Function apply_isometry(const Isometry& iso, const L2Function& f) {
  require(f.space == iso.map.target, ErrorCode::SpaceMismatch,
          "function does not live on the isometry's source of functions");
  return L2Function(iso.map.refined_source, iso.apply(f.values));
}

/// Common refinement of one source space across several maps out of it.
/// Each atom's mass interval is cut at every map's split points, so all the
/// pullbacks live on one space and Hausdorff distances are well defined.
struct CommonRefinement {
  SpacePtr refined;
  std::vector<std::size_t> parent;
  std::vector<std::vector<std::size_t>> assign;  // per map: refined -> that map's target
};

inline CommonRefinement common_refinement(const SpacePtr& source,
                                          const std::vector<TransportMap>& maps) {
  const DiscreteSpace& src = *source;
  for (const auto& m : maps)
    require(m.source == source, ErrorCode::SpaceMismatch, "maps must share the source space");

  CommonRefinement out;
  RawSpace raw;
  std::vector<std::vector<double>> cuts(src.size());
  for (std::size_t x = 0; x < src.size(); ++x) {
    cuts[x].push_back(0.0);
    cuts[x].push_back(src.measure()[x]);
  }
  for (const auto& m : maps)
    for (std::size_t r = 0; r < m.parent.size(); ++r)
      if (m.cut_lo[r] > 0) cuts[m.parent[r]].push_back(m.cut_lo[r]);
  for (auto& c : cuts) {
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end(),
                        [](double a, double b) { return std::abs(a - b) <= 1e-15; }),
            c.end());
  }

  std::vector<double> piece_lo;
  for (std::size_t x = 0; x < src.size(); ++x)
    for (std::size_t p = 0; p + 1 < cuts[x].size(); ++p) {
      raw.ids.push_back(src.ids()[x] + "#" + std::to_string(p));
      raw.coords.push_back(src.coord(x));
      out.parent.push_back(x);
      piece_lo.push_back(cuts[x][p]);
    }
  const std::size_t nr = out.parent.size();
  raw.measure = Vec(nr);
  for (std::size_t r = 0; r < nr; ++r) {
    std::size_t x = out.parent[r];
    double hi = (r + 1 < nr && out.parent[r + 1] == x) ? piece_lo[r + 1] : src.measure()[x];
    raw.measure[r] = hi - piece_lo[r];
  }
  raw.dist = Mat(nr, nr);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nr; ++j) raw.dist(i, j) = src.dist(out.parent[i], out.parent[j]);
  out.refined = make_space(std::move(raw));

  for (const auto& m : maps) {
    std::vector<std::size_t> as(nr);
    // Walk each atom's pieces through the map's coarser interval partition.
    std::vector<std::vector<std::size_t>> map_rows(src.size());
    for (std::size_t r = 0; r < m.parent.size(); ++r) map_rows[m.parent[r]].push_back(r);
    for (std::size_t r = 0; r < nr; ++r) {
      std::size_t x = out.parent[r];
      double mid = piece_lo[r] + 0.5 * out.refined->measure()[r];
      std::size_t chosen = 0;
      for (std::size_t q : map_rows[x]) {
        if (m.cut_lo[q] <= mid) chosen = q;
      }
      as[r] = m.assign[chosen];
    }
    out.assign.push_back(std::move(as));
  }
  return out;
}

/// max-min Hausdorff distance between finite sets of functions on one space.
inline double hausdorff_distance(const DiscreteSpace& sp, const std::vector<Vec>& A,
                                 const std::vector<Vec>& B) {
  require(!A.empty() && !B.empty(), ErrorCode::EmptySet, "Hausdorff distance of an empty set");
  auto one_sided = [&](const std::vector<Vec>& P, const std::vector<Vec>& Q) {
    double worst = 0;
    for (const auto& p : P) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : Q) best = std::min(best, l2_norm(sp, p - q));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(one_sided(A, B), one_sided(B, A));
}

/// Panel of Lipschitz tent test functions xi(z) = max(0, 1 - |z - c| / r),
/// centered on an ambient grid with radii {1/4, 1/2, 1} x diagonal. Fixed
/// per experiment so gap sequences are comparable across indices.
struct TestPanel {
  std::vector<Vec> centers;
  std::vector<double> radii;

  static TestPanel over(const std::vector<const DiscreteSpace*>& spaces, int per_dim = 3) {
    require(!spaces.empty(), ErrorCode::InvalidParameter, "panel needs at least one space");
    Eigen::Index d = spaces.front()->ambient_dim();
    Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
    Vec hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
    for (const auto* sp : spaces) {
      require(sp->ambient_dim() == d, ErrorCode::DimensionMismatch, "ambient dimensions differ");
      for (const auto& c : sp->coords()) {
        lo = lo.cwiseMin(c);
        hi = hi.cwiseMax(c);
      }
    }
    double diag = std::max(1e-12, (hi - lo).norm());
    TestPanel panel;
    panel.radii = {0.25 * diag, 0.5 * diag, diag};
    std::vector<Vec> pts{Vec(d)};
    for (Eigen::Index axis = 0; axis < d; ++axis) {
      std::vector<Vec> next;
      for (const auto& p : pts)
        for (int g = 0; g < per_dim; ++g) {
          Vec q = p;
          q[axis] = lo[axis] + (hi[axis] - lo[axis]) * g / std::max(1, per_dim - 1);
          next.push_back(q);
        }
      pts = std::move(next);
    }
    panel.centers = std::move(pts);
    return panel;
  }

  double pair(const DiscreteSpace& sp, const Vec& f, const Vec& c, double r) const {
    double s = 0;
    for (std::size_t x = 0; x < sp.size(); ++x) {
      double t = std::max(0.0, 1.0 - (sp.coord(x) - c).norm() / r);
      s += sp.measure()[x] * f[x] * t;
    }
    return s;
  }

  /// max over the panel of | int f dm_space - int g dm_other |.
  double max_gap(const DiscreteSpace& sp_f, const Vec& f, const DiscreteSpace& sp_g,
                 const Vec& g) const {
    double worst = 0;
    for (const auto& c : centers)
      for (double r : radii)
        worst = std::max(worst, std::abs(pair(sp_f, f, c, r) - pair(sp_g, g, c, r)));
    return worst;
  }
};

enum class ConvergenceMode { Weak, Strong };

struct ConvergenceVerdict {
  std::vector<double> gaps;    // per index, max pairing gap against the panel
  std::vector<double> norms;   // per index, L^2(m_i) norms
  double limit_norm = 0;
  bool trend_ok = false;       // gaps settle: a numerical proxy, not a proof
  bool norm_ok = true;         // limsup ||f_i|| <= ||f|| (strong mode only)
  bool verdict = false;
  std::size_t panel_size = 0;
};

/// Weak/strong L^2 convergence across variable measures, tested in duality
/// with the fixed tent panel. Weak: pairing gaps trend down. Strong: the
/// tail norms must additionally not exceed the limit norm.
inline ConvergenceVerdict check_l2_convergence(const std::vector<L2Function>& family,
                                               const L2Function& limit, ConvergenceMode mode,
                                               double norm_slack = 0.02) {
  require(!family.empty(), ErrorCode::InvalidParameter, "empty family");
  std::vector<const DiscreteSpace*> spaces;
  for (const auto& f : family) spaces.push_back(f.space.get());
  spaces.push_back(limit.space.get());
  TestPanel panel = TestPanel::over(spaces);

  ConvergenceVerdict v;
  v.panel_size = panel.centers.size() * panel.radii.size();
  v.limit_norm = l2_norm(limit);
  for (const auto& f : family) {
    v.gaps.push_back(panel.max_gap(*f.space, f.values, *limit.space, limit.values));
    v.norms.push_back(l2_norm(f));
  }
  double head = v.gaps.front(), tail = v.gaps.back();
  v.trend_ok = tail <= head + 1e-12 && (v.gaps.size() < 3 || tail <= v.gaps[v.gaps.size() / 2] + 1e-12);
  if (mode == ConvergenceMode::Strong)
    v.norm_ok = v.norms.back() <= v.limit_norm * (1.0 + norm_slack) + 1e-9;
  v.verdict = v.trend_ok && (mode == ConvergenceMode::Weak || v.norm_ok);
  return v;
}

}  // namespace mmspec
