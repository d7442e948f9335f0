#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "mmspec/common.hpp"
#include "mmspec/energy.hpp"
#include "mmspec/flow.hpp"
#include "mmspec/space.hpp"

namespace mmspec {

/// Constrained functional on the unit ball with energy cap M:
///   Phi(u)  = Ch(u) if ||u|| <= 1 and Ch(u) <= M, else +inf,
///   Phi_L   = Phi - L ||u||^2, which is (-2L)-convex for L > 0.
/// With L > M the induced flow leaves the unit sphere invariant, so prox
/// steps from sphere points land back on the sphere up to solver tolerance.
class SphereCappedFunctional : public Functional {
 public:
  SphereCappedFunctional(EnergyPtr E, double cap_M, double shift_L)
      : E_(std::move(E)), M_(cap_M), L_(shift_L) {
    require(M_ > 0 && L_ > M_, ErrorCode::InvalidParameter, "need 0 < M < L");
    if (E_->is_quadratic()) {
      Mat Mm = Mat::Zero(E_->space().size(), E_->space().size());
      Mm.diagonal() = E_->space().measure();
      Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(E_->quadratic_matrix(), Mm);
      require(ges.info() == Eigen::Success, ErrorCode::SolverFailure, "eigendecomposition failed");
      evals_ = ges.eigenvalues().cwiseMax(0.0);
      basis_ = ges.eigenvectors();
    }
  }

  const DiscreteSpace& space() const override { return E_->space(); }
  const EnergyForm& energy() const { return *E_; }
  const EnergyPtr& energy_ptr() const { return E_; }
  double cap_M() const { return M_; }
  double shift_L() const { return L_; }
  double lambda_conv() const override { return -2.0 * L_; }

  bool in_domain(const Vec& u) const {
    double nu = l2_norm(E_->space(), u);
    return nu <= 1.0 + 1e-9 && E_->eval(u) <= M_ + 1e-9 * (1.0 + M_);
  }

  double value(const Vec& u) const override {
    if (!in_domain(u)) return std::numeric_limits<double>::infinity();
    double nu2 = l2_inner(E_->space(), u, u);
    return E_->eval(u) - L_ * nu2;
  }

  double slope(const Vec& u) const override {
    return descending_slope(*E_, u, SphereCapConstraint{M_, L_});
  }

  Vec prox(const Vec& u, double tau) const override {
    require(2.0 * tau * L_ < 1.0, ErrorCode::IllPosed, "tau violates the resolvent condition");
    if (E_->is_quadratic()) return prox_quadratic(u, tau);
    return prox_lq(u, tau);
  }

 private:
  // Ball-constrained prox in the m-orthonormal eigenbasis: the radial
  // multiplier mu >= 0 solves the secular equation sum z_j^2 / d_j^2 = 1
  // with d_j = 1 + 2 tau ((1+nu) lambda_j - L + mu). The cap multiplier
  // nu >= 0 only activates when the minimizer violates Ch <= M.
  Vec prox_quadratic(const Vec& u, double tau) const {
    Vec z = basis_.transpose() * (E_->space().measure().cwiseProduct(u));
    auto solve_ball = [&](double nu, double& mu_out) {
      auto norm2_at = [&](double mu) {
        double s = 0;
        for (Eigen::Index j = 0; j < z.size(); ++j) {
          double d = 1.0 + 2.0 * tau * ((1.0 + nu) * evals_[j] - L_ + mu);
          s += z[j] * z[j] / (d * d);
        }
        return s;
      };
      double mu = 0.0;
      if (norm2_at(0.0) > 1.0) {
        double lo = 0.0, hi = 1.0;
        while (norm2_at(hi) > 1.0) {
          lo = hi;
          hi *= 2.0;
          require(hi < 1e18, ErrorCode::SolverFailure, "radial multiplier diverged");
        }
        for (int it = 0; it < 200; ++it) {
          double mid = 0.5 * (lo + hi);
          double s = norm2_at(mid);
          if (std::abs(s - 1.0) <= 1e-14) {
            lo = hi = mid;
            break;
          }
          (s > 1.0 ? lo : hi) = mid;
          if (hi - lo <= 1e-16 * (1.0 + hi)) break;
        }
        mu = 0.5 * (lo + hi);
      }
      mu_out = mu;
      Vec v(z.size());
      for (Eigen::Index j = 0; j < z.size(); ++j) {
        double d = 1.0 + 2.0 * tau * ((1.0 + nu) * evals_[j] - L_ + mu);
        v[j] = z[j] / d;
      }
      return v;
    };

    double mu = 0;
    Vec v = solve_ball(0.0, mu);
    double ch = evals_.dot(v.cwiseProduct(v));
    if (ch > M_ * (1.0 + 1e-11)) {
      // Energy cap active: outer bisection on the cap multiplier.
      double lo = 0.0, hi = 1.0;
      while (true) {
        Vec w = solve_ball(hi, mu);
        if (evals_.dot(w.cwiseProduct(w)) <= M_) break;
        lo = hi;
        hi *= 2.0;
        require(hi < 1e18, ErrorCode::SolverFailure, "cap multiplier diverged");
      }
      for (int it = 0; it < 120; ++it) {
        double mid = 0.5 * (lo + hi);
        Vec w = solve_ball(mid, mu);
        double c = evals_.dot(w.cwiseProduct(w));
        if (std::abs(c - M_) <= 1e-11 * (1.0 + M_)) {
          lo = hi = mid;
          break;
        }
        (c > M_ ? lo : hi) = mid;
      }
      v = solve_ball(0.5 * (lo + hi), mu);
    }
    return basis_ * v;
  }

  Vec prox_lq(const Vec& u, double tau) const {
    const DiscreteSpace& sp = E_->space();
    double tol = 1e-11 * (1.0 + l2_norm(sp, u));
    Vec warm = u;
    auto solve_at = [&](double extra_scale, double mu) {
      // minimize extra_scale * Ch + (mu - L)||.||^2 + ||. - u||^2 / (2 tau)
      warm = lq_prox_minimize(*E_, extra_scale, mu - L_, u, tau, tol, &warm);
      return warm;
    };
    // Radial multiplier via Illinois regula falsi on g(mu) = ||v(mu)|| - 1;
    // warm starts make each inner solve a short correction.
    auto ball_solve = [&](double scale) {
      Vec v = solve_at(scale, 0.0);
      double g_lo = l2_norm(sp, v) - 1.0;
      if (g_lo <= 1e-12) return v;
      double lo = 0.0, hi = std::max(1.0, g_lo / tau);
      Vec v_hi = solve_at(scale, hi);
      double g_hi = l2_norm(sp, v_hi) - 1.0;
      while (g_hi > 0) {
        lo = hi;
        g_lo = g_hi;
        hi *= 4.0;
        require(hi < 1e18, ErrorCode::SolverFailure, "radial multiplier diverged");
        v_hi = solve_at(scale, hi);
        g_hi = l2_norm(sp, v_hi) - 1.0;
      }
      Vec best = v_hi;
      double side = 0;
      for (int it = 0; it < 100; ++it) {
        double mu = (g_lo * hi - g_hi * lo) / (g_lo - g_hi);
        if (!(mu > lo && mu < hi)) mu = 0.5 * (lo + hi);
        best = solve_at(scale, mu);
        double g = l2_norm(sp, best) - 1.0;
        if (std::abs(g) <= 1e-11) return best;
        if (g > 0) {
          lo = mu;
          g_lo = g;
          if (side == -1) g_hi *= 0.5;
          side = -1;
        } else {
          hi = mu;
          g_hi = g;
          if (side == 1) g_lo *= 0.5;
          side = 1;
        }
      }
      return best;
    };
    Vec v = ball_solve(1.0);
    double ch = E_->eval(v);
    if (ch <= M_ * (1.0 + 1e-9)) return v;
    // Energy cap active: outer loop on the cap multiplier, rare in practice
    // because the flow is energy-decreasing.
    double lo = 1.0, hi = 2.0;
    while (E_->eval(ball_solve(hi)) > M_) {
      lo = hi;
      hi *= 2.0;
      require(hi < 1e18, ErrorCode::SolverFailure, "cap multiplier diverged");
    }
    Vec best = v;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      best = ball_solve(mid);
      double c = E_->eval(best);
      if (std::abs(c - M_) <= 1e-9 * (1.0 + M_)) break;
      (c > M_ ? lo : hi) = mid;
    }
    return best;
  }

  EnergyPtr E_;
  double M_, L_;
  Vec evals_;
  Mat basis_;
};

/// M = lambda_est + 1 and L = M + 1; the smallest integer margin keeps the
/// convexity modulus -2L mild so the resolvent condition tau < 1/(2L) is easy.
inline SphereCappedFunctional build_phi(EnergyPtr E, double lambda_est) {
  require(lambda_est >= 0, ErrorCode::InvalidParameter, "energy level must be nonnegative");
  double M = lambda_est + 1.0;
  return SphereCappedFunctional(std::move(E), M, M + 1.0);
}

/// Element of minimal norm in the Frechet subdifferential of Phi_L/2 at a
/// sphere point below the cap: -Delta u - Ch(u) u. Tangential by the Euler
/// identity, and zero exactly at eigenfunctions.
inline Vec phi_minimal_selection(const SphereCappedFunctional& cf, const Vec& u) {
  const EnergyForm& E = cf.energy();
  double nu = l2_norm(E.space(), u);
  require(std::abs(nu - 1.0) <= 1e-9, ErrorCode::OutsideDomain, "not a unit vector");
  double ch = E.eval(u);
  require(ch < cf.cap_M(), ErrorCode::OutsideDomain, "energy cap reached");
  return laplacian(E, u) - ch * u;
}

struct SphereFlowResult {
  FlowTrajectory traj;          // unit-normalized states
  std::vector<double> drift;    // per-step pre-normalization |1 - ||v|||
  double max_drift = 0;
  bool energy_monotone = true;  // Ch nonincreasing within 1e-9
};

/// Runs the flow of Phi_L from a sphere point, renormalizing after each prox
/// step. The continuous flow preserves the sphere exactly (L > M), so the
/// pre-normalization drift must stay below 5e-6 * tau * L per step;
/// exceeding it signals that tau is too large.
inline SphereFlowResult sphere_flow_run(const SphereCappedFunctional& cf, const Vec& u0, double T,
                                        double tau) {
  const DiscreteSpace& sp = cf.space();
  double n0 = l2_norm(sp, u0);
  require(std::abs(n0 - 1.0) <= 1e-9, ErrorCode::OutsideDomain, "start must be a unit vector");
  require(cf.energy().eval(u0) <= cf.cap_M() * (1.0 + 1e-9), ErrorCode::OutsideDomain,
          "start violates the energy cap");
  const double drift_bound = 5e-6 * tau * cf.shift_L();

  SphereFlowResult res;
  res.traj.u0 = u0;
  res.traj.tau = tau;
  Vec u = u0 / n0;
  double ch = cf.energy().eval(u);
  res.traj.steps.push_back({0.0, u, ch, cf.slope(u), 0.0, 1.0});
  const int n_steps = static_cast<int>(std::ceil(T / tau - 1e-12));
  for (int n = 0; n < n_steps; ++n) {
    Vec v = cf.prox(u, tau);
    double nv = l2_norm(sp, v);
    double drift = std::abs(nv - 1.0);
    res.drift.push_back(drift);
    res.max_drift = std::max(res.max_drift, drift);
    require(drift <= drift_bound, ErrorCode::InvarianceBroken,
            "sphere drift " + std::to_string(drift) + " exceeds bound; reduce tau");
    u = v / nv;
    double ch_next = cf.energy().eval(u);
    if (ch_next > ch + 1e-9 * (1.0 + ch)) res.energy_monotone = false;
    ch = ch_next;
    res.traj.steps.push_back({tau * (n + 1), u, ch, cf.slope(u), drift, 1.0});
  }
  return res;
}

/// (lambda, u, residual) with u on the unit sphere; residual is
/// || -Delta u - Ch(u) u || in L^2(m). `converged` is false when the
/// iteration cap was reached (best iterate returned, tagged).
struct EigenPair {
  double lambda = 0;
  Vec u;
  double residual = 0;
  bool converged = false;
  int steps_used = 0;
};

inline double eigen_residual(const EnergyForm& E, const Vec& u) {
  return l2_norm(E.space(), Vec(laplacian(E, u) - E.eval(u) * u));
}

/// Flows u0 (unit norm) down the sphere-constrained energy until the
/// eigenvalue equation -Delta u = Ch(u) u holds to `tol`. By flow
/// monotonicity the returned level satisfies lambda <= Ch(u0).
inline EigenPair find_eigenpair(const EnergyPtr& E, const Vec& u0, double tol = 1e-8,
                                int max_steps = 40000) {
  const DiscreteSpace& sp = E->space();
  double n0 = l2_norm(sp, u0);
  require(n0 > 0, ErrorCode::InvalidParameter, "start must be nonzero");
  Vec u = u0 / n0;
  SphereCappedFunctional cf = build_phi(E, E->eval(u));
  const double tau_max = 0.2 / cf.shift_L();
  double tau = tau_max;

  EigenPair best;
  best.u = u;
  best.lambda = E->eval(u);
  best.residual = eigen_residual(*E, u);
  int total = 0;
  const int block = 64;
  while (true) {
    double r = eigen_residual(*E, u);
    if (r < best.residual) {
      best.u = u;
      best.lambda = E->eval(u);
      best.residual = r;
    }
    best.steps_used = total;
    if (r <= tol) {
      best.converged = true;
      best.u = u;
      best.lambda = E->eval(u);
      best.residual = r;
      return best;
    }
    if (total >= max_steps) return best;  // cap hit: best iterate, tagged

    // Rough starts force tiny steps (high modes make the prox dip inside
    // the ball); the flow smooths them out quickly, so tau re-grows after
    // every clean block.
    bool stepped = false;
    while (!stepped) {
      try {
        auto run = sphere_flow_run(cf, u, block * tau, tau);
        u = run.traj.last();
        stepped = true;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InvarianceBroken) throw;
        tau *= 0.5;  // drift signalled tau too large
        require(tau > 1e-14, ErrorCode::SolverFailure, "tau underflow in eigen search");
      }
    }
    tau = std::min(2.0 * tau, tau_max);
    total += block;
  }
}

/// Multistart probe of the critical set K_lambda at a given energy level.
/// Starts alternate between raw Gaussian directions and mean-free ones (the
/// flow preserves orthogonality to constants, letting it settle on elevated
/// levels). Results are filtered to |Ch(u) - level| <= 1e-6 (1 + level) and
/// deduplicated at pairwise distance 1e-3; more than two distinct
/// representatives evidences genus(K_lambda) >= 2.
struct CriticalProbeResult {
  std::vector<EigenPair> representatives;
  Mat pairwise_dist;
  int starts_used = 0;
};

inline CriticalProbeResult critical_set_probe(const EnergyPtr& E, double level, int n_starts,
                                              double tol = 1e-8, std::uint64_t seed = 0,
                                              unsigned jobs = 0) {
  require(n_starts >= 1, ErrorCode::InvalidParameter, "need at least one start");
  const DiscreteSpace& sp = E->space();
  Rng root(seed);
  std::vector<EigenPair> found(static_cast<std::size_t>(n_starts));
  parallel_for(
      static_cast<std::size_t>(n_starts),
      [&](std::size_t i) {
        Rng rng = root.fork(i);
        Vec u = rng.normal_vec(static_cast<Eigen::Index>(sp.size()));
        if (i % 2 == 1) u -= Vec::Constant(u.size(), l2_mean(sp, u));
        double nu = l2_norm(sp, u);
        if (nu < 1e-12) u = Vec::Ones(u.size());
        found[i] = find_eigenpair(E, u, tol);
      },
      jobs);

  std::vector<EigenPair> hits;
  for (auto& p : found)
    if (p.converged && std::abs(p.lambda - level) <= 1e-6 * (1.0 + level)) hits.push_back(p);
  std::sort(hits.begin(), hits.end(), [](const EigenPair& a, const EigenPair& b) {
    if (a.lambda != b.lambda) return a.lambda < b.lambda;
    return std::lexicographical_compare(a.u.data(), a.u.data() + a.u.size(), b.u.data(),
                                        b.u.data() + b.u.size());
  });
  CriticalProbeResult res;
  res.starts_used = n_starts;
  for (const auto& p : hits) {
    bool distinct = true;
    for (const auto& q : res.representatives)
      if (l2_norm(sp, p.u - q.u) <= 1e-3) distinct = false;
    if (distinct) res.representatives.push_back(p);
  }
  const std::size_t k = res.representatives.size();
  res.pairwise_dist = Mat::Zero(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j)
      res.pairwise_dist(i, j) = res.pairwise_dist(j, i) =
          l2_norm(sp, res.representatives[i].u - res.representatives[j].u);
  return res;
}

/// Member tests for the tubular neighborhood U_{lambda,r} around the found
/// critical points and the energy/slope set N_{lambda,delta}.
struct CriticalNeighborhood {
  double level;
  double radius;
  double slack;
  std::vector<Vec> critical_points;

  bool in_U(const DiscreteSpace& sp, const Vec& v) const {
    for (const auto& k : critical_points)
      if (l2_norm(sp, v - k) < radius) return true;
    return false;
  }

  bool in_N(const SphereCappedFunctional& cf, const Vec& v) const {
    double phi = cf.energy().eval(v);
    if (std::abs(phi - level) > slack) return false;
    double s = cf.slope(v);
    return s * s <= 4.0 * slack;
  }
};

}  // namespace mmspec
