#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "mmspec/common.hpp"
#include "mmspec/energy.hpp"
#include "mmspec/flow.hpp"
#include "mmspec/sphere.hpp"
#include "mmspec/space.hpp"

namespace mmspec {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// m-orthonormalizing Gram-Schmidt; drops directions below `eps`.
inline std::vector<Vec> gram_schmidt_m(const DiscreteSpace& sp, std::vector<Vec> vs,
                                       double eps = 1e-12) {
  std::vector<Vec> out;
  for (auto& v : vs) {
    for (const auto& b : out) v -= l2_inner(sp, v, b) * b;
    double n = l2_norm(sp, v);
    if (n > eps) out.push_back(v / n);
  }
  return out;
}

/// V = S(L): the unit sphere of a k-dimensional subspace, represented by an
/// m-orthonormal basis. Its Krasnoselskii genus equals k.
struct SubspaceFamily {
  SpacePtr space;
  std::vector<Vec> basis;

  static SubspaceFamily make(SpacePtr sp, std::vector<Vec> basis) {
    SubspaceFamily f{std::move(sp), std::move(basis)};
    f.check_orthonormal();
    return f;
  }

  std::size_t dim() const { return basis.size(); }

  void check_orthonormal(double tol = 1e-10) const {
    for (std::size_t i = 0; i < basis.size(); ++i)
      for (std::size_t j = i; j < basis.size(); ++j) {
        double g = l2_inner(*space, basis[i], basis[j]);
        double want = (i == j) ? 1.0 : 0.0;
        require(std::abs(g - want) <= tol, ErrorCode::NotOrthonormal,
                "basis Gram matrix deviates from the identity");
      }
  }
};

struct RayleighSup {
  double value = 0;
  Vec maximizer;
  bool certified = false;    // deterministic grid bound available (k <= 3)
  double grid_step_deg = 0;  // resolution of that grid
};

/// sup { Ch(v) : v in S(L) } over the sphere of span(basis).
///
/// Quadratic energies: largest eigenvalue of the k x k restricted form,
/// exact. Otherwise multistart projected ascent (the power iteration of the
/// convex 2-homogeneous restriction), plus a deterministic angular grid for
/// k <= 3 whose value is a certified-to-grid lower bound of the true sup.
inline RayleighSup rayleigh_sup_on_sphere(const EnergyForm& E, const std::vector<Vec>& basis,
                                          std::uint64_t seed = 0, int ascent_starts = 32,
                                          double grid_step_deg = 1.0) {
  const DiscreteSpace& sp = E.space();
  const std::size_t k = basis.size();
  require(k >= 1, ErrorCode::InvalidK, "need at least one basis function");
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      double g = l2_inner(sp, basis[i], basis[j]);
      require(std::abs(g - ((i == j) ? 1.0 : 0.0)) <= 1e-8, ErrorCode::NotOrthonormal,
              "rayleigh_sup_on_sphere requires an orthonormal basis");
    }

  auto assemble = [&](const Vec& c) {
    Vec u = Vec::Zero(sp.size());
    for (std::size_t i = 0; i < k; ++i) u += c[static_cast<Eigen::Index>(i)] * basis[i];
    return u;
  };

  RayleighSup out;
  if (E.is_quadratic()) {
    const Mat& A = E.quadratic_matrix();
    Mat R(k, k);
    for (std::size_t i = 0; i < k; ++i) {
      Vec Abi = A * basis[i];
      for (std::size_t j = i; j < k; ++j) R(i, j) = R(j, i) = basis[j].dot(Abi);
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(R);
    out.value = es.eigenvalues()(static_cast<Eigen::Index>(k) - 1);
    out.maximizer = assemble(es.eigenvectors().col(static_cast<Eigen::Index>(k) - 1));
    out.certified = true;
    return out;
  }

  auto g_val = [&](const Vec& c) { return E.eval(assemble(c)); };
  double best = -1;
  Vec best_c = Vec::Unit(k, 0);

  // Power/ascent iterations from random directions.
  Rng rng(seed);
  for (int s = 0; s < ascent_starts; ++s) {
    Vec c = rng.normal_vec(static_cast<Eigen::Index>(k));
    double nc = c.norm();
    if (nc < 1e-12) continue;
    c /= nc;
    for (int it = 0; it < 500; ++it) {
      Vec u = assemble(c);
      Vec xi = 2.0 * E.half_subdifferential(u).solve().point;
      Vec grad(k);
      for (std::size_t i = 0; i < k; ++i) grad[static_cast<Eigen::Index>(i)] = l2_inner(sp, xi, basis[i]);
      double ng = grad.norm();
      if (ng < 1e-14) break;
      Vec cn = grad / ng;
      if ((cn - c).norm() < 1e-13) {
        c = cn;
        break;
      }
      c = cn;
    }
    double v = g_val(c);
    if (v > best) {
      best = v;
      best_c = c;
    }
  }

  // Deterministic angular grid for small k (even function: half sphere).
  if (k <= 3) {
    out.certified = true;
    out.grid_step_deg = grid_step_deg;
    const double deg = 3.14159265358979323846 / 180.0;
    if (k == 1) {
      double v = g_val(Vec::Unit(1, 0));
      if (v > best) {
        best = v;
        best_c = Vec::Unit(1, 0);
      }
    } else if (k == 2) {
      for (double th = 0; th < 180.0; th += grid_step_deg) {
        Vec c(2);
        c << std::cos(th * deg), std::sin(th * deg);
        double v = g_val(c);
        if (v > best) {
          best = v;
          best_c = c;
        }
      }
    } else {
      for (double ph = 0; ph <= 90.0; ph += grid_step_deg)
        for (double ps = 0; ps < 360.0; ps += grid_step_deg) {
          Vec c(3);
          c << std::sin(ph * deg) * std::cos(ps * deg), std::sin(ph * deg) * std::sin(ps * deg),
              std::cos(ph * deg);
          double v = g_val(c);
          if (v > best) {
            best = v;
            best_c = c;
          }
          if (ph == 0.0) break;  // pole: psi redundant
        }
    }
  }
  out.value = best;
  out.maximizer = assemble(best_c);
  return out;
}

struct MinMaxResult {
  double value = 0;          // Lambda_k: upper bound for lambda_k, exact for quadratic kinds
  std::vector<Vec> basis;    // realizing orthonormal k-frame (empty when value is +inf)
  bool exact = false;        // quadratic kind
  bool inner_max_certified = false;
  Vec inner_maximizer;
};

/// Krasnoselskii min-max value over subspace spheres:
///   Lambda_k = min over orthonormal k-frames of sup_{S(span)} Ch.
///
/// The family is restricted to subspace spheres S(L), admissible because
/// genus(S(L)) = dim L; for non-quadratic energies the returned value is an
/// upper bound for the full min-max value and is labelled exact only for
/// quadratic kinds.
///
/// The outer minimization runs the heat semigroup on a buffered frame with
/// re-orthonormalization (inverse-power subspace iteration); for quadratic
/// energies this converges to the bottom-k eigenframe, reproducing
/// Courant-Fischer. `budget` random restarts, deterministic in `seed`.
inline MinMaxResult minmax_upper_bound(const EnergyPtr& E, std::size_t k, int budget = 16,
                                       std::uint64_t seed = 0, unsigned jobs = 0) {
  const DiscreteSpace& sp = E->space();
  const std::size_t n = sp.size();
  require(k >= 1, ErrorCode::InvalidK, "k must be at least 1");
  MinMaxResult res;
  if (k > n) {  // no k-dimensional subspace exists: inf over the empty family
    res.value = kInf;
    res.exact = E->is_quadratic();
    return res;
  }
  if (n == 1) {
    res.value = 0.0;
    res.basis = {Vec::Ones(1)};
    res.exact = true;
    res.inner_max_certified = true;
    res.inner_maximizer = Vec::Ones(1);
    return res;
  }

  const std::size_t buf = std::min<std::size_t>(n, k + 2);
  ScaledEnergyFunctional semigroup(E, 1.0);

  auto run_restart = [&](std::uint64_t stream) {
    Rng rng = Rng(seed).fork(stream);
    std::vector<Vec> frame;
    for (std::size_t i = 0; i < buf; ++i)
      frame.push_back(rng.normal_vec(static_cast<Eigen::Index>(n)));
    frame = gram_schmidt_m(sp, std::move(frame));

    double best_val = kInf;
    std::vector<Vec> best_frame;
    double tau = 0.0, tau_level = kInf;
    int stall = 0;
    const int max_it = E->is_quadratic() ? 20000 : 600;
    const int stall_limit = E->is_quadratic() ? 40 : 25;
    for (int it = 0; it < max_it && stall < stall_limit; ++it) {
      // Rayleigh-Ritz within the buffered frame, then keep the bottom-k
      // Ritz directions as the candidate subspace.
      std::vector<Vec> cand;
      double cand_val;
      if (E->is_quadratic()) {
        const Mat& A = E->quadratic_matrix();
        const std::size_t kb = frame.size();
        Mat R(kb, kb);
        for (std::size_t i = 0; i < kb; ++i) {
          Vec Abi = A * frame[i];
          for (std::size_t j = i; j < kb; ++j) R(i, j) = R(j, i) = frame[j].dot(Abi);
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(R);
        cand.reserve(k);
        for (std::size_t c = 0; c < k; ++c) {
          Vec u = Vec::Zero(n);
          for (std::size_t i = 0; i < kb; ++i) u += es.eigenvectors()(i, c) * frame[i];
          cand.push_back(std::move(u));
        }
        cand = gram_schmidt_m(sp, std::move(cand));
        cand_val = (cand.size() == k)
                       ? rayleigh_sup_on_sphere(*E, cand).value
                       : kInf;
      } else {
        cand.assign(frame.begin(), frame.begin() + std::min(frame.size(), k));
        cand = gram_schmidt_m(sp, std::move(cand));
        cand_val = (cand.size() == k && (it % 5 == 0 || it > 550))
                       ? rayleigh_sup_on_sphere(*E, cand, seed ^ stream, 8).value
                       : kInf;
      }
      if (std::isfinite(cand_val)) {
        if (cand_val < best_val - 1e-12 * (1.0 + std::abs(cand_val))) {
          best_val = cand_val;
          best_frame = cand;
          stall = 0;
        } else {
          ++stall;
        }
      }

      // Semigroup step sized to the current level; refresh as the value
      // drops so the end-game contraction stays strong.
      double level = std::isfinite(best_val) ? best_val : 1.0;
      if (tau == 0.0 || level < 0.5 * tau_level) {
        tau = 1.0 / (1.0 + level);
        tau_level = level;
      }
      std::vector<Vec> next;
      next.reserve(frame.size());
      for (const auto& v : frame) next.push_back(semigroup.prox(v, tau));
      next = gram_schmidt_m(sp, std::move(next));
      while (next.size() < buf) {
        Vec extra = rng.normal_vec(static_cast<Eigen::Index>(n));
        for (const auto& b : next) extra -= l2_inner(sp, extra, b) * b;
        double ne = l2_norm(sp, extra);
        if (ne > 1e-12) next.push_back(extra / ne);
      }
      frame = std::move(next);
    }
    return std::make_pair(best_val, best_frame);
  };

  std::vector<std::pair<double, std::vector<Vec>>> results(
      static_cast<std::size_t>(std::max(1, budget)));
  parallel_for(
      results.size(), [&](std::size_t i) { results[i] = run_restart(i); }, jobs);

  double best = kInf;
  std::vector<Vec> best_frame;
  for (const auto& [v, f] : results)
    if (v < best) {
      best = v;
      best_frame = f;
    }
  require(std::isfinite(best), ErrorCode::SolverFailure, "min-max search produced no frame");

  auto sup = rayleigh_sup_on_sphere(*E, best_frame, seed);
  res.value = sup.value;
  res.basis = std::move(best_frame);
  res.exact = E->is_quadratic();
  res.inner_max_certified = sup.certified;
  res.inner_maximizer = sup.maximizer;
  return res;
}

struct QuadraticSpectrum {
  Vec values;               // ascending, repeated by multiplicity
  std::vector<Vec> basis;   // m-orthonormal eigenbasis
};

/// Independent dense oracle: the full generalized symmetric eigenproblem
/// A u = lambda M u of a quadratic energy.
inline QuadraticSpectrum quadratic_oracle(const EnergyForm& E) {
  require(E.is_quadratic(), ErrorCode::NotQuadratic, "oracle needs a quadratic energy");
  const DiscreteSpace& sp = E.space();
  const Mat& A = E.quadratic_matrix();
  Mat Mm = Mat::Zero(sp.size(), sp.size());
  Mm.diagonal() = sp.measure();
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(A, Mm);
  require(ges.info() == Eigen::Success, ErrorCode::SolverFailure, "eigendecomposition failed");
  QuadraticSpectrum out;
  out.values = ges.eigenvalues().cwiseMax(0.0);
  double scale = 1.0 + A.cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < out.values.size(); ++j) {
    Vec v = ges.eigenvectors().col(j);
    double resid = (A * v - out.values[j] * Mm * v).norm();
    require(resid <= 1e-10 * scale * (1.0 + out.values[j]), ErrorCode::SolverFailure,
            "oracle residual too large");
    out.basis.push_back(std::move(v));
  }
  return out;
}

struct DivergenceReport {
  std::vector<double> values;        // Lambda_1 .. Lambda_kmax (may be +inf)
  bool nondecreasing = true;
  bool finite_within_dimension = true;
  std::vector<double> growth_ratio;  // Lambda_k / Lambda_ceil(k/2), NaN when undefined
};

/// Finite-dimensional probe of the divergence lambda_k -> infinity: values
/// must be nondecreasing, finite for k <= n, and the growth trend
/// Lambda_k >= Lambda_ceil(k/2) is reported as a ratio per k.
inline DivergenceReport divergence_check(const EnergyPtr& E, std::size_t k_max, int budget = 16,
                                         std::uint64_t seed = 0, unsigned jobs = 0) {
  DivergenceReport rep;
  const std::size_t n = E->space().size();
  for (std::size_t k = 1; k <= k_max; ++k)
    rep.values.push_back(minmax_upper_bound(E, k, budget, seed, jobs).value);
  for (std::size_t k = 1; k < rep.values.size(); ++k)
    if (rep.values[k] < rep.values[k - 1] - 1e-9 * (1.0 + std::abs(rep.values[k - 1])))
      rep.nondecreasing = false;
  for (std::size_t k = 0; k < rep.values.size(); ++k)
    if (k < n && !std::isfinite(rep.values[k])) rep.finite_within_dimension = false;
  rep.growth_ratio.assign(rep.values.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 1; k <= rep.values.size(); ++k) {
    std::size_t half = (k + 1) / 2;
    double denom = rep.values[half - 1];
    if (std::isfinite(denom) && denom > 0 && std::isfinite(rep.values[k - 1]))
      rep.growth_ratio[k - 1] = rep.values[k - 1] / denom;
  }
  return rep;
}

struct SpectrumRow {
  std::size_t k;
  double lambda_upper;
  bool exact;
  bool inner_max_certified;
  double matched_lambda = std::numeric_limits<double>::quiet_NaN();
  double matched_residual = std::numeric_limits<double>::quiet_NaN();
};

struct SpectrumReport {
  std::vector<SpectrumRow> rows;
  std::vector<EigenPair> eigenpairs;       // one per finite row, flow-refined
  std::vector<std::vector<Vec>> bases;     // realizing frames

  void to_csv(std::ostream& os, std::uint64_t config_hash, double tol) const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "# config_hash=%016llx tol=%.3g\n",
                  static_cast<unsigned long long>(config_hash), tol);
    os << buf;
    os << "k,lambda_upper,exact_flag,inner_max_certified,residual_of_matched_eigenpair\n";
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%d,%d,%.17g\n", r.k, r.lambda_upper,
                    r.exact ? 1 : 0, r.inner_max_certified ? 1 : 0, r.matched_residual);
      os << buf;
    }
  }
};

/// Lambda_k table for k = 1..k_max plus, per finite level, an eigenpair
/// obtained by flowing the inner maximizer down the sphere (its level
/// cannot exceed Lambda_k by flow monotonicity).
inline SpectrumReport compute_spectrum_report(const EnergyPtr& E, std::size_t k_max,
                                              int budget = 16, std::uint64_t seed = 0,
                                              double eigen_tol = 1e-8, unsigned jobs = 0) {
  SpectrumReport rep;
  for (std::size_t k = 1; k <= k_max; ++k) {
    MinMaxResult mm = minmax_upper_bound(E, k, budget, seed, jobs);
    SpectrumRow row{k, mm.value, mm.exact, mm.inner_max_certified};
    if (std::isfinite(mm.value) && mm.inner_maximizer.size() > 0) {
      EigenPair p = find_eigenpair(E, mm.inner_maximizer, eigen_tol);
      if (p.converged && std::abs(p.lambda - mm.value) <= 1e-6 * (1.0 + mm.value)) {
        row.matched_lambda = p.lambda;
        row.matched_residual = p.residual;
      }
      rep.eigenpairs.push_back(std::move(p));
    }
    rep.bases.push_back(mm.basis);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace mmspec
