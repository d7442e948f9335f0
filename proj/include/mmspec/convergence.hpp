#pragma once

#include <cmath>
#include <memory>
#include <ostream>
#include <vector>

#include "mmspec/common.hpp"
#include "mmspec/energy.hpp"
#include "mmspec/flow.hpp"
#include "mmspec/space.hpp"
#include "mmspec/spectrum.hpp"
#include "mmspec/transport.hpp"

namespace mmspec {

struct FamilyMember {
  SpacePtr space;
  EnergyPtr energy;
};

enum class FamilyKind { Refining, Collapsing, MeasurePerturbed };

/// Ordered family of spaces with energies, converging (by construction) to
/// a designated limit pair inside one ambient coordinate system. The W2
/// trend toward the limit is checked and reported, not enforced.
struct ConvergingFamily {
  std::vector<FamilyMember> members;
  FamilyMember limit;
  FamilyKind kind = FamilyKind::Refining;

  void validate() const {
    require(!members.empty(), ErrorCode::InvalidParameter, "family needs members");
    for (const auto& m : members)
      require(m.space->ambient_dim() == limit.space->ambient_dim(), ErrorCode::DimensionMismatch,
              "family members must share the ambient dimension");
  }

  std::vector<double> w2_costs_to_limit() const {
    std::vector<double> w2;
    for (const auto& m : members) w2.push_back(std::sqrt(solve_ot(m.space, limit.space).cost));
    return w2;
  }
};

/// pi_i-side transfer bundle for one member: the almost-optimal map
/// T_i : X_i -> X (here exactly optimal), the pullback isometry
/// pi_i(f) = f o T_i landing on the refined member space, and the heat
/// kernel of the lifted energy.
struct PiTransfer {
  Isometry iso;
  EnergyPtr refined_energy;
  std::shared_ptr<HeatKernel> kernel;
};

inline PiTransfer make_pi_transfer(const FamilyMember& member, const FamilyMember& limit) {
  CouplingPlan plan = solve_ot(member.space, limit.space);
  TransportMap map = plan_to_map(plan);
  PiTransfer t{Isometry{IsometryDirection::PiLimitToApproximant, std::move(map)}, nullptr, nullptr};
  t.refined_energy = std::make_shared<EnergyForm>(
      refine_energy(*member.energy, t.iso.map.refined_source, t.iso.map.parent));
  t.kernel = std::make_shared<HeatKernel>(t.refined_energy);
  return t;
}

struct MoscoReport {
  std::vector<double> ch_recovered;   // Ch^i(h_t^i pi_i f), lifted energies
  std::vector<double> ch_pulled;      // Ch^i(pi_i f), no smoothing (liminf proxy)
  std::vector<double> gaps;           // |ch_recovered - Ch(h_t f)|
  double ch_limit_smoothed = 0;       // Ch(h_t f)
  double ch_limit = 0;                // Ch(f)
  ConvergenceVerdict strong;          // f_i -> h_t f, strong mode
  bool gaps_decreasing = false;
  bool upper_ok = false;              // tail: ch_recovered <= 1.05 Ch(f)
  bool liminf_ok = false;             // tail: ch_pulled >= 0.95 Ch(f)
};

/// Recovery-sequence check for Mosco convergence: f_i = h_t^i(pi_i f) must
/// approach h_t f strongly with energies settling under Ch(f).
inline MoscoReport mosco_recovery_check(const ConvergingFamily& family, const L2Function& f,
                                        double t) {
  family.validate();
  require(f.space == family.limit.space, ErrorCode::SpaceMismatch, "f must live on the limit");
  require(t > 0, ErrorCode::InvalidParameter, "time must be positive");

  MoscoReport rep;
  rep.ch_limit = family.limit.energy->eval(f.values);
  HeatKernel limit_kernel(family.limit.energy);
  Vec htf = limit_kernel.apply(f.values, t);
  rep.ch_limit_smoothed = family.limit.energy->eval(htf);

  std::vector<L2Function> recovered;
  for (const auto& member : family.members) {
    PiTransfer tr = make_pi_transfer(member, family.limit);
    Vec pulled = tr.iso.apply(f.values);
    Vec smoothed = tr.kernel->apply(pulled, t);
    rep.ch_pulled.push_back(tr.refined_energy->eval(pulled));
    rep.ch_recovered.push_back(tr.refined_energy->eval(smoothed));
    rep.gaps.push_back(std::abs(rep.ch_recovered.back() - rep.ch_limit_smoothed));
    recovered.emplace_back(tr.iso.map.refined_source, std::move(smoothed));
  }
  rep.strong = check_l2_convergence(recovered, L2Function(family.limit.space, htf),
                                    ConvergenceMode::Strong);
  rep.gaps_decreasing = rep.gaps.back() <= rep.gaps.front() + 1e-12;
  rep.upper_ok = rep.ch_recovered.back() <= 1.05 * rep.ch_limit + 1e-12;
  rep.liminf_ok = rep.ch_pulled.back() >= 0.95 * rep.ch_limit - 1e-12;
  return rep;
}

/// Uniform angular net on S(L). Resolution applies for dim <= 3; higher
/// dimensions fall back to a seeded symmetric sample, resolution NaN.
inline std::vector<Vec> sphere_net(const SubspaceFamily& V, double resolution_deg,
                                   std::uint64_t seed = 0) {
  const double deg = 3.14159265358979323846 / 180.0;
  std::vector<Vec> net;
  auto assemble = [&](const Vec& c) {
    Vec u = Vec::Zero(V.space->size());
    for (std::size_t i = 0; i < V.basis.size(); ++i) u += c[static_cast<Eigen::Index>(i)] * V.basis[i];
    return u;
  };
  const std::size_t k = V.dim();
  if (k == 1) {
    net.push_back(V.basis[0]);
    net.push_back(-V.basis[0]);
  } else if (k == 2) {
    for (double th = 0; th < 360.0; th += resolution_deg) {
      Vec c(2);
      c << std::cos(th * deg), std::sin(th * deg);
      net.push_back(assemble(c));
    }
  } else if (k == 3) {
    for (double ph = 0; ph <= 180.0; ph += resolution_deg) {
      for (double ps = 0; ps < 360.0; ps += resolution_deg) {
        Vec c(3);
        c << std::sin(ph * deg) * std::cos(ps * deg), std::sin(ph * deg) * std::sin(ps * deg),
            std::cos(ph * deg);
        net.push_back(assemble(c));
        if (ph == 0.0 || ph == 180.0) break;
      }
    }
  } else {
    Rng rng(seed);
    for (std::size_t s = 0; s < 2 * k * k; ++s) {
      Vec c = rng.normal_vec(static_cast<Eigen::Index>(k));
      double nc = c.norm();
      if (nc < 1e-12) continue;
      net.push_back(assemble(c / nc));
      net.push_back(assemble(-c / nc));
    }
  }
  return net;
}

struct TransferMemberReport {
  bool admissible = false;   // min pre-normalization norm > 1 - eps
  double min_prenorm = 0;
  double max_energy = 0;     // max Ch^i over the normalized transferred net
};

struct TransferReport {
  std::vector<TransferMemberReport> per_member;
  double net_resolution_deg = 0;
  std::size_t net_size = 0;
  double sup_limit_energy = 0;  // sup Ch over the net on the limit space
};

/// The upper-semicontinuity transfer: V_i := normalized h_t^i pi_i(V),
/// admitted only when every transferred vector keeps norm above 1 - eps
/// (the paper's i >= i_0 threshold; failing indices are reported as
/// inadmissible rather than fatal).
inline TransferReport transfer_family(const ConvergingFamily& family, const SubspaceFamily& V,
                                      double t, double eps, double resolution_deg = 15.0,
                                      std::uint64_t seed = 0) {
  family.validate();
  require(V.space == family.limit.space, ErrorCode::SpaceMismatch, "V must live on the limit");
  require(t > 0, ErrorCode::InvalidParameter, "time must be positive");
  require(eps > 0 && eps < 0.5, ErrorCode::InvalidParameter, "eps must lie in (0, 1/2)");

  TransferReport rep;
  rep.net_resolution_deg = V.dim() <= 3 ? resolution_deg : std::numeric_limits<double>::quiet_NaN();
  std::vector<Vec> net = sphere_net(V, resolution_deg, seed);
  rep.net_size = net.size();
  for (const auto& v : net)
    rep.sup_limit_energy = std::max(rep.sup_limit_energy, family.limit.energy->eval(v));

  for (const auto& member : family.members) {
    PiTransfer tr = make_pi_transfer(member, family.limit);
    TransferMemberReport mr;
    mr.min_prenorm = std::numeric_limits<double>::infinity();
    const DiscreteSpace& rsp = *tr.iso.map.refined_source;
    for (const auto& v : net) {
      Vec g = tr.kernel->apply(tr.iso.apply(v), t);
      double ng = l2_norm(rsp, g);
      mr.min_prenorm = std::min(mr.min_prenorm, ng);
      if (ng > 1e-12) mr.max_energy = std::max(mr.max_energy, tr.refined_energy->eval(g / ng));
    }
    mr.admissible = mr.min_prenorm > 1.0 - eps;
    rep.per_member.push_back(mr);
  }
  return rep;
}

struct AccumulationReport {
  SpacePtr common_space;                 // refined limit space carrying all pushed sets
  std::vector<std::vector<Vec>> pushed;  // sigma_i(V_i) per member
  std::vector<Vec> accumulation;         // terminal set of the greedy chain
  std::vector<double> hausdorff_gaps;    // d_H(pushed_i, accumulation)
  std::vector<std::size_t> chain;        // indices accepted by the 1/k chaining
};

/// Pushes the member sets to the limit through the sigma_i isometries (one
/// common refinement of the limit space) and extracts a Hausdorff-settling
/// subsequence greedily with thresholds eps_k = 1/k, mirroring the diagonal
/// net argument of the lower-semicontinuity proof.
inline AccumulationReport accumulate_families(const ConvergingFamily& family,
                                              const std::vector<std::vector<Vec>>& V_i,
                                              double energy_cap = kInf) {
  family.validate();
  require(V_i.size() == family.members.size(), ErrorCode::InvalidParameter,
          "one set per family member required");
  for (std::size_t i = 0; i < V_i.size(); ++i) {
    require(!V_i[i].empty(), ErrorCode::EmptySet, "member sets must be nonempty");
    for (const auto& v : V_i[i]) {
      double ch = family.members[i].energy->eval(v);
      require(ch <= energy_cap, ErrorCode::Unbounded, "member set violates the energy cap");
      double nv = l2_norm(*family.members[i].space, v);
      require(std::abs(nv - 1.0) <= 1e-6, ErrorCode::OutsideDomain,
              "member sets must sit on the unit sphere");
    }
  }

  std::vector<TransportMap> maps;
  for (const auto& member : family.members)
    maps.push_back(plan_to_map(solve_ot(family.limit.space, member.space)));
  CommonRefinement common = common_refinement(family.limit.space, maps);

  AccumulationReport rep;
  rep.common_space = common.refined;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::vector<Vec> pushed;
    for (const auto& v : V_i[i]) {
      Vec w(common.refined->size());
      for (std::size_t r = 0; r < common.assign[i].size(); ++r) w[r] = v[common.assign[i][r]];
      pushed.push_back(std::move(w));
    }
    rep.pushed.push_back(std::move(pushed));
  }

  rep.chain.push_back(0);
  double eps_k = 1.0;
  for (std::size_t j = 1; j < rep.pushed.size(); ++j) {
    double d = hausdorff_distance(*common.refined, rep.pushed[rep.chain.back()], rep.pushed[j]);
    if (d <= eps_k) {
      rep.chain.push_back(j);
      eps_k = 1.0 / (static_cast<double>(rep.chain.size()));
    }
  }
  rep.accumulation = rep.pushed[rep.chain.back()];
  for (const auto& set : rep.pushed)
    rep.hausdorff_gaps.push_back(hausdorff_distance(*common.refined, set, rep.accumulation));
  return rep;
}

struct ContinuityRow {
  std::size_t index;       // member index, members.size() marks the limit
  std::size_t k;
  double lambda_i_k;
  double lambda_limit_k;
  double gap_rel;          // |difference| / (1 + lambda_limit_k)
};

struct ContinuityReport {
  std::vector<ContinuityRow> rows;
  std::vector<bool> verdict_per_k;  // final gap small and settling
  bool verdict = false;
  std::vector<double> w2;           // W2(m_i, m_limit) per member
  bool w2_nonincreasing = true;
  double threshold = 0.05;

  void to_csv(std::ostream& os, std::uint64_t config_hash) const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "# config_hash=%016llx threshold=%.3g\n",
                  static_cast<unsigned long long>(config_hash), threshold);
    os << buf;
    os << "i,k,lambda_i_k,lambda_limit_k,gap\n";
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g,%.17g\n", r.index, r.k, r.lambda_i_k,
                    r.lambda_limit_k, r.gap_rel);
      os << buf;
    }
  }
};

/// Runs the min-max spectrum on every member and the limit and tests the
/// two-sided continuity proxy: per k, the final relative gap must fall
/// under `threshold` and the gap must not grow over the last three indices.
inline ContinuityReport spectral_continuity_experiment(const ConvergingFamily& family,
                                                       std::size_t k_max, int budget = 16,
                                                       std::uint64_t seed = 0, unsigned jobs = 0,
                                                       double threshold = 0.05) {
  family.validate();
  require(k_max >= 1, ErrorCode::InvalidK, "k_max must be at least 1");

  ContinuityReport rep;
  rep.threshold = threshold;
  std::vector<std::vector<double>> lam(family.members.size() + 1);
  for (std::size_t i = 0; i < family.members.size(); ++i)
    for (std::size_t k = 1; k <= k_max; ++k)
      lam[i].push_back(minmax_upper_bound(family.members[i].energy, k, budget, seed, jobs).value);
  for (std::size_t k = 1; k <= k_max; ++k)
    lam.back().push_back(minmax_upper_bound(family.limit.energy, k, budget, seed, jobs).value);

  const std::vector<double>& lim = lam.back();
  for (std::size_t k = 0; k < k_max; ++k) {
    std::vector<double> gaps;
    for (std::size_t i = 0; i < family.members.size(); ++i) {
      double g = std::abs(lam[i][k] - lim[k]) / (1.0 + std::abs(lim[k]));
      gaps.push_back(g);
      rep.rows.push_back({i, k + 1, lam[i][k], lim[k], g});
    }
    rep.rows.push_back({family.members.size(), k + 1, lim[k], lim[k], 0.0});
    bool ok = gaps.back() <= threshold;
    if (gaps.size() >= 3) {
      std::size_t nn = gaps.size();
      ok = ok && gaps[nn - 1] <= gaps[nn - 2] + 1e-9 && gaps[nn - 2] <= gaps[nn - 3] + 1e-9;
    }
    rep.verdict_per_k.push_back(ok);
  }
  rep.verdict = true;
  for (bool ok : rep.verdict_per_k) rep.verdict = rep.verdict && ok;

  rep.w2 = family.w2_costs_to_limit();
  for (std::size_t i = 1; i < rep.w2.size(); ++i)
    if (rep.w2[i] > rep.w2[i - 1] + 1e-9) rep.w2_nonincreasing = false;
  return rep;
}

}  // namespace mmspec
