#include <catch2/catch_amalgamated.hpp>

#include "mmspec/energy.hpp"
#include "mmspec/space.hpp"

using namespace mmspec;

namespace {

SpacePtr two_point() {
  RawSpace raw;
  raw.ids = {"a", "b"};
  raw.coords = {Vec::Zero(1), Vec::Ones(1)};
  raw.dist = Mat(2, 2);
  raw.dist << 0, 1, 1, 0;
  raw.measure = Vec(2);
  raw.measure << 0.5, 0.5;
  return make_space(std::move(raw));
}

EnergyForm two_point_energy() {
  return EnergyForm(two_point(), QuadraticKind{{{0, 1, 1.0}}});
}

EnergyForm path3_linf() {
  SpacePtr sp = make_path(3, 1.0);
  LqKind k;
  k.q = kLqInfinity;
  k.neighbors = {{{1, 1.0}}, {{0, 1.0}, {2, 1.0}}, {{1, 1.0}}};
  return EnergyForm(sp, std::move(k));
}

EnergyForm random_connected_quadratic(SpacePtr sp, Rng& rng) {
  QuadraticKind k;
  const std::size_t n = sp->size();
  for (std::size_t i = 1; i < n; ++i) k.edges.push_back({rng.index(i), i, rng.uniform(0.5, 2.0)});
  for (std::size_t e = 0; e < n / 2; ++e) {
    std::size_t a = rng.index(n), b = rng.index(n);
    if (a != b) k.edges.push_back({a, b, rng.uniform(0.1, 1.0)});
  }
  return EnergyForm(std::move(sp), std::move(k));
}

/// Test-side oracle: generalized eigen relation gradient M^-1 A u.
Vec oracle_quadratic_laplacian(const EnergyForm& E, const Vec& u) {
  const Mat& A = E.quadratic_matrix();
  return (A * u).cwiseQuotient(E.space().measure());
}

}  // namespace

TEST_CASE("single-edge quadratic energy matches the hand expansion") {
  EnergyForm E = two_point_energy();
  Vec u(2);
  u << 1, -1;
  REQUIRE(E.eval(u) == Catch::Approx(4.0).margin(1e-15));
  REQUIRE(E.eval(Vec::Constant(2, 3.7)) == 0.0);
  Vec u2 = 2 * u;
  REQUIRE(E.eval(u2) == Catch::Approx(16.0).margin(1e-14));
}

TEST_CASE("quadratic laplacian agrees with the dense M^-1 A oracle") {
  EnergyForm E = two_point_energy();
  Vec u(2);
  u << 1, -1;
  Vec lap = laplacian(E, u);
  REQUIRE(lap[0] == Catch::Approx(4.0).margin(1e-12));
  REQUIRE(lap[1] == Catch::Approx(-4.0).margin(1e-12));
  REQUIRE((lap - oracle_quadratic_laplacian(E, u)).norm() < 1e-12);

  Rng rng(11);
  EnergyForm R = random_connected_quadratic(make_cycle(8, 1.0), rng);
  for (int t = 0; t < 10; ++t) {
    Vec v = rng.normal_vec(8);
    REQUIRE((laplacian(R, v) - oracle_quadratic_laplacian(R, v)).norm() < 1e-10);
  }
}

TEST_CASE("laplacian of a constant vanishes") {
  EnergyForm E = two_point_energy();
  REQUIRE(laplacian(E, Vec::Constant(2, 2.5)).norm() == 0.0);
  EnergyForm P = path3_linf();
  REQUIRE(laplacian(P, Vec::Constant(3, -1.0)).norm() < 1e-12);
}

TEST_CASE("q = inf smooth point: minimal selection matches the hand derivation") {
  EnergyForm E = path3_linf();
  Vec u(3);
  u << 0, 1, 3;  // distinct neighbor differences at the middle point
  REQUIRE(E.eval(u) == Catch::Approx(3.0).margin(1e-14));
  Vec lap = laplacian(E, u);
  Vec expected(3);
  expected << -1, -3, 4;
  REQUIRE((lap - expected).norm() < 1e-10);
  double euler = l2_inner(E.space(), lap, u);
  REQUIRE(euler == Catch::Approx(E.eval(u)).margin(1e-10));
}

TEST_CASE("q = inf tie: projection onto the subdifferential polytope") {
  EnergyForm E = path3_linf();
  Vec u(3);
  u << -1, 0, 1;  // both neighbor differences at the middle tie at 1
  Vec lap = laplacian(E, u);

  // Independent oracle: the polytope is a segment parameterized by theta;
  // scan it densely (the quadratic program at 3 variables).
  double best = std::numeric_limits<double>::infinity();
  Vec best_xi;
  for (int g = 0; g <= 100000; ++g) {
    double th = g / 100000.0;
    Vec xi(3);
    xi << -(1.0 + th), 2.0 * th - 1.0, 2.0 - th;
    double nn = l2_norm(E.space(), xi);
    if (nn < best) {
      best = nn;
      best_xi = xi;
    }
  }
  REQUIRE((lap - best_xi).cwiseAbs().maxCoeff() < 1e-4);  // grid resolution
  Vec exact(3);
  exact << -1.5, 0.0, 1.5;  // theta* = 1/2 in closed form
  REQUIRE((lap - exact).norm() < 1e-10);
  REQUIRE(l2_inner(E.space(), lap, u) == Catch::Approx(E.eval(u)).margin(1e-10));
}

TEST_CASE("unconstrained descending slope is the laplacian norm") {
  EnergyForm E = two_point_energy();
  Vec u(2);
  u << 1, -1;
  REQUIRE(descending_slope(E, u) == Catch::Approx(4.0).margin(1e-12));
  REQUIRE(descending_slope(E, Vec::Constant(2, 1.0)) == 0.0);
}

TEST_CASE("slope matches its supremum representation") {
  EnergyForm E = two_point_energy();
  Vec u(2);
  u << 1, -1;
  const DiscreteSpace& sp = E.space();
  double slope = descending_slope(E, u);
  auto half = [&](const Vec& v) { return 0.5 * E.eval(v); };

  Rng rng(3);
  double sup = 0;
  for (int s = 0; s < 10000; ++s) {
    Vec w = u + rng.normal_vec(2);
    double d = l2_norm(sp, u - w);
    if (d < 1e-12) continue;
    sup = std::max(sup, std::max(0.0, half(u) - half(w)) / d);
  }
  REQUIRE(sup <= slope + 1e-6);

  // Near-equality along the steepest direction w = u - s * (-Delta u).
  Vec dir = laplacian(E, u);
  double best = 0;
  for (double s = 1e-6; s < 1e-2; s *= 2) {
    Vec w = u - s * dir;
    best = std::max(best, (half(u) - half(w)) / l2_norm(sp, u - w));
  }
  REQUIRE(best == Catch::Approx(slope).epsilon(1e-3));
}

TEST_CASE("energies are even, 2-homogeneous and convex on random samples") {
  Rng rng(19);
  SpacePtr sp = make_cycle(6, 1.0);
  std::vector<EnergyForm> forms;
  forms.push_back(random_connected_quadratic(sp, rng));
  for (double q : {1.0, 1.5, 2.0, 3.0, kLqInfinity})
    forms.push_back(quadratic_as_lq(forms.front(), q));
  for (const auto& E : forms) {
    for (int t = 0; t < 25; ++t) {
      Vec u = rng.normal_vec(6), v = rng.normal_vec(6);
      double alpha = rng.uniform(-2.0, 2.0);
      REQUIRE(E.eval(u) >= 0.0);
      REQUIRE(E.eval(Vec(-u)) == Catch::Approx(E.eval(u)).margin(1e-12));
      REQUIRE(E.eval(Vec(alpha * u)) ==
              Catch::Approx(alpha * alpha * E.eval(u)).epsilon(1e-12).margin(1e-12));
      double mid = E.eval(Vec(0.5 * u + 0.5 * v));
      REQUIRE(mid <= 0.5 * E.eval(u) + 0.5 * E.eval(v) + 1e-10);
    }
  }
}

TEST_CASE("Euler identity and subgradient inequality hold for random inputs") {
  Rng rng(23);
  SpacePtr sp = make_cycle(7, 1.0);
  EnergyForm Q = random_connected_quadratic(sp, rng);
  std::vector<EnergyForm> forms;
  forms.push_back(Q);
  for (double q : {1.0, 1.7, 3.0, kLqInfinity}) forms.push_back(quadratic_as_lq(Q, q));
  for (const auto& E : forms) {
    for (int t = 0; t < 15; ++t) {
      Vec u = rng.normal_vec(7), v = rng.normal_vec(7);
      Vec lap = laplacian(E, u);
      double ch = E.eval(u);
      REQUIRE(std::abs(l2_inner(*sp, lap, u) - ch) <= 1e-9 * (1.0 + ch));
      double lhs = 0.5 * E.eval(v);
      double rhs = 0.5 * ch + l2_inner(*sp, lap, v - u);
      REQUIRE(lhs >= rhs - 1e-9);
    }
  }
}

TEST_CASE("quadratic kind agrees with its q = 2 Lq counterpart") {
  Rng rng(31);
  EnergyForm Q = random_connected_quadratic(make_cycle(10, 1.0), rng);
  EnergyForm L = quadratic_as_lq(Q, 2.0);
  for (int t = 0; t < 30; ++t) {
    Vec u = rng.normal_vec(10);
    REQUIRE(Q.eval(u) == Catch::Approx(L.eval(u)).epsilon(1e-12).margin(1e-12));
  }
}

TEST_CASE("zero energy forces constants on connected structures") {
  Rng rng(37);
  EnergyForm Q = random_connected_quadratic(make_cycle(9, 1.0), rng);
  REQUIRE(Q.connected());
  Vec u = Vec::Constant(9, 4.0);
  REQUIRE(Q.eval(u) == 0.0);
  Vec w = u;
  w[3] += 1e-3;
  REQUIRE(Q.eval(w) > 0.0);

  // Disconnected: a two-component space admits a nonconstant null vector.
  SpacePtr sp = make_path(4, 1.0);
  EnergyForm D(sp, QuadraticKind{{{0, 1, 1.0}, {2, 3, 1.0}}});
  REQUIRE(!D.connected());
  Vec v(4);
  v << 1, 1, -1, -1;
  REQUIRE(D.eval(v) == 0.0);
}

TEST_CASE("q = 1 energies are accepted") {
  EnergyForm Q = two_point_energy();
  EnergyForm L1 = quadratic_as_lq(Q, 1.0);
  Vec u(2);
  u << 1, -1;
  REQUIRE(L1.eval(u) > 0.0);
  Vec lap = laplacian(L1, u);
  REQUIRE(std::abs(l2_inner(L1.space(), lap, u) - L1.eval(u)) < 1e-9);
}

TEST_CASE("lq gradients match central finite differences") {
  Rng rng(41);
  EnergyForm Q = random_connected_quadratic(make_path(5, 1.0), rng);
  for (double q : {1.3, 2.5, 4.0}) {
    EnergyForm E = quadratic_as_lq(Q, q);
    Vec u = rng.normal_vec(5);
    Vec lap = laplacian(E, u);
    const double h = 1e-6;
    for (int i = 0; i < 5; ++i) {
      Vec up = u, dn = u;
      up[i] += h;
      dn[i] -= h;
      double fd = (0.5 * E.eval(up) - 0.5 * E.eval(dn)) / (2 * h);
      // lap is the L^2(m) representer: euclidean partial = m_i * lap_i
      REQUIRE(fd == Catch::Approx(E.space().measure()[i] * lap[i]).margin(1e-5));
    }
  }
}

TEST_CASE("refined energies preserve lifted evaluations") {
  Rng rng(43);
  SpacePtr sp = make_cycle(5, 1.0);
  EnergyForm Q = random_connected_quadratic(sp, rng);

  // Split point 2 into two copies with masses 0.12 and 0.08.
  RawSpace raw;
  std::vector<std::size_t> parent;
  for (std::size_t i = 0; i < 5; ++i) {
    if (i == 2) {
      raw.ids.push_back("p2a");
      raw.ids.push_back("p2b");
      raw.coords.push_back(sp->coord(2));
      raw.coords.push_back(sp->coord(2));
      parent.push_back(2);
      parent.push_back(2);
    } else {
      raw.ids.push_back(sp->ids()[i]);
      raw.coords.push_back(sp->coord(i));
      parent.push_back(i);
    }
  }
  raw.measure = Vec(6);
  raw.measure << 0.2, 0.2, 0.12, 0.08, 0.2, 0.2;
  raw.dist = Mat(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) raw.dist(i, j) = sp->dist(parent[i], parent[j]);
  SpacePtr refined = make_space(std::move(raw));

  for (double q : {2.0, 3.0, kLqInfinity}) {
    EnergyForm E = q == 2.0 ? Q : quadratic_as_lq(Q, q);
    EnergyForm R = refine_energy(E, refined, parent);
    for (int t = 0; t < 10; ++t) {
      Vec u = rng.normal_vec(5);
      Vec lifted(6);
      for (std::size_t i = 0; i < 6; ++i) lifted[i] = u[parent[i]];
      REQUIRE(R.eval(lifted) == Catch::Approx(E.eval(u)).epsilon(1e-10).margin(1e-12));
    }
  }
}
