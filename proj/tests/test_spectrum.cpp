#include <catch2/catch_amalgamated.hpp>

#include <memory>

#include "mmspec/energy.hpp"
#include "mmspec/space.hpp"
#include "mmspec/spectrum.hpp"

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

EnergyPtr two_point_energy() {
  return std::make_shared<EnergyForm>(two_point(), QuadraticKind{{{0, 1, 1.0}}});
}

EnergyPtr cycle_energy(std::size_t n) {
  return std::make_shared<EnergyForm>(default_cycle_energy(make_cycle(n, 1.0), 1.0));
}

double circulant_value(std::size_t n, std::size_t j) {
  return 2.0 * static_cast<double>(n) * static_cast<double>(n) *
         (1.0 - std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(j) /
                         static_cast<double>(n)));
}

EnergyPtr random_connected(std::size_t n, Rng& rng) {
  SpacePtr sp = [&] {
    RawSpace raw;
    Vec w(n);
    for (std::size_t i = 0; i < n; ++i) {
      raw.ids.push_back("r" + std::to_string(i));
      Vec c(2);
      c << rng.uniform(), rng.uniform();
      raw.coords.push_back(c);
      w[i] = rng.uniform(0.5, 1.5);
    }
    raw.measure = w / w.sum();
    return make_space(std::move(raw));
  }();
  QuadraticKind k;
  for (std::size_t i = 1; i < n; ++i) k.edges.push_back({rng.index(i), i, rng.uniform(0.5, 2.0)});
  for (std::size_t e = 0; e < n; ++e) {
    std::size_t a = rng.index(n), b = rng.index(n);
    if (a != b) k.edges.push_back({a, b, rng.uniform(0.1, 1.0)});
  }
  return std::make_shared<EnergyForm>(std::move(sp), std::move(k));
}

}  // namespace

TEST_CASE("rayleigh sup over the full two-point sphere is the top eigenvalue") {
  EnergyPtr E = two_point_energy();
  Vec ones = Vec::Ones(2);
  Vec e2(2);
  e2 << 1, -1;
  auto sup = rayleigh_sup_on_sphere(*E, {ones, e2});
  REQUIRE(sup.value == Catch::Approx(4.0).margin(1e-10));
  REQUIRE(std::abs(std::abs(sup.maximizer[0]) - 1.0) < 1e-6);
  auto flat = rayleigh_sup_on_sphere(*E, {ones});
  REQUIRE(flat.value == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("rayleigh sup rejects a skew basis") {
  EnergyPtr E = two_point_energy();
  Vec a = Vec::Ones(2);
  Vec b(2);
  b << 1.0, 0.5;
  try {
    rayleigh_sup_on_sphere(*E, {a, b});
    FAIL("expected NotOrthonormal");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::NotOrthonormal);
  }
}

TEST_CASE("nonlinear rayleigh sup: ascent and angular grid agree") {
  SpacePtr sp = make_path(3, 1.0);
  LqKind k;
  k.q = kLqInfinity;
  k.neighbors = {{{1, 1.0}}, {{0, 1.0}, {2, 1.0}}, {{1, 1.0}}};
  EnergyForm E(sp, std::move(k));

  Rng rng(5);
  std::vector<Vec> basis = gram_schmidt_m(*sp, {rng.normal_vec(3), rng.normal_vec(3)});
  auto sup = rayleigh_sup_on_sphere(E, basis, 7);
  REQUIRE(sup.certified);
  REQUIRE(sup.grid_step_deg == 1.0);

  // Independent grid pass at finer resolution stays below the reported sup.
  double grid = 0;
  for (double th = 0; th < 180.0; th += 0.05) {
    double rad = th * 3.14159265358979323846 / 180.0;
    Vec u = std::cos(rad) * basis[0] + std::sin(rad) * basis[1];
    grid = std::max(grid, E.eval(u));
  }
  REQUIRE(grid <= sup.value + 1e-6);
  REQUIRE(sup.value <= grid + 1e-4);  // 1-degree grid resolution bound
}

TEST_CASE("min-max values of the two-point space") {
  EnergyPtr E = two_point_energy();
  auto l1 = minmax_upper_bound(E, 1, 4, 1);
  auto l2 = minmax_upper_bound(E, 2, 4, 1);
  REQUIRE(l1.value <= 1e-9);
  REQUIRE(l2.value == Catch::Approx(4.0).epsilon(1e-9));
  REQUIRE(l1.exact);
  REQUIRE(l2.exact);
}

TEST_CASE("single-point spaces follow the degenerate convention") {
  SpacePtr sp = make_cycle(1, 1.0);
  EnergyPtr E = std::make_shared<EnergyForm>(default_cycle_energy(sp, 1.0));
  auto l1 = minmax_upper_bound(E, 1, 4, 1);
  auto l2 = minmax_upper_bound(E, 2, 4, 1);
  REQUIRE(l1.value == 0.0);
  REQUIRE(std::isinf(l2.value));
}

TEST_CASE("16-cycle min-max reproduces the circulant double eigenvalue") {
  EnergyPtr E = cycle_energy(16);
  double expected = circulant_value(16, 1);  // 512 (1 - cos(pi/8)) ~ 38.97
  auto l2 = minmax_upper_bound(E, 2, 4, 2);
  auto l3 = minmax_upper_bound(E, 3, 4, 2);
  REQUIRE(std::abs(l2.value - expected) <= 1e-6 * expected);
  REQUIRE(std::abs(l3.value - expected) <= 1e-6 * expected);
}

TEST_CASE("lambda_1 vanishes with a constant realizer on connected spaces") {
  for (EnergyPtr E : {cycle_energy(5), cycle_energy(9)}) {
    auto l1 = minmax_upper_bound(E, 1, 2, 3);
    REQUIRE(l1.value <= 1e-9);
    const Vec& b = l1.basis[0];
    REQUIRE(b.maxCoeff() - b.minCoeff() <= 1e-4 * std::abs(b.maxCoeff()));
  }
}

TEST_CASE("quadratic oracle values for the standard examples") {
  QuadraticSpectrum two = quadratic_oracle(*two_point_energy());
  REQUIRE(two.values[0] == Catch::Approx(0.0).margin(1e-10));
  REQUIRE(two.values[1] == Catch::Approx(4.0).margin(1e-10));

  QuadraticSpectrum c4 = quadratic_oracle(*cycle_energy(4));
  REQUIRE(c4.values[0] == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(c4.values[1] == Catch::Approx(32.0).margin(1e-8));
  REQUIRE(c4.values[2] == Catch::Approx(32.0).margin(1e-8));
  REQUIRE(c4.values[3] == Catch::Approx(64.0).margin(1e-8));
}

TEST_CASE("a disconnected space has a doubled zero eigenvalue") {
  SpacePtr sp = make_path(4, 1.0);
  EnergyPtr E = std::make_shared<EnergyForm>(sp, QuadraticKind{{{0, 1, 1.0}, {2, 3, 1.0}}});
  QuadraticSpectrum s = quadratic_oracle(*E);
  REQUIRE(s.values[0] <= 1e-10);
  REQUIRE(s.values[1] <= 1e-10);
  REQUIRE(s.values[2] > 1e-6);
}

TEST_CASE("min-max matches the dense oracle on random connected energies") {
  Rng rng(2718);
  for (int trial = 0; trial < 3; ++trial) {
    std::size_t n = 8 + 4 * static_cast<std::size_t>(trial);
    EnergyPtr E = random_connected(n, rng);
    QuadraticSpectrum oracle = quadratic_oracle(*E);
    for (std::size_t k = 1; k <= std::min<std::size_t>(6, n); ++k) {
      auto mm = minmax_upper_bound(E, k, 2, 7 * trial + k);
      REQUIRE(std::abs(mm.value - oracle.values[k - 1]) <=
              1e-6 * (1.0 + oracle.values[k - 1]));
    }
  }
}

TEST_CASE("min-max values scale linearly with the energy") {
  Rng rng(31415);
  EnergyPtr E = random_connected(9, rng);
  QuadraticKind scaled = E->quadratic();
  for (auto& e : scaled.edges) e.w *= 4.0;
  EnergyPtr E4 = std::make_shared<EnergyForm>(E->space_ptr(), std::move(scaled));
  for (std::size_t k : {2, 4}) {
    double a = minmax_upper_bound(E, k, 2, 5).value;
    double b = minmax_upper_bound(E4, k, 2, 5).value;
    REQUIRE(b == Catch::Approx(4.0 * a).epsilon(1e-10));
  }
}

TEST_CASE("divergence probe on the 8-cycle") {
  EnergyPtr E = cycle_energy(8);
  auto rep = divergence_check(E, 8, 2, 11);
  REQUIRE(rep.nondecreasing);
  REQUIRE(rep.finite_within_dimension);
  REQUIRE(rep.values[7] > rep.values[1]);
  for (std::size_t k = 0; k < 8; ++k)
    REQUIRE(rep.values[k] == Catch::Approx(quadratic_oracle(*E).values[k]).margin(1e-5));
}

TEST_CASE("divergence probe handles the degenerate spaces") {
  auto two = divergence_check(two_point_energy(), 2, 2, 3);
  REQUIRE(two.values[0] <= 1e-9);
  REQUIRE(two.values[1] == Catch::Approx(4.0).epsilon(1e-9));

  SpacePtr sp = make_cycle(1, 1.0);
  EnergyPtr E1 = std::make_shared<EnergyForm>(default_cycle_energy(sp, 1.0));
  auto one = divergence_check(E1, 2, 2, 3);
  REQUIRE(one.values[0] == 0.0);
  REQUIRE(std::isinf(one.values[1]));
}

TEST_CASE("nonlinear min-max values upper-bound the eigenlevels the flow finds") {
  SpacePtr sp = make_path(5, 1.0);
  LqKind k;
  k.q = kLqInfinity;
  k.neighbors.resize(5);
  for (std::size_t i = 0; i + 1 < 5; ++i) {
    k.neighbors[i].push_back({i + 1, 2.0});
    k.neighbors[i + 1].push_back({i, 2.0});
  }
  EnergyPtr E = std::make_shared<EnergyForm>(sp, std::move(k));
  auto l2 = minmax_upper_bound(E, 2, 4, 13);
  REQUIRE(!l2.exact);
  REQUIRE(l2.value > 0);
  // The realizing basis certifies the bound on re-evaluation.
  auto recheck = rayleigh_sup_on_sphere(*E, l2.basis, 17);
  REQUIRE(recheck.value <= l2.value * (1.0 + 1e-9) + 1e-12);
  // Flowing the inner maximizer down the sphere cannot exceed the bound.
  EigenPair p = find_eigenpair(E, l2.inner_maximizer, 1e-7);
  if (p.converged) REQUIRE(p.lambda <= l2.value + 1e-7);
}

TEST_CASE("spectrum report rows carry flags and matched residuals") {
  EnergyPtr E = cycle_energy(6);
  SpectrumReport rep = compute_spectrum_report(E, 3, 2, 23);
  REQUIRE(rep.rows.size() == 3);
  for (const auto& row : rep.rows) {
    REQUIRE(row.exact);
    REQUIRE(row.inner_max_certified);
  }
  REQUIRE(rep.rows[0].lambda_upper <= 1e-9);
  std::ostringstream os;
  rep.to_csv(os, 42, 1e-8);
  REQUIRE(os.str().find("k,lambda_upper,exact_flag,inner_max_certified") != std::string::npos);
}
