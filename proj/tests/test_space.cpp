#include <catch2/catch_amalgamated.hpp>

#include "mmspec/space.hpp"

using namespace mmspec;

namespace {

RawSpace two_point_raw() {
  RawSpace raw;
  raw.ids = {"a", "b"};
  raw.coords = {Vec::Zero(1), Vec::Ones(1)};
  raw.dist = Mat(2, 2);
  raw.dist << 0, 1, 1, 0;
  raw.measure = Vec(2);
  raw.measure << 0.5, 0.5;
  return raw;
}

RawSpace roundtrip_raw(const DiscreteSpace& sp) {
  RawSpace raw;
  raw.ids = sp.ids();
  raw.coords = sp.coords();
  raw.dist = sp.dist_matrix();
  raw.measure = sp.measure();
  return raw;
}

}  // namespace

TEST_CASE("validate_space accepts the smallest nondegenerate space") {
  SpacePtr sp = make_space(two_point_raw());
  REQUIRE(sp->size() == 2);
  REQUIRE(sp->dist(0, 1) == 1.0);
}

TEST_CASE("validate_space rejects a non-probability measure") {
  RawSpace raw = two_point_raw();
  raw.measure << 0.6, 0.6;
  REQUIRE(!DiscreteSpace::check(raw).empty());
  try {
    make_space(std::move(raw));
    FAIL("expected NonProbabilityMeasure");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::NonProbabilityMeasure);
  }
}

TEST_CASE("validate_space rejects nonpositive weights") {
  RawSpace raw = two_point_raw();
  raw.measure << 1.0, 0.0;
  try {
    make_space(std::move(raw));
    FAIL("expected NonProbabilityMeasure");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::NonProbabilityMeasure);
  }
}

TEST_CASE("validate_space rejects a triangle-inequality violation") {
  RawSpace raw;
  raw.ids = {"a", "b", "c"};
  raw.coords = {Vec::Zero(1), Vec::Ones(1), 2 * Vec::Ones(1)};
  raw.dist = Mat(3, 3);
  raw.dist << 0, 1, 5, 1, 0, 1, 5, 1, 0;
  raw.measure = Vec::Constant(3, 1.0 / 3.0);
  try {
    make_space(std::move(raw));
    FAIL("expected MetricViolation");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::MetricViolation);
  }
}

TEST_CASE("validate_space rejects asymmetric distances and duplicate ids") {
  RawSpace raw = two_point_raw();
  raw.dist(0, 1) = 2.0;
  try {
    make_space(std::move(raw));
    FAIL("expected MetricViolation");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::MetricViolation);
  }
  RawSpace dup = two_point_raw();
  dup.ids = {"a", "a"};
  try {
    make_space(std::move(dup));
    FAIL("expected DuplicateId");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::DuplicateId);
  }
}

TEST_CASE("make_cycle produces antipodal points for n = 2") {
  SpacePtr c2 = make_cycle(2, 1.0);
  REQUIRE(c2->size() == 2);
  REQUIRE(c2->dist(0, 1) == Catch::Approx(0.5).margin(0));
  REQUIRE(c2->measure()[0] == 0.5);
}

TEST_CASE("make_cycle spaces points equally") {
  SpacePtr c16 = make_cycle(16, 1.0);
  for (std::size_t i = 0; i < 16; ++i) REQUIRE(c16->dist(i, (i + 1) % 16) == 1.0 / 16.0);
}

TEST_CASE("make_cycle accepts the single-point degenerate space") {
  SpacePtr c1 = make_cycle(1, 1.0);
  REQUIRE(c1->size() == 1);
  REQUIRE(c1->measure()[0] == 1.0);
}

TEST_CASE("make_cycle distances follow the exact arc formula") {
  const std::size_t n = 7;
  const double c = 2.75;
  SpacePtr cyc = make_cycle(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t hops = std::min((i > j ? i - j : j - i), n - (i > j ? i - j : j - i));
      REQUIRE(cyc->dist(i, j) == c * static_cast<double>(hops) / static_cast<double>(n));
    }
}

TEST_CASE("make_thin_torus counts points and splits mass uniformly") {
  SpacePtr t = make_thin_torus(8, 4, 0.1);
  REQUIRE(t->size() == 32);
  for (std::size_t i = 0; i < 32; ++i) REQUIRE(t->measure()[i] == Catch::Approx(1.0 / 32).margin(1e-15));
}

TEST_CASE("make_thin_torus rejects a zero fiber scale") {
  try {
    make_thin_torus(8, 4, 0.0);
    FAIL("expected InvalidParameter");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::InvalidParameter);
  }
}

TEST_CASE("thin torus fiber spacing follows the fiber circumference") {
  SpacePtr t = make_thin_torus(8, 2, 1.0);
  // points (0,0) and (0,1): same base point, antipodal fiber points
  REQUIRE(t->dist(0, 1) == Catch::Approx(0.5).margin(0));
}

TEST_CASE("every generated space passes validation") {
  for (SpacePtr sp : {make_cycle(5, 1.0), make_cycle(1, 2.0), make_path(6, 3.0),
                      make_thin_torus(4, 3, 0.25)}) {
    REQUIRE(DiscreteSpace::check(roundtrip_raw(*sp)).empty());
  }
}

TEST_CASE("l2 norm and inner product over the two-point space") {
  SpacePtr sp = make_space(two_point_raw());
  Vec f(2), g(2), z(2);
  f << 1, -1;
  g << 1, 1;
  z << 0, 0;
  L2Function F(sp, f), G(sp, g), Z(sp, z);
  REQUIRE(l2_norm(F) == Catch::Approx(1.0).margin(1e-15));
  REQUIRE(l2_norm(Z) == 0.0);
  REQUIRE(l2_inner(F, G) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("l2 operations reject mismatched spaces") {
  SpacePtr a = make_space(two_point_raw());
  SpacePtr b = make_space(two_point_raw());
  L2Function f(a, Vec::Ones(2)), g(b, Vec::Ones(2));
  try {
    l2_inner(f, g);
    FAIL("expected SpaceMismatch");
  } catch (const Error& e) {
    REQUIRE(e.code() == ErrorCode::SpaceMismatch);
  }
}

TEST_CASE("l2 norm is absolutely homogeneous") {
  Rng rng(7);
  SpacePtr sp = make_cycle(9, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec f = rng.normal_vec(9);
    double alpha = rng.uniform(-3.0, 3.0);
    L2Function F(sp, f), AF(sp, alpha * f);
    REQUIRE(l2_norm(AF) == Catch::Approx(std::abs(alpha) * l2_norm(F)).margin(1e-12));
  }
}

TEST_CASE("truncated cost caps the ambient distance at one") {
  REQUIRE(truncated_rho(0.3) == 0.3);
  REQUIRE(truncated_rho(2.5) == 1.0);
  REQUIRE(truncated_cost(0.1) == Catch::Approx(0.01).margin(1e-18));
  REQUIRE(truncated_cost(7.0) == 1.0);
}
