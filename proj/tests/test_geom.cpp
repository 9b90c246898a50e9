#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "wick/geom.hpp"

using namespace wick;

TEST_CASE("parabolic norm: reference values and scaling weights") {
  // time counts twice: ||(t,0,0)|| = sqrt(|t|)
  CHECK(parabolic_norm(PointD{2, 0, 0}) == doctest::Approx(std::sqrt(2.0)));
  CHECK(parabolic_norm(PointD{0, 1, 1}) == doctest::Approx(std::pow(2.0, 0.25)));
  CHECK(parabolic_norm(PointD{0, 0.5, 0}) == doctest::Approx(0.5));
  CHECK(parabolic_norm(PointD{-4, 3, 0}) == doctest::Approx(std::pow(16.0 + 81.0, 0.25)));
  CHECK(parabolic_norm(PointD{0, 0, 0}) == 0.0);
}

TEST_CASE("parabolic norm: exact dilation covariance") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-0.5, 0.5), S(0.05, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const PointD p{U(rng), U(rng), U(rng)};
    const double lam = S(rng);
    CHECK(parabolic_norm(parabolic_scale(p, lam)) ==
          doctest::Approx(lam * parabolic_norm(p)).epsilon(1e-12));
  }
}

TEST_CASE("parabolic norm: triangle inequality holds with margin 1.01") {
  // ||.|| is (sub)additive: |t+s|^(1/2) <= |t|^(1/2)+|s|^(1/2) componentwise,
  // then the l4 triangle inequality. The 1.01 factor is pure slack.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    const PointD a{U(rng), U(rng), U(rng)}, b{U(rng), U(rng), U(rng)};
    const double lhs = parabolic_norm(a + b);
    const double rhs = parabolic_norm(a) + parabolic_norm(b);
    worst = std::max(worst, lhs / rhs);
  }
  CHECK(worst <= 1.01);
}

TEST_CASE("torus reduction picks the minimal image") {
  CHECK(parabolic_norm(PointD{0, 0.75, 0}, 1.0) == doctest::Approx(0.25));
  CHECK(parabolic_norm(PointD{0, -0.75, 0}, 1.0) == doctest::Approx(0.25));
  CHECK(parabolic_norm(PointD{0.01, 3.0, 0}, 1.0) == doctest::Approx(0.1));
  // free-space variant does not reduce
  CHECK(parabolic_norm(PointD{0, 1, 3}) == doctest::Approx(std::pow(82.0, 0.25)));

  TorusGrid g{1.0, 8, 0.01};
  CHECK(g.offset(7) == doctest::Approx(-g.h()));
  CHECK(g.offset(-7) == doctest::Approx(g.h()));
  CHECK(g.offset(4) == doctest::Approx(4 * g.h()));
}

TEST_CASE("test profiles: support, peak, smooth falloff") {
  for (Profile p : {Profile::Bump, Profile::Tensor}) {
    CHECK(profile_value(p, {0, 0, 0}) == doctest::Approx(1.0));
    // vanishes outside the unit parabolic ball
    CHECK(profile_value(p, {1.1, 0, 0}) == 0.0);
    CHECK(profile_value(p, {0, 1.0, 0}) == 0.0);
    CHECK(profile_value(p, {0.9, 0.9, 0.9}) == 0.0);
    // strictly positive well inside
    CHECK(profile_value(p, {0.05, 0.1, -0.1}) > 0.0);
  }
  CHECK(profile_by_name("bump") == Profile::Bump);
  CHECK(profile_by_name("tensor") == Profile::Tensor);
  CHECK_THROWS(profile_by_name("box"));
}

TEST_CASE("rescaled profile: normalization factor and support shrink") {
  const PointD c{0.3, 0.5, 0.5};
  const double lam = 0.25;
  // at the center the value is lam^-4 * phi(0)
  CHECK(rescaled_profile(Profile::Bump, c, lam, c, 1.0) == doctest::Approx(256.0));
  // support: ||offset|| < lam
  const PointD inside{c.t + 0.5 * lam * lam, c.x1 + 0.5 * lam, c.x2};
  const PointD outside{c.t + 1.1 * lam * lam, c.x1, c.x2};
  CHECK(rescaled_profile(Profile::Bump, c, lam, inside, 1.0) > 0.0);
  CHECK(rescaled_profile(Profile::Bump, c, lam, outside, 1.0) == 0.0);
  // wraps across the seam
  const PointD nearseam{0.0, 0.02, 0.0}, justacross{0.0, 0.98, 0.0};
  CHECK(rescaled_profile(Profile::Bump, nearseam, lam, justacross, 1.0) > 0.0);
}

TEST_CASE("pair_field: quadrature mass is scale invariant") {
  // integral of phi_c^lam over the grid equals integral of phi, any lam
  TorusGrid g{1.0, 64, 1.0 / 4096};
  auto mass = [&](double lam) {
    RealField f;
    const double lam2 = lam * lam;
    f.t0 = static_cast<std::int64_t>(std::floor(-lam2 / g.dt)) - 2;
    const std::int64_t last = static_cast<std::int64_t>(std::ceil(lam2 / g.dt)) + 2;
    f.slabs.assign(static_cast<std::size_t>(last - f.t0 + 1), Eigen::ArrayXXd::Ones(g.N, g.N));
    return pair_field(f, g, Profile::Bump, {0, 0.5, 0.5}, lam);
  };
  const double m1 = mass(0.25), m2 = mass(0.125);
  CHECK(m1 == doctest::Approx(m2).epsilon(5e-3));
}

TEST_CASE("pair_field: linear in the field, rejects unresolved scales") {
  TorusGrid g{1.0, 32, 1.0 / 1024};
  ComplexField f;
  f.t0 = -80;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> Z;
  for (int s = 0; s < 161; ++s) {
    Eigen::ArrayXXcd a(g.N, g.N);
    for (int i = 0; i < g.N; ++i)
      for (int j = 0; j < g.N; ++j) a(i, j) = std::complex<double>(Z(rng), Z(rng));
    f.slabs.push_back(a);
  }
  ComplexField f2 = f;
  for (auto& s : f2.slabs) s *= std::complex<double>(2.0, -1.0);
  const PointD c{0, 0.5, 0.5};
  const auto v1 = pair_field(f, g, Profile::Tensor, c, 0.25);
  const auto v2 = pair_field(f2, g, Profile::Tensor, c, 0.25);
  CHECK(std::abs(v2 - std::complex<double>(2.0, -1.0) * v1) < 1e-12 * std::abs(v1) + 1e-14);

  CHECK_THROWS(pair_field(f, g, Profile::Bump, c, 3.9 * g.h()));          // lam < 4h
  CHECK_THROWS(pair_field(f, g, Profile::Bump, c, 0.05));                 // lam^2 < 4dt
  TorusGrid fine{1.0, 32, 1e-5};
  CHECK_THROWS(pair_field(f, fine, Profile::Bump, c, 0.25));              // window too short
}
