#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "wick/kernels.hpp"

using namespace wick;

TEST_CASE("smooth step: endpoints, symmetry, monotone") {
  CHECK(smooth_step(-1.0) == 0.0);
  CHECK(smooth_step(0.0) == 0.0);
  CHECK(smooth_step(1.0) == 1.0);
  CHECK(smooth_step(2.0) == 1.0);
  CHECK(smooth_step(0.5) == doctest::Approx(0.5).epsilon(1e-14));
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double u = i / 100.0;
    const double s = smooth_step(u);
    CHECK(s >= prev);
    CHECK(smooth_step(u) + smooth_step(1.0 - u) == doctest::Approx(1.0).epsilon(1e-13));
    prev = s;
  }
}

TEST_CASE("kernel equals the exact heat kernel inside the inner ball") {
  KernelSpec ks;
  auto heat = [](const PointD& z) {
    return std::exp(-(z.x1 * z.x1 + z.x2 * z.x2) / (2.0 * z.t)) / (2.0 * M_PI * z.t);
  };
  const PointD inside[] = {{0.01, 0.1, 0.05}, {0.05, 0.0, 0.0}, {0.04, 0.12, 0.08}, {0.002, -0.12, 0.08}};
  for (const auto& z : inside) {
    REQUIRE(parabolic_norm(z) < ks.inner);
    CHECK(kernel_value(ks, z) == doctest::Approx(heat(z)).epsilon(1e-14));
  }
  // vanishing regions
  CHECK(kernel_value(ks, {0.0, 0.01, 0.0}) == 0.0);
  CHECK(kernel_value(ks, {-0.01, 0.01, 0.0}) == 0.0);
  CHECK(kernel_value(ks, {0.21, 0.0, 0.0}) == 0.0);  // t >= outer^2
  CHECK(kernel_value(ks, {0.02, 0.45, 0.0}) == 0.0);
  // transition region is dominated by the heat kernel
  const PointD mid{0.1, 0.2, 0.2};
  const double r = parabolic_norm(mid);
  REQUIRE(r > ks.inner);
  REQUIRE(r < ks.outer);
  CHECK(kernel_value(ks, mid) > 0.0);
  CHECK(kernel_value(ks, mid) < heat(mid));
}

TEST_CASE("fft normalization against a direct dft") {
  TorusGrid g{1.0, 8, 0.01};
  Fft2 fft(g);
  std::mt19937 rng(424242);
  std::normal_distribution<double> nd;
  Eigen::ArrayXXcd f(g.N, g.N);
  for (int j = 0; j < g.N; ++j)
    for (int i = 0; i < g.N; ++i) f(i, j) = {nd(rng), nd(rng)};

  const Eigen::ArrayXXcd hat = fft.fwd(f);
  const double h2 = g.h() * g.h();
  for (int m2 = 0; m2 < g.N; ++m2)
    for (int m1 = 0; m1 < g.N; ++m1) {
      std::complex<double> acc = 0;
      for (int j = 0; j < g.N; ++j)
        for (int i = 0; i < g.N; ++i) {
          const double ph = -2.0 * M_PI * (double(m1) * i + double(m2) * j) / g.N;
          acc += f(i, j) * std::polar(1.0, ph);
        }
      acc *= h2;
      CHECK(std::abs(hat(m1, m2) - acc) < 1e-12);
    }
  const Eigen::ArrayXXcd back = fft.inv(hat);
  CHECK((back - f).abs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance table equals a direct space-time correlation") {
  TorusGrid g{1.0, 16, 0.01};
  KernelSpec ks;
  CovarianceWorkspace ws(g, ks);
  ws.build();
  const int S = ws.kernel_slabs();
  REQUIRE(S == 20);

  std::vector<Eigen::ArrayXXd> K(static_cast<std::size_t>(S + 1));
  for (int s = 0; s <= S; ++s) K[static_cast<std::size_t>(s)] = ws.k_slab(s);
  CHECK(K[0].abs().maxCoeff() == 0.0);

  auto direct = [&](int lag) {
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(g.N, g.N);
    for (int s = 1; s + lag <= S; ++s) {
      const auto& A = K[static_cast<std::size_t>(s + lag)];
      const auto& B = K[static_cast<std::size_t>(s)];
      for (int b = 0; b < g.N; ++b)
        for (int a = 0; a < g.N; ++a) {
          double acc = 0;
          for (int j = 0; j < g.N; ++j)
            for (int i = 0; i < g.N; ++i)
              acc += A((i + a) % g.N, (j + b) % g.N) * B(i, j);
          out(a, b) += acc;
        }
    }
    return (out * g.cell_volume()).eval();
  };

  for (int lag : {0, 3, 18}) {
    const Eigen::ArrayXXd want = direct(lag);
    const Eigen::ArrayXXd got = ws.q_slab(lag);
    const double scale = want.abs().maxCoeff();
    REQUIRE(scale > 0);
    CHECK((got - want).abs().maxCoeff() / scale < 1e-8);
  }
  CHECK(ws.q_slab(S + 7).abs().maxCoeff() == 0.0);  // beyond the stored lags

  // integral of K, for later mass bookkeeping: between the exact-heat core and
  // the full cutoff support
  const double mass = ws.k_mass();
  CHECK(mass > ks.inner * ks.inner * 0.5);
  CHECK(mass < ks.t_support());
  CHECK(std::abs(mass - 0.072907974934591) < 1e-12);
}

TEST_CASE("covariance slabs are even in time and in each coordinate") {
  TorusGrid g{1.0, 16, 0.01};
  CovarianceWorkspace ws(g, KernelSpec{});
  ws.build();
  CHECK((ws.qhat_row(-2) - ws.qhat_row(2)).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::ArrayXXd s = ws.q_slab(2);
  for (int j = 0; j < g.N; ++j)
    for (int i = 0; i < g.N; ++i) {
      CHECK(s(i, j) == doctest::Approx(s((g.N - i) % g.N, j)).epsilon(1e-12));
      CHECK(s(i, j) == doctest::Approx(s(i, (g.N - j) % g.N)).epsilon(1e-12));
      CHECK(s(i, j) == doctest::Approx(s(j, i)).epsilon(1e-12));
    }
  CHECK(s.maxCoeff() == doctest::Approx(s(0, 0)));
}

TEST_CASE("mollifier: unit discrete mass, resolution guard") {
  TorusGrid g{1.0, 16, 0.005};
  CovarianceWorkspace ws(g, KernelSpec{});
  for (Profile p : {Profile::Bump, Profile::Tensor}) {
    const auto mo = ws.mollifier(0.125, p);
    CHECK(g.dt * mo.hat.col(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mo.half == 4);
  }
  CHECK_THROWS_AS(ws.mollifier(0.1), std::invalid_argument);  // eps < 2h

  // eps^2 below the slab scale degenerates in time but stays unit mass
  TorusGrid coarse{1.0, 16, 0.01};
  CovarianceWorkspace wc(coarse, KernelSpec{});
  const auto thin = wc.mollifier(0.125);
  CHECK(coarse.dt * thin.hat.col(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mollified covariance: scale symmetry, extent, slab consistency") {
  TorusGrid g{1.0, 16, 0.005};
  CovarianceWorkspace ws(g, KernelSpec{});
  CHECK_THROWS_AS(MollifiedCovariance(ws, 0.125), std::logic_error);  // not built
  ws.build();

  MollifiedCovariance ab(ws, 0.125, 0.25), ba(ws, 0.25, 0.125);
  CHECK(ab.q0() == doctest::Approx(ba.q0()).epsilon(1e-12));

  // the one-pass evaluator agrees with the materialized pair table
  const auto ma = ws.mollifier(0.125), mb = ws.mollifier(0.25);
  CHECK(ws.mollified_q0(ma, mb) == doctest::Approx(ab.q0()).epsilon(1e-10));
  const double raw = ws.mollified_q0(ma, ma);
  const double fix = ws.mollified_q0(ma, ma, true);
  CHECK(fix > raw);  // the t -> 0+ jump adds mass
  CHECK(fix - raw < 10.0 * g.dt);

  MollifiedCovariance mc(ws, 0.125);
  CHECK(mc.hat_row(0).sum() == doctest::Approx(mc.q0()).epsilon(1e-12));  // L = 1
  CHECK(mc.value({(mc.lag_extent() + 3) * g.dt, 0.0, 0.0}) == 0.0);
  CHECK((mc.slab(-3) - mc.slab(3)).abs().maxCoeff() == 0.0);
  CHECK(mc.slab(0)(0, 0) == doctest::Approx(mc.q0()).epsilon(1e-12));

  // streaming (dense table route) agrees with memoized per-lag slabs
  MollifiedCovariance fresh(ws, 0.125);
  int seen = 0;
  fresh.for_each_slab(0, 12, [&](int l, const Eigen::ArrayXXd& s) {
    CHECK((s - mc.slab(l)).abs().maxCoeff() < 1e-13);
    ++seen;
  });
  CHECK(seen == 13);
}

TEST_CASE("mollified variance against a direct real-space computation") {
  TorusGrid g{1.0, 16, 0.005};
  KernelSpec ks;
  CovarianceWorkspace ws(g, ks);
  ws.build();
  const double eps = 0.125;
  MollifiedCovariance mc(ws, eps);

  // oracle: tabulate rho on its support, form C = K * rho by direct sums,
  // then Var = dt h^2 sum C^2. No spectral step anywhere.
  const int half = static_cast<int>(std::ceil(eps * eps / g.dt));
  const int rs = static_cast<int>(std::ceil(eps / g.h()));
  std::vector<Eigen::ArrayXXd> rho(static_cast<std::size_t>(2 * half + 1),
                                   Eigen::ArrayXXd::Zero(g.N, g.N));
  double mass = 0;
  for (int s = -half; s <= half; ++s)
    for (int j = -rs; j <= rs; ++j)
      for (int i = -rs; i <= rs; ++i) {
        const double v = profile_value(
            Profile::Bump, {s * g.dt / (eps * eps), i * g.h() / eps, j * g.h() / eps});
        rho[static_cast<std::size_t>(s + half)](g.wrap_index(i), g.wrap_index(j)) = v;
        mass += v;
      }
  mass *= g.cell_volume();
  REQUIRE(mass > 0);

  const int S = ws.kernel_slabs();
  std::vector<Eigen::ArrayXXd> K(static_cast<std::size_t>(S + 1));
  for (int s = 0; s <= S; ++s) K[static_cast<std::size_t>(s)] = ws.k_slab(s);

  double var = 0;
  for (int c = 1 - half; c <= S + half; ++c) {  // slabs where C can live
    Eigen::ArrayXXd C = Eigen::ArrayXXd::Zero(g.N, g.N);
    for (int s = -half; s <= half; ++s) {
      const int ks_idx = c - s;
      if (ks_idx < 1 || ks_idx > S) continue;
      const auto& Ks = K[static_cast<std::size_t>(ks_idx)];
      const auto& R = rho[static_cast<std::size_t>(s + half)];
      for (int b = 0; b < g.N; ++b)
        for (int a = 0; a < g.N; ++a) {
          if (R(a, b) == 0.0) continue;
          const double w = R(a, b) / mass;
          for (int j = 0; j < g.N; ++j)
            for (int i = 0; i < g.N; ++i)
              C((i + a) % g.N, (j + b) % g.N) += w * Ks(i, j);
        }
    }
    C *= g.cell_volume();
    var += C.square().sum();
  }
  var *= g.cell_volume();
  CHECK(mc.q0() == doctest::Approx(var).epsilon(1e-9));
}

namespace {
double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }
}  // namespace

TEST_CASE("variance at zero follows the log law on a dyadic ladder") {
  const double want = -1.0 / (2.0 * M_PI);
  const double step = std::log(2.0) / (2.0 * M_PI);

  // point-sampled mollifier on a coarse grid: the eps = 2h rung distorts the
  // effective scale, so only coarse agreement is demanded here
  TorusGrid g{1.0, 64, 1.0 / 4096};
  CovarianceWorkspace ws(g, KernelSpec{});
  ws.build();
  const auto fit = fit_wick_constant(ws, {0.125, 0.0625, 0.03125});
  CHECK(rel_err(fit.q0[0], 0.446511096951) < 1e-6);  // pinned regression values
  CHECK(rel_err(fit.q0[1], 0.335122765483) < 1e-6);
  CHECK(rel_err(fit.q0[2], 0.225043254034) < 1e-6);
  CHECK(rel_err(fit.slope, want) < 0.15);
  CHECK(rel_err(fit.q0[0] - fit.q0[1], step) < 0.25);
  CHECK(rel_err(fit.q0[1] - fit.q0[2], step) < 0.25);
  CHECK_THROWS_AS(fit_wick_constant(ws, {0.125, 0.0625}), std::invalid_argument);

  // quadrature-transformed mollifier on well-resolved rungs (>= 18 time taps
  // per half-width, early kernel slabs spatially resolved): the law holds to
  // a tenth of a percent
  TorusGrid gf{1.0, 64, 1.0 / 8192};
  CovarianceWorkspace wf(gf, KernelSpec{});
  wf.build(-1, false);
  const auto fs = fit_wick_constant(wf, {0.25, 0.125, 0.0625}, true);
  CHECK(rel_err(fs.q0[0], 0.366859515769) < 1e-6);
  CHECK(rel_err(fs.slope, -0.159169) < 1e-4);
  CHECK(rel_err(fs.slope, want) < 0.01);
  CHECK(rel_err(fs.q0[0] - fs.q0[1], step) < 0.05);
  CHECK(rel_err(fs.q0[1] - fs.q0[2], step) < 0.05);
}

TEST_CASE("log-law remainder obeys an eps^2 envelope on dyadic pairs") {
  // r(eps) = Q0 + log(eps)/2pi - chat is too flat here for a pointwise
  // ratio readout (quad ~ -0.02 puts quad * eps^2 at or below the residual
  // quadrature floor for eps <= 1/8), so the honest desk-scale statements are
  // the dyadic Cauchy rate |y(eps) - y(eps/2)| <= B eps^2 and a lower bound
  // showing the instrument sees real structure at the coarse end.
  TorusGrid g{1.0, 64, 1.0 / 8192};
  CovarianceWorkspace ws(g, KernelSpec{});
  ws.build(-1, false);
  const double eps[4] = {0.5, 0.25, 0.125, 0.0625};
  double y[4];
  for (int i = 0; i < 4; ++i) {
    const auto mo = ws.mollifier_spectral(eps[i]);
    y[i] = ws.mollified_q0(mo, mo, true) + std::log(eps[i]) / (2.0 * M_PI);
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(y[i] - y[i + 1]) <= 0.1 * eps[i] * eps[i]);
  CHECK(y[0] - y[1] >= 5e-3);  // coarse pair: genuine eps^2-scale variation
  // fine pair: without the endpoint term in the quadrature this is ~4.4e-3
  CHECK(std::abs(y[2] - y[3]) <= 1e-3);
}

TEST_CASE("limiting constant is stable under mesh doubling") {
  // three significant digits at N = 128 against the half-resolution grid;
  // the fitted constant is the one the renormalization factor exponentiates
  const std::vector<double> ladder{0.25, 0.125, 0.0625};
  TorusGrid ga{1.0, 64, 1.0 / 8192}, gb{1.0, 128, 1.0 / 8192};
  CovarianceWorkspace wa(ga, KernelSpec{}), wb(gb, KernelSpec{});
  wa.build(600, false);
  wb.build(600, false);
  const double ca = fit_wick_constant(wa, ladder, true).chat;
  const double cb = fit_wick_constant(wb, ladder, true).chat;
  CHECK(rel_err(cb, -0.074527798) < 1e-6);  // pinned
  CHECK(std::abs(ca - cb) / std::abs(cb) < 5e-4);
  CHECK(c_rho(4.0 * M_PI, cb) == doctest::Approx(std::exp(2.0 * M_PI * cb)).epsilon(1e-12));
}

TEST_CASE("quadrature and point-sampled mollifiers agree when well resolved") {
  TorusGrid g{1.0, 64, 1.0 / 4096};
  CovarianceWorkspace ws(g, KernelSpec{});
  ws.build();
  const double eps = 0.25;  // 16 cells across: point sampling is accurate here
  const auto quad = ws.mollifier_spectral(eps);
  const double q0_quad = MollifiedCovariance(ws, quad, quad).q0();
  const double q0_grid = MollifiedCovariance(ws, eps, -1.0, Profile::Tensor).q0();
  CHECK(std::abs(q0_quad - q0_grid) / q0_grid < 2e-4);
  CHECK(std::abs(q0_quad - 0.145412956) < 1e-6);
}

TEST_CASE("lag-limited tables serve exact rows and refuse the rest") {
  TorusGrid g{1.0, 16, 0.005};
  CovarianceWorkspace full(g, KernelSpec{}), lim(g, KernelSpec{});
  full.build();
  lim.build(12);
  REQUIRE(lim.q_lags() == 13);
  MollifiedCovariance a(full, 0.125), b(lim, 0.125);
  CHECK(a.q0() == doctest::Approx(b.q0()).epsilon(1e-13));
  CHECK(b.lag_extent() < a.lag_extent());
  CHECK((a.slab(b.lag_extent()) - b.slab(b.lag_extent())).abs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(b.slab(b.lag_extent() + 1), std::logic_error);
  CHECK_THROWS_AS(b.value({(b.lag_extent() + 1) * g.dt, 0.0, 0.0}), std::logic_error);
}

TEST_CASE("renormalization factor brackets the parabolic power law") {
  TorusGrid g{1.0, 64, 1.0 / 4096};
  CovarianceWorkspace ws(g, KernelSpec{});
  ws.build();
  const double beta2 = 2.0 * M_PI;
  double lo = 1e300, hi = 0;  // one constant for every eps on the ladder
  const int far_lag = static_cast<int>(0.03 / g.dt);  // t = 0.03, ||z|| ~ 0.17
  for (double eps : {0.125, 0.0625, 0.03125}) {
    MollifiedCovariance mc(ws, eps);
    for (int l : {0, 4, 16, 64, far_lag})
      for (int di : {0, 1, 4, 8})
        for (int dj : {0, 2, 6}) {
          const PointD z{l * g.dt, di * g.h(), dj * g.h()};
          if (parabolic_norm(z) > 0.2) continue;
          const double jay = jay_pow(mc, beta2, z, -1.0);  // e^{beta2 Q_eps(z)}
          const double ref = std::pow(parabolic_norm(z) + eps, -beta2 / (2.0 * M_PI));
          const double ratio = jay / ref;
          lo = std::min(lo, ratio);
          hi = std::max(hi, ratio);
        }
  }
  CHECK(lo > 0.40);  // recorded for this kernel and mollifier
  CHECK(hi < 0.75);
  CHECK(hi / lo < 2.0);
}
