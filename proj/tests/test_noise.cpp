#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "wick/kernels.hpp"
#include "wick/noise.hpp"

using namespace wick;

namespace {

double bump1(double u) {
  const double s = u * u;
  return s >= 1.0 ? 0.0 : std::exp(1.0 - 1.0 / (1.0 - s));
}

// midpoint quadrature of the profile and its square over the unit ball
void profile_integrals(double& i1, double& i2, int n = 120) {
  const double d = 2.0 / n;
  i1 = i2 = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        const double v = profile_value(
            Profile::Bump,
            {-1.0 + (a + 0.5) * d, -1.0 + (b + 0.5) * d, -1.0 + (c + 0.5) * d});
        i1 += v;
        i2 += v * v;
      }
  i1 *= d * d * d;
  i2 *= d * d * d;
}

double simpson_bump_pow(int p, int n = 4096) {
  double acc = 0;
  const double dx = 1.0 / n;
  for (int i = 0; i <= n; ++i) {
    const double f = std::pow(bump1(i * dx), p);
    acc += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return 2.0 * acc * dx / 3.0;
}

double sup_diff(const RealField& a, const RealField& b) {
  REQUIRE(a.t0 == b.t0);
  REQUIRE(a.slabs.size() == b.slabs.size());
  double m = 0;
  for (std::size_t r = 0; r < a.slabs.size(); ++r)
    m = std::max(m, (a.slabs[r] - b.slabs[r]).abs().maxCoeff());
  return m;
}

// symbol of the 5-point Laplacian, sign flipped so kappa >= 0
double kappa5(const TorusGrid& g, int m1, int m2) {
  const double h = g.h();
  const double k1 = 2.0 * M_PI * m1 / g.L, k2 = 2.0 * M_PI * m2 / g.L;
  return (4.0 - 2.0 * std::cos(k1 * h) - 2.0 * std::cos(k2 * h)) / (h * h);
}

}  // namespace

TEST_CASE("philox block function matches the reference vectors") {
  const auto z = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(z[0] == 0x6627e8d5u);
  CHECK(z[1] == 0xe169c58du);
  CHECK(z[2] == 0xbc57ac4cu);
  CHECK(z[3] == 0x9b00dbd8u);

  const std::uint32_t f = 0xffffffffu;
  const auto o = philox4x32({f, f, f, f}, {f, f});
  CHECK(o[0] == 0x408f276du);
  CHECK(o[1] == 0x41c83b0eu);
  CHECK(o[2] == 0xa20bc7c6u);
  CHECK(o[3] == 0x6d5451fdu);

  const auto p = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                            {0xa4093822u, 0x299f31d0u});
  CHECK(p[0] == 0xd16cfe09u);
  CHECK(p[1] == 0x94fdccebu);
  CHECK(p[2] == 0x5001e420u);
  CHECK(p[3] == 0x24126ea1u);
}

TEST_CASE("noise draws depend only on slab, cell, seed, sample") {
  TorusGrid g{1.0, 8, 1.0 / 64};
  const auto a = sample_noise(g, 42, 8, 0);
  const auto a2 = sample_noise(g, 42, 8, 0);
  CHECK(sup_diff(a.xi, a2.xi) == 0.0);

  // a narrower window over the same absolute slabs reproduces them bitwise
  const auto b = sample_noise(g, 42, 4, 2);
  for (int r = 0; r < 4; ++r)
    CHECK((a.xi.slabs[static_cast<std::size_t>(r + 2)] == b.xi.slabs[static_cast<std::size_t>(r)])
              .all());

  const auto c = sample_noise(g, 42, 8, 0, 1);
  const auto d = sample_noise(g, 43, 8, 0);
  CHECK((a.xi.slabs[0] != c.xi.slabs[0]).any());
  CHECK((a.xi.slabs[0] != d.xi.slabs[0]).any());
  CHECK((a.xi.slabs[0] != a.xi.slabs[1]).any());
  CHECK(a.xi.covers(0, 7));
  CHECK(!a.xi.covers(0, 8));
}

TEST_CASE("white noise has the density of the cell measure") {
  TorusGrid g{1.0, 16, 1.0 / 64};
  const int T = 24;
  const auto xi = sample_noise(g, 1234, T);
  const double scale = std::sqrt(g.cell_volume());
  const double n = static_cast<double>(T) * g.N * g.N;

  double m1 = 0, m2 = 0, m4 = 0, adj = 0;
  for (const auto& s : xi.xi.slabs) {
    const Eigen::ArrayXXd u = s * scale;  // unit normals again
    m1 += u.sum();
    m2 += u.square().sum();
    m4 += u.square().square().sum();
    for (int y = 0; y < g.N; ++y)
      for (int x = 0; x < g.N; ++x) adj += u(x, y) * u((x + 1) % g.N, y);
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  adj /= n;
  CHECK(std::abs(m1) < 3.0 / std::sqrt(n));
  CHECK(std::abs(m2 - 1.0) < 3.0 * std::sqrt(2.0 / n));
  CHECK(m4 > 2.6);
  CHECK(m4 < 3.4);
  CHECK(std::abs(adj) < 3.0 / std::sqrt(n));
}

TEST_CASE("spectral transforms round-trip and the two filter routes agree") {
  TorusGrid g{1.0, 16, 1.0 / 256};
  CovarianceWorkspace ws(g, {});
  const auto mo = ws.mollifier(0.25);
  const auto conv = SpectralConvolver::from_mollifier(g, mo);
  const auto fused = SpectralConvolver::heat_mollified(ws, mo);
  const auto xi = sample_noise(g, 5, fused.tap_count() + 4);
  const auto spec = to_spectral(g, xi.xi);

  const auto back = to_real(g, spec);
  CHECK(sup_diff(back, xi.xi) < 1e-12 * xi.xi.slabs[0].abs().maxCoeff());
  for (const auto* cv : {&conv, &fused}) {
    const auto fa = cv->apply(spec);
    const auto fb = cv->apply_direct(spec);
    CHECK(fa.t0 == spec.t0 + cv->s_max());
    CHECK(fa.slabs() == spec.slabs() - cv->tap_count() + 1);
    CHECK(fb.t0 == fa.t0);
    const double scale = fa.rows.abs().maxCoeff();
    CHECK((fa.rows - fb.rows).abs().maxCoeff() < 1e-12 * scale);
  }

  // editing one input slab cannot reach output rows that close before it;
  // the center tap (the only one guaranteed nonzero, the edge taps sit on the
  // support boundary) must reach the row it feeds
  SpectralField late = spec;
  const int R = conv.tap_count();
  const int tedit = static_cast<int>(late.rows.rows()) - 1 - mo.half;
  late.rows.row(tedit) *= 2.0;
  const auto r0 = conv.apply_direct(spec);
  const auto r1 = conv.apply_direct(late);
  const int firsthit = tedit - R + 1;
  REQUIRE(firsthit > 0);
  CHECK((r0.rows.topRows(firsthit) == r1.rows.topRows(firsthit)).all());
  CHECK((r0.rows.row(firsthit + mo.half) != r1.rows.row(firsthit + mo.half)).any());

  // pure time relabeling shifts the window and nothing else
  NoiseRealization sh = xi;
  sh.xi.t0 = 7;
  const auto rs = conv.apply(to_spectral(g, sh.xi));
  const auto rb = conv.apply(spec);
  CHECK(rs.t0 == rb.t0 + 7);
  CHECK((rs.rows == rb.rows).all());
}

TEST_CASE("mollification has unit mass and the continuum L2 norm") {
  TorusGrid g{1.0, 32, 1.0 / 256};
  CovarianceWorkspace ws(g, {});
  double i1, i2;
  profile_integrals(i1, i2);

  // taps carry the physical normalization: dt/L^2 sum |rho hat|^2 = int rho^2
  for (const double eps : {0.25, 0.125}) {
    const auto mo = ws.mollifier(eps);
    const auto conv = SpectralConvolver::from_mollifier(g, mo);
    const double vtap = g.dt / (g.L * g.L) * conv.taps().matrix().squaredNorm();
    const double cont = i2 / (i1 * i1) / (eps * eps * eps * eps);
    // 0.09% at eps = 8h, 0.9% at eps = 4h
    CHECK(vtap / cont == doctest::Approx(1.0).epsilon(eps >= 0.25 ? 0.02 : 0.03));
  }
  {
    const auto ms = ws.mollifier_spectral(0.25);
    const auto conv = SpectralConvolver::from_mollifier(g, ms);
    const double vtap = g.dt / (g.L * g.L) * conv.taps().matrix().squaredNorm();
    const double b1 = simpson_bump_pow(1), b2 = simpson_bump_pow(2);
    const double c = 0.7598356856515925;
    const double r = b2 / (b1 * b1);
    const double cont = r * r * r / (c * c * c * c * std::pow(0.25, 4));
    CHECK(vtap / cont == doctest::Approx(1.0).epsilon(0.02));
  }

  // unit discrete mass makes constants fixed points of the convolution
  for (const bool spectral : {false, true}) {
    const auto mo = spectral ? ws.mollifier_spectral(0.25) : ws.mollifier(0.25);
    NoiseRealization flat;
    flat.grid = g;
    flat.xi.t0 = 0;
    flat.xi.slabs.assign(static_cast<std::size_t>(2 * mo.half + 1),
                         Eigen::ArrayXXd::Constant(g.N, g.N, 0.7));
    const auto out = mollify(flat, mo);
    REQUIRE(out.slabs.size() == 1);
    CHECK((out.slabs[0] - 0.7).abs().maxCoeff() < 1e-12);
  }

  // translation equivariance: rolling the input rolls the output
  const auto mo = ws.mollifier(0.25);
  const auto xi = sample_noise(g, 9, 2 * mo.half + 3);
  NoiseRealization rolled = xi;
  for (auto& s : rolled.xi.slabs) {
    Eigen::ArrayXXd t(g.N, g.N);
    for (int y = 0; y < g.N; ++y)
      for (int x = 0; x < g.N; ++x) t((x + 1) % g.N, (y + 3) % g.N) = s(x, y);
    s = t;
  }
  const auto oa = mollify(xi, mo);
  const auto ob = mollify(rolled, mo);
  const double scale = oa.slabs[0].abs().maxCoeff();
  for (std::size_t r = 0; r < oa.slabs.size(); ++r)
    for (int y = 0; y < g.N; ++y)
      for (int x = 0; x < g.N; ++x)
        CHECK(std::abs(ob.slabs[r]((x + 1) % g.N, (y + 3) % g.N) - oa.slabs[r](x, y)) <
              1e-12 * scale);
}

TEST_CASE("convolved field reproduces the covariance table") {
  TorusGrid g{1.0, 16, 1.0 / 256};
  CovarianceWorkspace ws(g, {});
  ws.build(-1, false);
  const auto ma = ws.mollifier(0.25);
  const auto mb = ws.mollifier(0.125);
  const double q0a = ws.mollified_q0(ma, ma);
  const double q0b = ws.mollified_q0(mb, mb);
  const double q0ab = ws.mollified_q0(ma, mb);
  const auto ca = SpectralConvolver::heat_mollified(ws, ma);
  const auto cb = SpectralConvolver::heat_mollified(ws, mb);

  // the fused taps ARE the lag-zero table, no sampling involved
  const double vtap = g.dt / (g.L * g.L) * ca.taps().matrix().squaredNorm();
  CHECK(vtap == doctest::Approx(q0a).epsilon(1e-12));
  MollifiedCovariance cov(ws, ma, ma);
  CHECK(cov.q0() == doctest::Approx(q0a).epsilon(1e-10));

  const int T = ca.tap_count() + 4;
  const int n = 600;
  const int lagdx = 2, lagdt = 2;
  std::vector<double> var(n), cvx(n), cvt(n), cpl(n);
  for (int i = 0; i < n; ++i) {
    const auto xi = sample_noise(g, 7, T, 0, static_cast<std::uint64_t>(i));
    const auto spec = to_spectral(g, xi.xi);
    const auto oa = to_real(g, ca.apply(spec));
    const auto ob = to_real(g, cb.apply(spec));
    const auto& s0 = oa.slabs[1];
    const auto& s2 = oa.slabs[1 + lagdt];
    var[i] = s0.square().mean();
    double ax = 0, at = 0;
    for (int y = 0; y < g.N; ++y)
      for (int x = 0; x < g.N; ++x) {
        ax += s0(x, y) * s0((x + lagdx) % g.N, y);
        at += s0(x, y) * s2(x, y);
      }
    cvx[i] = ax / (g.N * g.N);
    cvt[i] = at / (g.N * g.N);
    const auto& da = oa.slabs[1];
    const auto& db = ob.slabs[static_cast<std::size_t>(oa.t0 + 1 - ob.t0)];
    cpl[i] = (da - db).square().mean();
  }
  const auto tstat = [n](const std::vector<double>& s, double target) {
    double m = 0, sq = 0;
    for (double x : s) m += x;
    m /= n;
    for (double x : s) sq += (x - m) * (x - m);
    return (m - target) / (std::sqrt(sq / (n - 1.0)) / std::sqrt(double(n)));
  };
  CHECK(std::abs(tstat(var, q0a)) < 3.0);
  CHECK(std::abs(tstat(cvx, cov.value({0.0, lagdx * g.h(), 0.0}))) < 3.0);
  CHECK(std::abs(tstat(cvt, cov.value({lagdt * g.dt, 0.0, 0.0}))) < 3.0);
  // shared noise couples the scales: Var(a - b) = q0a + q0b - 2 q0ab
  CHECK(std::abs(tstat(cpl, q0a + q0b - 2.0 * q0ab)) < 3.0);
}

TEST_CASE("fused taps equal the sequential heat-then-mollify route") {
  TorusGrid g{1.0, 16, 1.0 / 256};
  CovarianceWorkspace ws(g, {});
  const auto mo = ws.mollifier(0.25);
  const auto hk = SpectralConvolver::heat(ws);
  const auto mk = SpectralConvolver::from_mollifier(g, mo);
  const auto fused = SpectralConvolver::heat_mollified(ws, mo);
  CHECK(fused.s_min() == hk.s_min() + mk.s_min());
  CHECK(fused.tap_count() == hk.tap_count() + mk.tap_count() - 1);

  const auto xi = sample_noise(g, 21, fused.tap_count() + 3);
  const auto spec = to_spectral(g, xi.xi);
  const auto one = fused.apply(spec);
  const auto two = hk.apply(mk.apply(spec));
  CHECK(one.t0 == two.t0);
  const double scale = one.rows.abs().maxCoeff();
  CHECK((one.rows - two.rows).abs().maxCoeff() < 1e-12 * scale);
}

TEST_CASE("remainder of the mollified field solves the discrete heat equation") {
  TorusGrid g{1.0, 32, 1.0 / 256};
  CovarianceWorkspace ws(g, {});
  const auto mo = ws.mollifier(0.25);
  const auto hk = SpectralConvolver::heat(ws);
  const auto fused = SpectralConvolver::heat_mollified(ws, mo);
  const auto xi = sample_noise(g, 11, fused.tap_count() + 6);
  const auto ff = free_field(xi, ws, mo);
  CHECK(ff.remainder.t0 == ff.values.t0);
  CHECK(ff.remainder.slabs.size() + 1 == ff.values.slabs.size());

  // spectral oracle for the same finite differences: with heat taps k(s, m),
  //   R hat(t) = sum_s ([k(s+1) - k(s)]/dt + kappa/2 k(s)) dt eta hat(t-s) - eta hat(t)
  const int S = hk.tap_count() - 1;
  const auto& kt = hk.taps();
  Eigen::ArrayXXd rt(S + 1, g.N * g.N);
  for (int m2 = 0; m2 < g.N; ++m2)
    for (int m1 = 0; m1 < g.N; ++m1) {
      const int m = m1 + g.N * m2;
      const double kap = kappa5(g, m1, m2);
      for (int s = 0; s <= S; ++s) {
        const double knext = s + 1 <= S ? kt(s + 1, m) : 0.0;
        rt(s, m) = (knext - kt(s, m)) / g.dt + 0.5 * kap * kt(s, m);
      }
      rt(0, m) -= 1.0 / g.dt;
    }
  const SpectralConvolver rc(g, 0, rt);
  const auto oracle = to_real(g, rc.apply(to_spectral(g, mollify(xi, mo))));
  CHECK(oracle.t0 == ff.remainder.t0);
  double md = 0, sup = 0;
  for (std::size_t r = 0; r < ff.remainder.slabs.size(); ++r) {
    md = std::max(md, (ff.remainder.slabs[r] - oracle.slabs[r]).abs().maxCoeff());
    sup = std::max(sup, ff.remainder.slabs[r].abs().maxCoeff());
  }
  CHECK(md < 1e-9 * sup);

  // refining the mesh at fixed eps shrinks the remainder toward the smooth
  // commutator left by the kernel cutoff (it does not vanish)
  double prev = 1e300;
  for (const int k : {0, 1, 2}) {
    TorusGrid gk{1.0, 16 << k, 1.0 / (64 << (2 * k))};
    CovarianceWorkspace wk(gk, {});
    const auto mk = wk.mollifier(0.25);
    const auto fk = SpectralConvolver::heat_mollified(wk, mk);
    const auto xik = sample_noise(gk, 11, fk.tap_count() + 6);
    const auto ffk = free_field(xik, wk, mk);
    double rms = 0;
    for (const auto& s : ffk.remainder.slabs) rms += s.square().mean();
    rms = std::sqrt(rms / static_cast<double>(ffk.remainder.slabs.size()));
    CHECK(rms < prev);
    prev = rms;
  }
}
