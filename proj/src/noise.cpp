#include "wick/noise.hpp"

#include <cmath>
#include <stdexcept>
#include <unsupported/Eigen/FFT>

namespace wick {

namespace {

inline void philox_round(PhiloxCtr& c, const PhiloxKey& k) {
  const std::uint64_t p0 = 0xD2511F53ull * c.c0;
  const std::uint64_t p1 = 0xCD9E8D57ull * c.c2;
  const std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c.c1 ^ k.k0;
  const std::uint32_t n1 = static_cast<std::uint32_t>(p1);
  const std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c.c3 ^ k.k1;
  const std::uint32_t n3 = static_cast<std::uint32_t>(p0);
  c = {n0, n1, n2, n3};
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(PhiloxCtr c, PhiloxKey k) {
  for (int r = 0; r < 10; ++r) {
    if (r) {
      k.k0 += 0x9E3779B9u;
      k.k1 += 0xBB67AE85u;
    }
    philox_round(c, k);
  }
  return {c.c0, c.c1, c.c2, c.c3};
}

std::array<double, 2> block_normals(const std::array<std::uint32_t, 4>& b) {
  const std::uint64_t a = (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
  const std::uint64_t c = (static_cast<std::uint64_t>(b[2]) << 32) | b[3];
  const double u1 = static_cast<double>(a >> 11) * 0x1p-53 + 0x1p-54;
  const double u2 = static_cast<double>(c >> 11) * 0x1p-53 + 0x1p-54;
  const double r = std::sqrt(-2.0 * std::log(u1));
  return {r * std::cos(2.0 * M_PI * u2), r * std::sin(2.0 * M_PI * u2)};
}

NoiseRealization sample_noise(const TorusGrid& g, std::uint64_t seed, int slabs,
                              std::int64_t t0, std::uint64_t sample) {
  g.require_valid();
  if (slabs <= 0) throw std::invalid_argument("sample_noise: need at least one slab");
  NoiseRealization out{g, seed, sample, RealField{t0, {}}};
  const double scale = 1.0 / std::sqrt(g.cell_volume());
  const int pairs = g.N * g.N / 2;
  const PhiloxKey key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  out.xi.slabs.reserve(static_cast<std::size_t>(slabs));
  for (int r = 0; r < slabs; ++r) {
    const auto t = static_cast<std::uint64_t>(t0 + r);
    Eigen::ArrayXXd slab(g.N, g.N);
    double* d = slab.data();
    for (int c = 0; c < pairs; ++c) {
      const auto z = block_normals(philox4x32(
          {static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32),
           static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(sample)},
          key));
      d[2 * c] = scale * z[0];
      d[2 * c + 1] = scale * z[1];
    }
    out.xi.slabs.push_back(std::move(slab));
  }
  return out;
}

SpectralField to_spectral(const TorusGrid& g, const RealField& f) {
  const int M = g.N * g.N, T = static_cast<int>(f.slabs.size());
  Fft2 fft(g);
  SpectralField out{f.t0, Eigen::ArrayXXcd(T, M)};
  for (int r = 0; r < T; ++r) {
    const Eigen::ArrayXXcd hat = fft.fwd_real(f.slabs[static_cast<std::size_t>(r)]);
    out.rows.row(r) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
  }
  return out;
}

SpectralField to_spectral(const TorusGrid& g, const ComplexField& f) {
  const int M = g.N * g.N, T = static_cast<int>(f.slabs.size());
  Fft2 fft(g);
  SpectralField out{f.t0, Eigen::ArrayXXcd(T, M)};
  for (int r = 0; r < T; ++r) {
    const Eigen::ArrayXXcd hat = fft.fwd(f.slabs[static_cast<std::size_t>(r)]);
    out.rows.row(r) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
  }
  return out;
}

RealField to_real(const TorusGrid& g, const SpectralField& f) {
  const int M = g.N * g.N, T = f.slabs();
  Fft2 fft(g);
  RealField out{f.t0, {}};
  out.slabs.reserve(static_cast<std::size_t>(T));
  Eigen::ArrayXXcd hat(g.N, g.N);
  for (int r = 0; r < T; ++r) {
    Eigen::Map<Eigen::ArrayXcd>(hat.data(), M) = f.rows.row(r).transpose();
    out.slabs.push_back(fft.inv(hat).real());
  }
  return out;
}

ComplexField to_complex(const TorusGrid& g, const SpectralField& f) {
  const int M = g.N * g.N, T = f.slabs();
  Fft2 fft(g);
  ComplexField out{f.t0, {}};
  out.slabs.reserve(static_cast<std::size_t>(T));
  Eigen::ArrayXXcd hat(g.N, g.N);
  for (int r = 0; r < T; ++r) {
    Eigen::Map<Eigen::ArrayXcd>(hat.data(), M) = f.rows.row(r).transpose();
    out.slabs.push_back(fft.inv(hat));
  }
  return out;
}

SpectralConvolver::SpectralConvolver(const TorusGrid& g, int s_min, Eigen::ArrayXXd taps)
    : g_(g), s_min_(s_min), taps_(std::move(taps)) {
  if (taps_.rows() < 1 || taps_.cols() != g_.N * g_.N)
    throw std::invalid_argument("SpectralConvolver: taps must be R x N^2");
}

SpectralConvolver SpectralConvolver::from_mollifier(const TorusGrid& g, const Mollifier& mo) {
  if (!mo.separable()) return SpectralConvolver(g, -mo.half, mo.hat);
  const int R = 2 * mo.half + 1;
  Eigen::ArrayXXd taps(R, g.N * g.N);
  for (int r = 0; r < R; ++r)
    taps.row(r) = mo.time_taps(r) * mo.mode_gain.array().transpose();
  return SpectralConvolver(g, -mo.half, std::move(taps));
}

SpectralConvolver SpectralConvolver::heat(const CovarianceWorkspace& ws) {
  const TorusGrid& g = ws.grid();
  const int S = ws.kernel_slabs(), M = g.N * g.N;
  Fft2 fft(g);
  Eigen::ArrayXXd taps(S + 1, M);
  taps.row(0).setZero();
  for (int s = 1; s <= S; ++s) {
    const Eigen::ArrayXXd hat = fft.fwd_even(ws.k_slab(s));
    taps.row(s) = Eigen::Map<const Eigen::ArrayXd>(hat.data(), M).transpose();
  }
  return SpectralConvolver(g, 0, std::move(taps));
}

SpectralConvolver SpectralConvolver::heat_mollified(const CovarianceWorkspace& ws,
                                                    const Mollifier& mo) {
  const SpectralConvolver hk = heat(ws);
  const SpectralConvolver mk = from_mollifier(ws.grid(), mo);
  const TorusGrid& g = ws.grid();
  const int Rh = hk.tap_count(), Rm = mk.tap_count();
  Eigen::ArrayXXd taps = Eigen::ArrayXXd::Zero(Rh + Rm - 1, g.N * g.N);
  for (int a = 0; a < Rh; ++a)
    for (int b = 0; b < Rm; ++b) taps.row(a + b) += g.dt * hk.taps_.row(a) * mk.taps_.row(b);
  return SpectralConvolver(g, hk.s_min() + mk.s_min(), std::move(taps));
}

SpectralField SpectralConvolver::apply(const SpectralField& in) const {
  const int T = in.slabs(), R = tap_count(), M = g_.N * g_.N;
  if (T < R) throw std::invalid_argument("SpectralConvolver: window shorter than tap span");
  int P = 1;
  while (P < T) P <<= 1;
  // full-overlap outputs read only genuine indices, so padding to T is wrap-free
  Eigen::FFT<double> fft;
  if (pad_ != P) {
    taps_hat_.resize(P, M);
    Eigen::VectorXcd x = Eigen::VectorXcd::Zero(P), X(P);
    for (int m = 0; m < M; ++m) {
      x.head(R) = taps_.col(m).matrix().cast<std::complex<double>>();
      fft.fwd(X, x);
      taps_hat_.col(m) = X;
    }
    pad_ = P;
  }
  SpectralField out{in.t0 + s_max(), Eigen::ArrayXXcd(T - R + 1, M)};
  Eigen::VectorXcd x(P), X(P), y(P);
  for (int m = 0; m < M; ++m) {
    x.head(T) = in.rows.col(m).matrix();
    x.tail(P - T).setZero();
    fft.fwd(X, x);
    X.array() *= taps_hat_.col(m);
    fft.inv(y, X);
    out.rows.col(m) = g_.dt * y.segment(R - 1, T - R + 1).array();
  }
  return out;
}

SpectralField SpectralConvolver::apply_direct(const SpectralField& in) const {
  const int T = in.slabs(), R = tap_count();
  if (T < R) throw std::invalid_argument("SpectralConvolver: window shorter than tap span");
  SpectralField out{in.t0 + s_max(), Eigen::ArrayXXcd::Zero(T - R + 1, g_.N * g_.N)};
  for (int j = 0; j < T - R + 1; ++j)
    for (int r = 0; r < R; ++r)
      out.rows.row(j) +=
          g_.dt * taps_.row(r).cast<std::complex<double>>() * in.rows.row(j + R - 1 - r);
  return out;
}

RealField mollify(const NoiseRealization& xi, const Mollifier& mo) {
  const SpectralConvolver conv = SpectralConvolver::from_mollifier(xi.grid, mo);
  return to_real(xi.grid, conv.apply(to_spectral(xi.grid, xi.xi)));
}

namespace {

Eigen::ArrayXXd laplacian5(const Eigen::ArrayXXd& f, double h) {
  const int N = static_cast<int>(f.rows());
  Eigen::ArrayXXd out(N, N);
  const double ih2 = 1.0 / (h * h);
  for (int j = 0; j < N; ++j) {
    const int jm = (j + N - 1) % N, jp = (j + 1) % N;
    for (int i = 0; i < N; ++i) {
      const int im = (i + N - 1) % N, ip = (i + 1) % N;
      out(i, j) = ih2 * (f(ip, j) + f(im, j) + f(i, jp) + f(i, jm) - 4.0 * f(i, j));
    }
  }
  return out;
}

}  // namespace

FreeField free_field(const NoiseRealization& xi, const CovarianceWorkspace& ws,
                     const Mollifier& mo) {
  const TorusGrid& g = xi.grid;
  const SpectralField spec = to_spectral(g, xi.xi);
  const RealField phi = to_real(g, SpectralConvolver::heat_mollified(ws, mo).apply(spec));
  const RealField xie = to_real(g, SpectralConvolver::from_mollifier(g, mo).apply(spec));

  FreeField out{g, mo.eps, xi.seed, phi, RealField{phi.t0, {}}};
  const auto nphi = static_cast<int>(phi.slabs.size());
  out.remainder.slabs.reserve(static_cast<std::size_t>(nphi - 1));
  for (int r = 0; r + 1 < nphi; ++r) {
    const std::int64_t t = phi.t0 + r;
    const auto& cur = phi.slabs[static_cast<std::size_t>(r)];
    const Eigen::ArrayXXd dot = (phi.slabs[static_cast<std::size_t>(r + 1)] - cur) / g.dt;
    const auto& drive = xie.slabs[static_cast<std::size_t>(t - xie.t0)];
    out.remainder.slabs.push_back(dot - 0.5 * laplacian5(cur, g.h()) - drive);
  }
  return out;
}

}  // namespace wick
