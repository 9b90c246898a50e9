#include "wick/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace wick {

double smooth_step(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / u);
  const double b = std::exp(-1.0 / (1.0 - u));
  return a / (a + b);
}

double kernel_cutoff(const KernelSpec& ks, double r) {
  return 1.0 - smooth_step((r - ks.inner) / (ks.outer - ks.inner));
}

double kernel_value(const KernelSpec& ks, const PointD& z) {
  if (z.t <= 0.0) return 0.0;
  if (z.t >= ks.t_support()) return 0.0;
  const double r = parabolic_norm(z);
  const double chi = kernel_cutoff(ks, r);
  if (chi == 0.0) return 0.0;
  const double q = (z.x1 * z.x1 + z.x2 * z.x2) / (2.0 * z.t);
  return chi * std::exp(-q) / (2.0 * M_PI * z.t);
}

CovarianceWorkspace::CovarianceWorkspace(const TorusGrid& g, const KernelSpec& ks)
    : g_(g), ks_(ks), fft_(g) {
  g_.require_valid();
  ks_.require_valid(g_.L);
  S_ = static_cast<int>(std::floor(ks_.t_support() / g_.dt));
}

Eigen::ArrayXXd CovarianceWorkspace::slab_to_row_fft(const Eigen::ArrayXXd& slab) const {
  Eigen::ArrayXXd hat = fft_.fwd_even(slab);
  return Eigen::Map<const Eigen::ArrayXXd>(hat.data(), 1, modes());
}

Eigen::ArrayXXd CovarianceWorkspace::k_slab(int s) const {
  const int N = g_.N;
  Eigen::ArrayXXd slab(N, N);
  const double t = s * g_.dt;
  for (int j = 0; j < N; ++j) {
    const double x2 = g_.offset(j);
    for (int i = 0; i < N; ++i) slab(i, j) = kernel_value(ks_, {t, g_.offset(i), x2});
  }
  return slab;
}

void CovarianceWorkspace::build(int max_lag, bool keep_khat) {
  const int N = g_.N, M = modes(), H = N / 2 + 1;
  const int W = max_lag < 0 ? S_ + 1 : std::min(max_lag + 1, S_ + 1);
  khat_.resize(S_ + 1, unique_modes());
  khat_.row(0).setZero();
  for (int s = 1; s <= S_; ++s) {
    const Eigen::ArrayXXd hat = fft_.fwd_even(k_slab(s));
    for (int r2 = 0; r2 < H; ++r2)
      khat_.row(s).segment(r2 * H, H) = hat.col(r2).head(H).transpose();
  }

  // hat Q(l, k) = dt * sum_s hat K(s, k) hat K(s + l, k). Zero-padding to P
  // >= 2(S+1) makes the circular FFT correlation linear; the backward
  // transform's 1/P makes r exactly the lag sum.
  qhat_.resize(W, M);
  int P = 1;
  while (P < 2 * (S_ + 1)) P <<= 1;
  Eigen::FFT<double> tfft;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(P), r(P);
  Eigen::VectorXcd spec(P);
  for (int r2 = 0; r2 < H; ++r2) {
    for (int r1 = 0; r1 < H; ++r1) {
      x.head(S_ + 1) = khat_.col(r1 + H * r2).matrix();
      tfft.fwd(spec, x);
      spec = (spec.array() * spec.array().conjugate()).matrix();
      tfft.inv(r, spec);
      const int m1s[2] = {r1, (N - r1) % N}, m2s[2] = {r2, (N - r2) % N};
      for (int i2 = 0; i2 < (m2s[1] == r2 ? 1 : 2); ++i2)
        for (int i1 = 0; i1 < (m1s[1] == r1 ? 1 : 2); ++i1)
          qhat_.col(m1s[i1] + N * m2s[i2]) = g_.dt * r.head(W).array();
    }
  }
  khat_head_ = khat_.topRows(W);
  khat_head_.row(0) = 1.0;  // delta limit of the heat kernel at t -> 0+
  if (!keep_khat) khat_.resize(0, 0);
}

Eigen::VectorXd CovarianceWorkspace::qhat_row(int lag) const {
  lag = std::abs(lag);
  if (lag >= q_lags()) return Eigen::VectorXd::Zero(modes());
  return qhat_.row(lag).matrix().transpose();
}

Eigen::ArrayXXd CovarianceWorkspace::q_slab(int lag) const {
  const Eigen::VectorXd row = qhat_row(lag);
  Eigen::Map<const Eigen::ArrayXXd> hat(row.data(), g_.N, g_.N);
  return fft_.inv_even(hat);
}

double CovarianceWorkspace::q_point(const PointD& z) const {
  const int lag = static_cast<int>(std::llround(std::abs(z.t) / g_.dt));
  if (lag >= q_lags()) return 0.0;
  const Eigen::ArrayXXd slab = q_slab(lag);
  const int i = g_.wrap_index(static_cast<int>(std::llround(z.x1 / g_.h())));
  const int j = g_.wrap_index(static_cast<int>(std::llround(z.x2 / g_.h())));
  return slab(i, j);
}

double CovarianceWorkspace::k_mass() const {
  if (khat_.size() == 0) throw std::logic_error("CovarianceWorkspace: khat not kept");
  return g_.dt * khat_.col(0).sum();
}

void CovarianceWorkspace::require_resolved(double eps) const {
  if (eps < 2.0 * g_.h())
    throw std::invalid_argument("mollifier scale unresolved: need eps >= 2h");
}

CovarianceWorkspace::Mollifier CovarianceWorkspace::mollifier(double eps, Profile prof) const {
  require_resolved(eps);
  const int N = g_.N;
  const double ieps2 = 1.0 / (eps * eps), ieps = 1.0 / eps;
  const int half = static_cast<int>(std::ceil(eps * eps / g_.dt));
  Mollifier mo;
  mo.half = half;
  mo.eps = eps;
  mo.hat.resize(2 * half + 1, modes());

  std::vector<Eigen::ArrayXXd> slabs(static_cast<std::size_t>(2 * half + 1));
  double mass = 0.0;
  for (int s = -half; s <= half; ++s) {
    Eigen::ArrayXXd slab(N, N);
    const double t = s * g_.dt * ieps2;
    for (int j = 0; j < N; ++j) {
      const double x2 = g_.offset(j) * ieps;
      for (int i = 0; i < N; ++i)
        slab(i, j) = profile_value(prof, {t, g_.offset(i) * ieps, x2});
    }
    mass += slab.sum();
    slabs[static_cast<std::size_t>(s + half)] = slab;
  }
  mass *= g_.cell_volume();
  if (mass <= 0) throw std::logic_error("mollifier: empty support on grid");
  for (int s = 0; s <= 2 * half; ++s)
    mo.hat.row(s) = slab_to_row_fft(slabs[static_cast<std::size_t>(s)] / mass);
  return mo;
}

namespace {

// 1D bump exp(1 - 1/(1-u^2)), matching the Tensor profile factors
double bump_1d(double u) {
  const double s = u * u;
  if (s >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - s));
}

// int_0^inf e^{-a t} dt minus its right-endpoint Riemann sum at step dt:
// the quadrature gap left by a boundary layer of decay rate a. Tends to
// dt/2 for slow modes and to 1/a once the layer fits inside one step.
double endpoint_gap(double a, double dt) {
  const double x = a * dt;
  if (x < 1e-4) return dt * (0.5 - x / 12.0);
  return 1.0 / a - dt / std::expm1(x);
}

// int_{-w}^{w} bump(x/w) cos(k x) dx by Simpson quadrature
double bump_ft(double w, double k, int n = 2048) {
  const double dx = w / n;
  double acc = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = i * dx;
    const double f = bump_1d(x / w) * std::cos(k * x);
    acc += f * (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return 2.0 * acc * dx / 3.0;
}

}  // namespace

CovarianceWorkspace::Mollifier CovarianceWorkspace::mollifier_spectral(double eps) const {
  const double c = 0.7598356856515925;  // 3^(-1/4), Tensor squeeze
  const double tw = c * c * eps * eps;  // time half-width
  if (tw < 2.0 * g_.dt)
    throw std::invalid_argument("mollifier scale unresolved in time: need 0.577 eps^2 >= 2dt");
  const int N = g_.N;
  const int half = static_cast<int>(std::ceil(tw / g_.dt));

  Eigen::VectorXd ghat(N);
  for (int m = 0; m <= N / 2; ++m) {
    const double k = 2.0 * M_PI * m / g_.L;
    ghat(m) = bump_ft(c * eps, k);
  }
  for (int m = N / 2 + 1; m < N; ++m) ghat(m) = ghat(N - m);
  ghat /= ghat(0);

  Eigen::VectorXd f(2 * half + 1);
  for (int s = -half; s <= half; ++s) f(s + half) = bump_1d(s * g_.dt / tw);
  f /= g_.dt * f.sum();  // unit discrete mass

  Mollifier mo;
  mo.half = half;
  mo.eps = eps;
  mo.time_taps = f;
  mo.mode_gain.resize(modes());
  for (int m2 = 0; m2 < N; ++m2)
    for (int m1 = 0; m1 < N; ++m1) mo.mode_gain(m1 + N * m2) = ghat(m1) * ghat(m2);
  return mo;
}

double CovarianceWorkspace::mollified_q0(const Mollifier& a, const Mollifier& b,
                                         bool endpoint) const {
  if (!built()) throw std::logic_error("CovarianceWorkspace: not built");
  const int W = q_lags(), rb = a.half + b.half;
  if (W <= S_ && W - 1 < rb)
    throw std::logic_error("covariance table shorter than mollifier pair");
  const int N = g_.N, H = N / 2 + 1;
  int P = 1;
  while (P < 2 * (a.half + b.half + W + 1)) P <<= 1;
  const auto wrap = [P](int t) { return ((t % P) + P) % P; };

  Eigen::FFT<double> tf;
  Eigen::VectorXd buf(P);
  Eigen::VectorXcd fa(P), fb(P), fq(P);
  // sequences are scattered at their true time index mod P, so no phase
  // bookkeeping is needed when halves differ
  const auto load_sep = [&](const Mollifier& mo, Eigen::VectorXcd& dst) {
    buf.setZero();
    for (int s = -mo.half; s <= mo.half; ++s) buf(wrap(s)) = mo.time_taps(s + mo.half);
    tf.fwd(dst, buf);
  };
  if (a.separable()) load_sep(a, fa);
  if (b.separable()) load_sep(b, fb);

  double q0 = 0.0;
  for (int r2 = 0; r2 < H; ++r2) {
    for (int r1 = 0; r1 < H; ++r1) {
      const int m = r1 + N * r2;
      const double w = (r1 == 0 || r1 == N / 2 ? 1.0 : 2.0) * (r2 == 0 || r2 == N / 2 ? 1.0 : 2.0);
      // hat K(tau, m) ~ e^{-|k|^2 tau / 2} below the first slab, so the
      // lag-l integrand hat K(tau) hat K(tau + l) decays at rate |k|^2 there
      const double eg = endpoint ? endpoint_gap(fft_.k2(r1, r2), g_.dt) : 0.0;
      const int u = r1 + H * r2;
      buf.setZero();
      buf(0) = qhat_(0, m) + eg;
      for (int l = 1; l < W; ++l) {
        const double v = qhat_(l, m) + eg * khat_head_(l, u);
        buf(l) = v;
        buf(P - l) = v;
      }
      tf.fwd(fq, buf);
      if (!a.separable()) {
        buf.setZero();
        for (int s = -a.half; s <= a.half; ++s) buf(wrap(s)) = a.hat(s + a.half, m);
        tf.fwd(fa, buf);
      }
      if (!b.separable()) {
        buf.setZero();
        for (int s = -b.half; s <= b.half; ++s) buf(wrap(s)) = b.hat(s + b.half, m);
        tf.fwd(fb, buf);
      }
      // Re sum_w hat a conj(hat b) hat q / P; hat q is real (even sequence)
      double acc = 0.0;
      for (int k = 0; k < P; ++k)
        acc += (fa(k) * std::conj(fb(k))).real() * fq(k).real();
      const double gain = (a.separable() ? a.mode_gain(m) : 1.0) *
                          (b.separable() ? b.mode_gain(m) : 1.0);
      q0 += w * gain * acc / P;
    }
  }
  return q0 * g_.dt * g_.dt / (g_.L * g_.L);
}

MollifiedCovariance::MollifiedCovariance(const CovarianceWorkspace& ws, double eps,
                                         double eps_bar, Profile prof)
    : MollifiedCovariance(ws, ws.mollifier(eps, prof),
                          (eps_bar < 0 || eps_bar == eps)
                              ? ws.mollifier(eps, prof)
                              : ws.mollifier(eps_bar, prof)) {}

MollifiedCovariance::MollifiedCovariance(const CovarianceWorkspace& ws,
                                         const CovarianceWorkspace::Mollifier& a,
                                         const CovarianceWorkspace::Mollifier& b)
    : ws_(&ws), eps_(a.eps), eps_bar_(b.eps) {
  if (!ws.built()) throw std::logic_error("MollifiedCovariance: workspace not built");
  // rhobar(s) = dt sum_tau rho_a(tau + s) rho_b(tau), per mode
  rb_half_ = a.half + b.half;
  const int M = ws.modes();
  separable_ = a.separable() && b.separable();
  if (separable_) {
    gain_ = (a.mode_gain.array() * b.mode_gain.array()).matrix();
    rbt_.setZero(2 * rb_half_ + 1);
    for (int s = -rb_half_; s <= rb_half_; ++s) {
      const int lo = std::max(-b.half, -a.half - s), hi = std::min(b.half, a.half - s);
      double acc = 0.0;
      for (int tau = lo; tau <= hi; ++tau)
        acc += a.time_taps(tau + s + a.half) * b.time_taps(tau + b.half);
      rbt_(s + rb_half_) = acc * ws.grid().dt;
    }
  } else {
    // mixed separable/dense pairs fall through here; expand the rank-1 side
    const auto expand = [M](const CovarianceWorkspace::Mollifier& mo) {
      Eigen::ArrayXXd h(2 * mo.half + 1, M);
      for (int s = 0; s <= 2 * mo.half; ++s)
        h.row(s) = mo.time_taps(s) * mo.mode_gain.transpose().array();
      return h;
    };
    const Eigen::ArrayXXd* ah = &a.hat;
    const Eigen::ArrayXXd* bh = &b.hat;
    Eigen::ArrayXXd atmp, btmp;
    if (a.separable()) ah = &(atmp = expand(a));
    if (b.separable()) bh = &(btmp = expand(b));
    rhobar_hat_.setZero(2 * rb_half_ + 1, M);
    for (int s = -rb_half_; s <= rb_half_; ++s) {
      const int lo = std::max(-b.half, -a.half - s), hi = std::min(b.half, a.half - s);
      if (lo > hi) continue;
      auto row = rhobar_hat_.row(s + rb_half_);
      for (int tau = lo; tau <= hi; ++tau)
        row += ah->row(tau + s + a.half) * bh->row(tau + b.half);
      row *= ws.grid().dt;
    }
  }
  truncated_ = ws.q_lags() <= ws.kernel_slabs();
  extent_ = truncated_ ? ws.q_lags() - 1 - rb_half_ : ws.q_lags() - 1 + rb_half_;
  if (extent_ < 0) throw std::logic_error("MollifiedCovariance: lag table shorter than mollifier");
  const Eigen::VectorXd row0 = hat_row_nocache(0);
  q0_ = row0.sum() / (ws.grid().L * ws.grid().L);
}

Eigen::VectorXd MollifiedCovariance::hat_row_nocache(int lag) const {
  // hat Q_eps(l) = dt sum_s rhobar(s) hat Q(l - s); runs along per-mode columns
  lag = std::abs(lag);
  const auto& ws = *ws_;
  const int M = ws.modes(), W = ws.q_lags();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(M);
  if (lag > extent_) {
    if (truncated_) throw std::logic_error("covariance table truncated below requested lag");
    return out;
  }
  if (dense_.size() > 0) return dense_.row(lag).matrix().transpose();
  const auto& qh = ws.qhat();
  const double dt = ws.grid().dt;
  const double* rbt = rbt_.data();
  for (int m = 0; m < M; ++m) {
    const double* q = qh.col(m).data();
    const double* rb = separable_ ? rbt : rhobar_hat_.col(m).data();
    double acc = 0.0;
    for (int s = -rb_half_; s <= rb_half_; ++s) {
      const int j = std::abs(lag - s);
      if (j < W) acc += rb[s + rb_half_] * q[j];
    }
    out(m) = acc * dt * (separable_ ? gain_(m) : 1.0);
  }
  return out;
}

void MollifiedCovariance::build_dense() const {
  if (dense_.size() > 0) return;
  const auto& ws = *ws_;
  const int M = ws.modes(), W = ws.q_lags();
  const double dt = ws.grid().dt;
  dense_.setZero(extent_ + 1, M);
  const auto& qh = ws.qhat();
  for (int m = 0; m < M; ++m) {
    const double* q = qh.col(m).data();
    const double* rb = separable_ ? rbt_.data() : rhobar_hat_.col(m).data();
    const double g = separable_ ? dt * gain_(m) : dt;
    double* o = dense_.col(m).data();
    for (int l = 0; l <= extent_; ++l) {
      double acc = 0.0;
      const int slo = std::max(-rb_half_, l - W + 1), shi = rb_half_;
      for (int s = slo; s <= shi; ++s) {
        const int j = std::abs(l - s);
        if (j < W) acc += rb[s + rb_half_] * q[j];
      }
      o[l] = acc * g;
    }
  }
}

Eigen::VectorXd MollifiedCovariance::hat_row(int lag) const { return hat_row_nocache(lag); }

const Eigen::ArrayXXd& MollifiedCovariance::slab(int lag) const {
  lag = std::abs(lag);
  auto it = cache_.find(lag);
  if (it != cache_.end()) return it->second;
  const auto& g = ws_->grid();
  Eigen::VectorXd row = hat_row_nocache(lag);
  Eigen::Map<const Eigen::ArrayXXd> hat(row.data(), g.N, g.N);
  return cache_.emplace(lag, ws_->fft().inv_even(hat)).first->second;
}

double MollifiedCovariance::value(const PointD& z) const {
  const auto& g = ws_->grid();
  const int lag = static_cast<int>(std::llround(std::abs(z.t) / g.dt));
  if (lag > extent_) {
    if (truncated_) throw std::logic_error("covariance table truncated below requested lag");
    return 0.0;
  }
  const auto& s = slab(lag);
  const int i = g.wrap_index(static_cast<int>(std::llround(z.x1 / g.h())));
  const int j = g.wrap_index(static_cast<int>(std::llround(z.x2 / g.h())));
  return s(i, j);
}

void MollifiedCovariance::for_each_slab(
    int l0, int l1, const std::function<void(int, const Eigen::ArrayXXd&)>& fn) const {
  const auto& g = ws_->grid();
  if (l1 - l0 > 8) build_dense();  // many slabs: pay for the dense table once
  for (int l = l0; l <= l1; ++l) {
    if (std::abs(l) > extent_) {
      if (truncated_) throw std::logic_error("covariance table truncated below requested lag");
      fn(l, Eigen::ArrayXXd::Zero(g.N, g.N));
      continue;
    }
    Eigen::VectorXd row = hat_row_nocache(l);
    Eigen::Map<const Eigen::ArrayXXd> hat(row.data(), g.N, g.N);
    fn(l, ws_->fft().inv_even(hat));
  }
}

Eigen::ArrayXXd jay_pow_slab(const MollifiedCovariance& mc, double beta2, int lag, double a) {
  return (-a * beta2 * mc.slab(lag)).exp();
}

double jay_pow(const MollifiedCovariance& mc, double beta2, const PointD& z, double a) {
  return std::exp(-a * beta2 * mc.value(z));
}

WickConstantFit fit_wick_constant(const CovarianceWorkspace& ws, std::vector<double> eps_ladder,
                                  bool spectral_mollifier) {
  if (eps_ladder.size() < 3) throw std::invalid_argument("fit_wick_constant: need >= 3 ladder points");
  std::sort(eps_ladder.begin(), eps_ladder.end());
  WickConstantFit fit;
  fit.eps = eps_ladder;
  for (double e : eps_ladder) {
    const auto mo = spectral_mollifier ? ws.mollifier_spectral(e) : ws.mollifier(e);
    fit.q0.push_back(ws.mollified_q0(mo, mo, /*endpoint=*/true));
  }

  const auto n = static_cast<Eigen::Index>(eps_ladder.size());
  // Q0 + log(eps)/2pi = chat + quad * eps^2
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n), z(n), q(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = eps_ladder[static_cast<std::size_t>(i)];
    X(i, 0) = 1.0;
    X(i, 1) = e * e;
    q(i) = fit.q0[static_cast<std::size_t>(i)];
    y(i) = q(i) + std::log(e) / (2.0 * M_PI);
    z(i) = std::log(e);
  }
  const Eigen::Vector2d coef = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  fit.chat = coef(0);
  fit.quad = coef(1);

  const double zm = z.mean();
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    num += (z(i) - zm) * q(i);
    den += (z(i) - zm) * (z(i) - zm);
  }
  fit.slope = num / den;

  // full model Q0 = c0 + c1 log eps + c2 eps^2
  Eigen::MatrixXd F(n, 3);
  F.col(0).setOnes();
  F.col(1) = z;
  F.col(2) = X.col(1);
  fit.slope_lemma = Eigen::Vector3d((F.transpose() * F).ldlt().solve(F.transpose() * q))(1);

  const double r0 = y(0) - fit.chat, r1 = y(1) - fit.chat;
  fit.residual_ratio = r0 != 0.0 ? r1 / r0 : 0.0;
  return fit;
}

}  // namespace wick
