#include "wick/chaos.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include "wick/fft2.hpp"

namespace wick {

namespace {

constexpr double kPi = 3.14159265358979323846;

using Cx = std::complex<double>;

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * (std::abs(a) + std::abs(b)); }

double norm_constant(Normalization norm, double beta2, double q0, double eps, double chat) {
  if (norm == Normalization::Wick) return std::exp(beta2 * q0 / 2.0);
  return c_rho(beta2, chat) * std::pow(eps, -beta2 / (4.0 * kPi));
}

Eigen::ArrayXXcd wick_slab(const Eigen::ArrayXXd& phi, double kbeta, double c) {
  return phi.unaryExpr([=](double v) { return std::polar(c, kbeta * v); });
}

// spatial transforms of the rescaled profile, slabs -half..half around the
// center slab; integral = vol sum phi
struct ProfileHats {
  int half = 0;
  double integral = 0.0;
  Eigen::ArrayXXcd rows;               // (2 half + 1) x M
  std::vector<Eigen::ArrayXXd> slabs;  // filled only on request
};

ProfileHats profile_hats(const TorusGrid& g, const Fft2& fft, Profile prof, double lam,
                         bool keep_slabs) {
  const int N = g.N, M = N * N;
  const int half = std::max(0, static_cast<int>(std::ceil(lam * lam / g.dt)) - 1);
  ProfileHats ph;
  ph.half = half;
  ph.rows.resize(2 * half + 1, M);
  double mass = 0.0;
  Eigen::ArrayXXd slab(N, N);
  for (int tau = -half; tau <= half; ++tau) {
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < N; ++i)
        slab(i, j) = rescaled_profile(prof, {0.0, 0.0, 0.0}, lam,
                                      {tau * g.dt, g.offset(i), g.offset(j)}, g.L);
    mass += slab.sum();
    const Eigen::ArrayXXcd hat = fft.fwd_real(slab);
    ph.rows.row(tau + half) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
    if (keep_slabs) ph.slabs.push_back(slab);
  }
  ph.integral = mass * g.cell_volume();
  return ph;
}

// v(c) = <phi_{(tc, c)}^lam, f> for every spatial center c at once; fhat rows
// are slabwise transforms of f and tc_row indexes the center slab in them
Eigen::ArrayXXcd multicenter_pairing(const TorusGrid& g, const Fft2& fft, const ProfileHats& ph,
                                     const Eigen::ArrayXXcd& fhat, int tc_row) {
  const int N = g.N, M = N * N;
  Eigen::Array<Cx, 1, Eigen::Dynamic> acc = Eigen::Array<Cx, 1, Eigen::Dynamic>::Zero(M);
  for (int r = 0; r < 2 * ph.half + 1; ++r)
    acc += ph.rows.row(r).conjugate() * fhat.row(tc_row - ph.half + r);
  acc *= g.dt;
  Eigen::ArrayXXcd hat(N, N);
  Eigen::Map<Eigen::ArrayXcd>(hat.data(), M) = acc.transpose();
  return fft.inv(hat);
}

Eigen::ArrayXXcd slab_hats(const Fft2& fft, const std::vector<Eigen::ArrayXXcd>& slabs, int M) {
  Eigen::ArrayXXcd rows(static_cast<int>(slabs.size()), M);
  for (std::size_t r = 0; r < slabs.size(); ++r) {
    const Eigen::ArrayXXcd hat = fft.fwd(slabs[r]);
    rows.row(static_cast<int>(r)) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
  }
  return rows;
}

// transform of the conjugate field: conj at reversed modes
SpectralField conj_modes(const TorusGrid& g, const SpectralField& f) {
  const int N = g.N, M = N * N;
  SpectralField out{f.t0, Eigen::ArrayXXcd(f.rows.rows(), M)};
  for (int m = 0; m < M; ++m) {
    const int m1 = m % N, m2 = m / N;
    const int mr = ((N - m1) % N) + N * ((N - m2) % N);
    out.rows.col(m) = f.rows.col(mr).conjugate();
  }
  return out;
}

double moment_of_abs(const Eigen::ArrayXXcd& v, int p) {
  if (p == 2) return v.abs2().mean();
  return v.abs2().pow(p / 2).mean();
}

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

// leave-one-out jackknife of the sample mean
MeanSe jackknife(const std::vector<double>& w) {
  const int n = static_cast<int>(w.size());
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const double mean = total / n;
  double ss = 0.0;
  for (double v : w) {
    const double loo = (total - v) / (n - 1);
    ss += (loo - mean) * (loo - mean);
  }
  return {mean, std::sqrt(ss * (n - 1) / n)};
}

void check_plan(const TorusGrid& g, const MomentPlan& plan) {
  if (plan.n < 100) throw std::invalid_argument("moment plan: need n >= 100");
  if (plan.lambdas.empty()) throw std::invalid_argument("moment plan: empty lambda ladder");
  for (int p : plan.ps)
    if (p < 2 || p % 2 != 0)
      throw std::invalid_argument("moment plan: moments are even, p >= 2");
  for (double lam : plan.lambdas)
    if (!(lam > 0) || lam > g.L / 2)
      throw std::invalid_argument("moment plan: lambda outside (0, L/2]");
}

std::string window_flag(const TorusGrid& g, double lam, double eps) {
  if (lam < 4 * g.h() || lam * lam < 4 * g.dt) return "under-resolved";
  if (lam < 8 * eps * (1.0 - 1e-9)) return "mollifier-dominated";
  return {};
}

// E[Psi^k(z) conj Psi^k(w)] - tail, as a slab over spatial offsets; zero
// beyond the lag extent
Eigen::ArrayXXd pair_slab_centered(const MollifiedCovariance& cov, double beta2, int k, int lag) {
  const int N = cov.workspace().grid().N;
  if (std::abs(lag) > cov.lag_extent()) return Eigen::ArrayXXd::Zero(N, N);
  return jay_pow_slab(cov, beta2, std::abs(lag), -static_cast<double>(k) * k) - 1.0;
}

}  // namespace

WickField wick_exponential(const FreeField& phi, const MollifiedCovariance& cov, double beta2,
                           int k, Normalization norm, double chat) {
  if (k == 0) throw std::invalid_argument("wick_exponential: k = 0 has no oscillation");
  if (!close(cov.eps(), cov.eps_bar()))
    throw std::invalid_argument("wick_exponential: table pairs two different scales");
  if (!close(cov.eps(), phi.eps))
    throw std::invalid_argument("wick_exponential: field and table disagree on eps");
  WickField out;
  out.k = k;
  out.beta2 = beta2;
  out.eps = phi.eps;
  out.q0 = cov.q0();
  out.norm = norm;
  const double c = norm_constant(norm, beta2, out.q0, out.eps, chat);
  const double kbeta = k * std::sqrt(beta2);
  out.values.t0 = phi.values.t0;
  out.values.slabs.reserve(phi.values.slabs.size());
  for (const auto& s : phi.values.slabs) out.values.slabs.push_back(wick_slab(s, kbeta, c));
  return out;
}

double wick_pair_prefactor(const MollifiedCovariance& cov, double beta2, int k) {
  return std::exp(-beta2 * (static_cast<double>(k) * k - 1.0) * cov.q0());
}

double exact_second_moment(const MollifiedCovariance& cov, double beta2, int k, Profile prof,
                           double lam) {
  const CovarianceWorkspace& ws = cov.workspace();
  const TorusGrid& g = ws.grid();
  const Fft2& fft = ws.fft();
  const int N = g.N, M = N * N;
  const ProfileHats ph = profile_hats(g, fft, prof, lam, false);
  const int lagmax = std::min(cov.lag_extent(), 2 * ph.half);
  const double k2b = static_cast<double>(k) * k * beta2;

  double acc = 0.0;
  Eigen::ArrayXXcd hat(N, N);
  for (int dtau = -lagmax; dtau <= lagmax; ++dtau) {
    Eigen::Array<Cx, 1, Eigen::Dynamic> ahat = Eigen::Array<Cx, 1, Eigen::Dynamic>::Zero(M);
    const int slo = std::max(-ph.half, -ph.half - dtau);
    const int shi = std::min(ph.half, ph.half - dtau);
    for (int s = slo; s <= shi; ++s)
      ahat += ph.rows.row(s + ph.half).conjugate() * ph.rows.row(s + dtau + ph.half);
    Eigen::Map<Eigen::ArrayXcd>(hat.data(), M) = g.dt * ahat.transpose();
    const Eigen::ArrayXXd a = fft.inv(hat).real();
    acc += (a * ((k2b * cov.slab(dtau)).exp() - 1.0)).sum();
  }
  return wick_pair_prefactor(cov, beta2, k) *
         (g.cell_volume() * acc + ph.integral * ph.integral);
}

double exact_difference_moment(const MollifiedCovariance& qa, const MollifiedCovariance& qb,
                               const MollifiedCovariance& qab, double beta2, Profile prof,
                               double lam) {
  const CovarianceWorkspace& ws = qa.workspace();
  const TorusGrid& g = ws.grid();
  const Fft2& fft = ws.fft();
  const bool paired = (close(qab.eps(), qa.eps()) && close(qab.eps_bar(), qb.eps())) ||
                      (close(qab.eps(), qb.eps()) && close(qab.eps_bar(), qa.eps()));
  if (!paired)
    throw std::invalid_argument("exact_difference_moment: mixed table pairs other scales");
  const int N = g.N, M = N * N;
  const ProfileHats ph = profile_hats(g, fft, prof, lam, false);
  const int ext = std::max({qa.lag_extent(), qb.lag_extent(), qab.lag_extent()});
  const int lagmax = std::min(ext, 2 * ph.half);

  double acc = 0.0;
  Eigen::ArrayXXcd hat(N, N);
  for (int dtau = -lagmax; dtau <= lagmax; ++dtau) {
    Eigen::Array<Cx, 1, Eigen::Dynamic> ahat = Eigen::Array<Cx, 1, Eigen::Dynamic>::Zero(M);
    const int slo = std::max(-ph.half, -ph.half - dtau);
    const int shi = std::min(ph.half, ph.half - dtau);
    for (int s = slo; s <= shi; ++s)
      ahat += ph.rows.row(s + ph.half).conjugate() * ph.rows.row(s + dtau + ph.half);
    Eigen::Map<Eigen::ArrayXcd>(hat.data(), M) = g.dt * ahat.transpose();
    const Eigen::ArrayXXd a = fft.inv(hat).real();
    const Eigen::ArrayXXd diff = pair_slab_centered(qa, beta2, 1, dtau) +
                                 pair_slab_centered(qb, beta2, 1, dtau) -
                                 2.0 * pair_slab_centered(qab, beta2, 1, dtau);
    acc += (a * diff).sum();
  }
  return g.cell_volume() * acc;  // tails cancel, no DC term
}

double counterterm(const MollifiedCovariance& cov, double beta2, int k) {
  const CovarianceWorkspace& ws = cov.workspace();
  const TorusGrid& g = ws.grid();
  const int S = ws.kernel_slabs(), ext = cov.lag_extent();
  const double a = -static_cast<double>(k) * k;
  double acc = 0.0;
  for (int s = 1; s <= S; ++s) {
    const Eigen::ArrayXXd ks = ws.k_slab(s);
    acc += s <= ext ? (ks * jay_pow_slab(cov, beta2, s, a)).sum() : ks.sum();
  }
  return wick_pair_prefactor(cov, beta2, k) * g.cell_volume() * acc;
}

RealField kernel_smeared_pair(const MollifiedCovariance& cov, double beta2, int k,
                              std::int64_t y0, std::int64_t y1) {
  const CovarianceWorkspace& ws = cov.workspace();
  if (ws.khat().size() == 0)
    throw std::logic_error("kernel_smeared_pair: workspace built without khat");
  if (y1 < y0) throw std::invalid_argument("kernel_smeared_pair: empty window");
  const TorusGrid& g = ws.grid();
  const Fft2& fft = ws.fft();
  const int N = g.N, M = N * N, S = ws.kernel_slabs(), ext = cov.lag_extent();
  const double pref = wick_pair_prefactor(cov, beta2, k);
  const double a = -static_cast<double>(k) * k;

  // pair-function transforms on slabs y0+1 .. y1+S; beyond the extent the
  // pair function is the constant tail, a single surviving mode
  const std::int64_t j0 = y0 + 1, j1 = y1 + S;
  Eigen::ArrayXXd jhat(static_cast<int>(j1 - j0 + 1), M);
  for (std::int64_t t = j0; t <= j1; ++t) {
    const int r = static_cast<int>(t - j0);
    if (std::llabs(t) <= ext) {
      const Eigen::ArrayXXcd hat =
          fft.fwd_real(pref * jay_pow_slab(cov, beta2, static_cast<int>(std::llabs(t)), a));
      const Eigen::ArrayXcd flat = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M);
      jhat.row(r) = flat.real().transpose();
    } else {
      jhat.row(r).setZero();
      jhat(r, 0) = pref * g.L * g.L;
    }
  }

  Eigen::ArrayXXd kf(S + 1, M);
  for (int m = 0; m < M; ++m) kf.col(m) = ws.khat().col(ws.reduced_index(m));

  RealField out{y0, {}};
  out.slabs.reserve(static_cast<std::size_t>(y1 - y0 + 1));
  Eigen::ArrayXXcd hat(N, N);
  for (std::int64_t y = y0; y <= y1; ++y) {
    Eigen::Array<double, 1, Eigen::Dynamic> acc =
        Eigen::Array<double, 1, Eigen::Dynamic>::Zero(M);
    for (int s = 1; s <= S; ++s) acc += kf.row(s) * jhat.row(static_cast<int>(y + s - j0));
    Eigen::Map<Eigen::ArrayXcd>(hat.data(), M) = (g.dt * acc.transpose()).cast<Cx>();
    out.slabs.push_back(fft.inv(hat).real());
  }
  return out;
}

SecondOrderField second_order_process(const WickField& a, const WickField& b,
                                      const MollifiedCovariance& cov, std::int64_t base_slab,
                                      int bi, int bj, bool centered) {
  if (a.values.t0 != b.values.t0 || a.values.slabs.size() != b.values.slabs.size())
    throw std::invalid_argument("second_order_process: factor windows differ");
  if (!close(a.eps, b.eps) || !close(a.eps, cov.eps()) || a.norm != b.norm)
    throw std::invalid_argument("second_order_process: factors and table disagree");
  if (centered && a.norm != Normalization::Wick)
    throw std::logic_error("second_order_process: centering assumes wick normalization");
  const CovarianceWorkspace& ws = cov.workspace();
  const TorusGrid& g = ws.grid();

  const SpectralConvolver heat = SpectralConvolver::heat(ws);
  const SpectralField kb = heat.apply(to_spectral(g, b.values));
  const ComplexField smeared = to_complex(g, kb);
  const std::int64_t w0 = smeared.t0;
  const std::int64_t w1 = w0 + static_cast<std::int64_t>(smeared.slabs.size()) - 1;
  if (base_slab < w0 || base_slab > w1)
    throw std::invalid_argument("second_order_process: base outside the smeared window");
  const Cx bz = smeared.slabs[static_cast<std::size_t>(base_slab - w0)](bi, bj);

  SecondOrderField out;
  out.k = a.k;
  out.l = b.k;
  out.conjugated = b.k < 0;
  out.base_slab = base_slab;
  out.base_i = bi;
  out.base_j = bj;
  out.centered = centered;
  out.values.t0 = w0;
  out.values.slabs.reserve(smeared.slabs.size());
  const std::size_t off = static_cast<std::size_t>(w0 - a.values.t0);
  for (std::size_t r = 0; r < smeared.slabs.size(); ++r)
    out.values.slabs.push_back(a.values.slabs[r + off] * (smeared.slabs[r] - bz));

  const bool partner = b.k == -a.k;
  if (centered && partner) {
    const RealField hf = kernel_smeared_pair(cov, a.beta2, std::abs(a.k),
                                             std::min<std::int64_t>(w0 - base_slab, 0),
                                             std::max<std::int64_t>(w1 - base_slab, 0));
    const double h0 = hf.slabs[static_cast<std::size_t>(-hf.t0)](0, 0);
    out.counterterm = h0;
    // F(y) = H(0) - H(y), y = zbar - z with the spatial base rolled in
    for (std::size_t r = 0; r < out.values.slabs.size(); ++r) {
      const Eigen::ArrayXXd& hy =
          hf.slabs[static_cast<std::size_t>(static_cast<std::int64_t>(r) + w0 - base_slab -
                                            hf.t0)];
      Eigen::ArrayXXd f(g.N, g.N);
      for (int j = 0; j < g.N; ++j)
        for (int i = 0; i < g.N; ++i)
          f(i, j) = h0 - hy(g.wrap_index(i - bi), g.wrap_index(j - bj));
      out.values.slabs[r] -= f.cast<Cx>();
    }
  }
  return out;
}

SecondOrderField second_order_trig(const WickField& pk, const WickField& pl,
                                   const MollifiedCovariance& cov, bool a_sine, bool b_sine,
                                   std::int64_t base_slab, int bi, int bj) {
  if (pk.k <= 0 || pl.k <= 0)
    throw std::invalid_argument("second_order_trig: parts come from positive modes");
  if (pk.values.t0 != pl.values.t0 || pk.values.slabs.size() != pl.values.slabs.size())
    throw std::invalid_argument("second_order_trig: factor windows differ");
  if (!close(pk.eps, pl.eps) || !close(pk.eps, cov.eps()) || pk.norm != pl.norm)
    throw std::invalid_argument("second_order_trig: factors and table disagree");
  const CovarianceWorkspace& ws = cov.workspace();
  const TorusGrid& g = ws.grid();

  RealField bpart{pl.values.t0, {}};
  bpart.slabs.reserve(pl.values.slabs.size());
  for (const auto& s : pl.values.slabs) {
    if (b_sine)
      bpart.slabs.push_back(s.imag());
    else
      bpart.slabs.push_back(s.real());
  }
  const SpectralConvolver heat = SpectralConvolver::heat(ws);
  const RealField smeared = to_real(g, heat.apply(to_spectral(g, bpart)));
  const std::int64_t w0 = smeared.t0;
  const std::int64_t w1 = w0 + static_cast<std::int64_t>(smeared.slabs.size()) - 1;
  if (base_slab < w0 || base_slab > w1)
    throw std::invalid_argument("second_order_trig: base outside the smeared window");
  const double bz = smeared.slabs[static_cast<std::size_t>(base_slab - w0)](bi, bj);

  SecondOrderField out;
  out.k = pk.k;
  out.l = pl.k;
  out.conjugated = false;
  out.base_slab = base_slab;
  out.base_i = bi;
  out.base_j = bj;
  out.centered = false;
  const bool diagonal = (a_sine == b_sine) && (pk.k == pl.k) &&
                        pk.norm == Normalization::Wick;
  out.counterterm = diagonal ? 0.5 * counterterm(cov, pk.beta2, pk.k) : 0.0;
  out.values.t0 = w0;
  out.values.slabs.reserve(smeared.slabs.size());
  const std::size_t off = static_cast<std::size_t>(w0 - pk.values.t0);
  for (std::size_t r = 0; r < smeared.slabs.size(); ++r) {
    Eigen::ArrayXXd apart(g.N, g.N);
    if (a_sine)
      apart = pk.values.slabs[r + off].imag();
    else
      apart = pk.values.slabs[r + off].real();
    out.values.slabs.push_back(
        (apart * (smeared.slabs[r] - bz) - out.counterterm).cast<Cx>());
  }
  return out;
}

std::vector<MomentEstimate> moment_estimate(const CovarianceWorkspace& ws,
                                            const CovarianceWorkspace::Mollifier& mo,
                                            double beta2, int k, const MomentPlan& plan) {
  if (k == 0) throw std::invalid_argument("moment_estimate: k = 0 has no oscillation");
  const TorusGrid& g = ws.grid();
  const Fft2& fft = ws.fft();
  check_plan(g, plan);
  const int N = g.N, M = N * N;
  const double q0 = ws.mollified_q0(mo, mo);
  const double c = norm_constant(plan.norm, beta2, q0, mo.eps, plan.chat);
  const double kbeta = k * std::sqrt(beta2);

  std::vector<ProfileHats> phs;
  int tmax = 0;
  for (double lam : plan.lambdas) {
    phs.push_back(profile_hats(g, fft, plan.prof, lam, false));
    tmax = std::max(tmax, phs.back().half);
  }
  const SpectralConvolver conv = SpectralConvolver::heat_mollified(ws, mo);
  const int tout = 2 * tmax + 1;
  const int T = conv.tap_count() + tout - 1;

  const std::size_t nl = plan.lambdas.size(), np = plan.ps.size();
  std::vector<std::vector<double>> w(nl * np);
  Eigen::ArrayXXcd psihat(tout, M);
  for (int i = 0; i < plan.n; ++i) {
    const NoiseRealization xi =
        sample_noise(g, plan.seed, T, 0, static_cast<std::uint64_t>(i));
    const SpectralField phis = conv.apply(to_spectral(g, xi.xi));
    const RealField phir = to_real(g, phis);
    for (int r = 0; r < tout; ++r) {
      const Eigen::ArrayXXcd hat = fft.fwd(wick_slab(phir.slabs[static_cast<std::size_t>(r)],
                                                     kbeta, c));
      psihat.row(r) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
    }
    for (std::size_t li = 0; li < nl; ++li) {
      const Eigen::ArrayXXcd v = multicenter_pairing(g, fft, phs[li], psihat, tmax);
      for (std::size_t pi = 0; pi < np; ++pi)
        w[li * np + pi].push_back(moment_of_abs(v, plan.ps[pi]));
    }
  }

  std::vector<MomentEstimate> out;
  for (std::size_t li = 0; li < nl; ++li)
    for (std::size_t pi = 0; pi < np; ++pi) {
      const MeanSe ms = jackknife(w[li * np + pi]);
      MomentEstimate e;
      e.process = "psi";
      e.k = k;
      e.l = 0;
      e.p = plan.ps[pi];
      e.lambda = plan.lambdas[li];
      e.eps = mo.eps;
      e.beta2 = beta2;
      e.mean = ms.mean;
      e.se = ms.se;
      e.n = plan.n;
      e.seed = plan.seed;
      e.flag = window_flag(g, plan.lambdas[li], mo.eps);
      out.push_back(std::move(e));
    }
  return out;
}

std::vector<MomentEstimate> second_order_moments(const CovarianceWorkspace& ws,
                                                 const CovarianceWorkspace::Mollifier& mo,
                                                 double beta2, const MomentPlan& plan) {
  if (plan.norm != Normalization::Wick)
    throw std::logic_error("second_order_moments: centering assumes wick normalization");
  const TorusGrid& g = ws.grid();
  const Fft2& fft = ws.fft();
  check_plan(g, plan);
  const int N = g.N, M = N * N, S = ws.kernel_slabs();
  const MollifiedCovariance cov(ws, mo, mo);
  const double c = std::exp(beta2 * cov.q0() / 2.0);
  const double kbeta = std::sqrt(beta2);

  std::vector<ProfileHats> phs;
  int tmax = 0;
  for (double lam : plan.lambdas) {
    phs.push_back(profile_hats(g, fft, plan.prof, lam, true));
    tmax = std::max(tmax, phs.back().half);
  }

  // deterministic part: cf = <phi^lam, F>, F(y) = H(0) - H(y)
  const RealField hf = kernel_smeared_pair(cov, beta2, 1, -tmax, tmax);
  const double h0 = hf.slabs[static_cast<std::size_t>(tmax)](0, 0);
  std::vector<double> cf(phs.size(), 0.0);
  for (std::size_t li = 0; li < phs.size(); ++li) {
    double acc = 0.0;
    for (int tau = -phs[li].half; tau <= phs[li].half; ++tau)
      acc += (phs[li].slabs[static_cast<std::size_t>(tau + phs[li].half)] *
              (h0 - hf.slabs[static_cast<std::size_t>(tau + tmax)]))
                 .sum();
    cf[li] = acc * g.cell_volume();
  }

  const SpectralConvolver conv = SpectralConvolver::heat_mollified(ws, mo);
  const SpectralConvolver heat = SpectralConvolver::heat(ws);
  const int tpsi = 2 * tmax + S + 1;
  const int T = conv.tap_count() + tpsi - 1;

  const std::size_t nl = plan.lambdas.size(), np = plan.ps.size();
  std::vector<std::vector<double>> w(nl * np);
  std::vector<Eigen::ArrayXXcd> psi(static_cast<std::size_t>(tpsi));
  Eigen::ArrayXXcd phat(2 * tmax + 1, M);
  for (int i = 0; i < plan.n; ++i) {
    const NoiseRealization xi =
        sample_noise(g, plan.seed, T, 0, static_cast<std::uint64_t>(i));
    const SpectralField phis = conv.apply(to_spectral(g, xi.xi));
    const RealField phir = to_real(g, phis);
    for (int r = 0; r < tpsi; ++r)
      psi[static_cast<std::size_t>(r)] =
          wick_slab(phir.slabs[static_cast<std::size_t>(r)], kbeta, c);
    SpectralField psihat{phis.t0, slab_hats(fft, psi, M)};
    const SpectralField kc = heat.apply(conj_modes(g, psihat));
    const ComplexField smeared = to_complex(g, kc);  // zbar window, 2 tmax + 1 slabs
    const Eigen::ArrayXXcd& wz = smeared.slabs[static_cast<std::size_t>(tmax)];
    for (int r = 0; r <= 2 * tmax; ++r) {
      const Eigen::ArrayXXcd hat =
          fft.fwd(psi[static_cast<std::size_t>(r + S)] * smeared.slabs[static_cast<std::size_t>(r)]);
      phat.row(r) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
    }
    for (std::size_t li = 0; li < nl; ++li) {
      const Eigen::ArrayXXcd u = multicenter_pairing(g, fft, phs[li], phat, tmax);
      const Eigen::ArrayXXcd v =
          multicenter_pairing(g, fft, phs[li], psihat.rows, S + tmax);
      const Eigen::ArrayXXcd pm = u - wz * v - cf[li];
      for (std::size_t pi = 0; pi < np; ++pi)
        w[li * np + pi].push_back(moment_of_abs(pm, plan.ps[pi]));
    }
  }

  std::vector<MomentEstimate> out;
  for (std::size_t li = 0; li < nl; ++li)
    for (std::size_t pi = 0; pi < np; ++pi) {
      const MeanSe ms = jackknife(w[li * np + pi]);
      MomentEstimate e;
      e.process = "psi_pm";
      e.k = 1;
      e.l = -1;
      e.p = plan.ps[pi];
      e.lambda = plan.lambdas[li];
      e.eps = mo.eps;
      e.beta2 = beta2;
      e.mean = ms.mean;
      e.se = ms.se;
      e.n = plan.n;
      e.seed = plan.seed;
      e.flag = window_flag(g, plan.lambdas[li], mo.eps);
      out.push_back(std::move(e));
    }
  return out;
}

double psi_pm_second_moment_bruteforce(const MollifiedCovariance& cov, double beta2,
                                       Profile prof, double lam) {
  const CovarianceWorkspace& ws = cov.workspace();
  const TorusGrid& g = ws.grid();
  const int N = g.N, S = ws.kernel_slabs(), ext = cov.lag_extent();
  const double vol = g.cell_volume();
  const int half = std::max(0, static_cast<int>(std::ceil(lam * lam / g.dt)) - 1);
  const int maxlag = 2 * half + S;

  // e^{+-beta2 Q} per lag, indexed by wrapped spatial offsets
  std::vector<Eigen::ArrayXXd> ep, em;
  for (int l = 0; l <= maxlag; ++l) {
    if (l <= ext) {
      ep.push_back((beta2 * cov.slab(l)).exp());
      em.push_back((-beta2 * cov.slab(l)).exp());
    } else {
      ep.push_back(Eigen::ArrayXXd::Ones(N, N));
      em.push_back(Eigen::ArrayXXd::Ones(N, N));
    }
  }

  struct Node {
    int t, i, j;
    double v;
  };
  std::vector<Node> zs;  // profile support, base at the origin
  for (int tau = -half; tau <= half; ++tau)
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < N; ++i) {
        const double v = rescaled_profile(prof, {0.0, 0.0, 0.0}, lam,
                                          {tau * g.dt, g.offset(i), g.offset(j)}, g.L);
        if (v != 0.0) zs.push_back({tau, i, j, v});
      }
  std::vector<Node> vs;  // kernel support offsets
  for (int s = 1; s <= S; ++s) {
    const Eigen::ArrayXXd ks = ws.k_slab(s);
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < N; ++i)
        if (ks(i, j) != 0.0) vs.push_back({s, i, j, ks(i, j)});
  }
  const int nz = static_cast<int>(zs.size()), nv = static_cast<int>(vs.size());

  const auto eplus = [&](int t, int i, int j) -> double {
    return ep[static_cast<std::size_t>(std::abs(t))](g.wrap_index(i), g.wrap_index(j));
  };
  const auto eminus = [&](int t, int i, int j) -> double {
    return em[static_cast<std::size_t>(std::abs(t))](g.wrap_index(i), g.wrap_index(j));
  };

  // H(q) = vol sum_v K(v) e^{beta2 Q(q + v)} and cf = <phi, H(0) - H(.)>
  const auto hval = [&](int t, int i, int j) -> double {
    double acc = 0.0;
    for (const Node& v : vs) acc += v.v * eplus(t + v.t, i + v.i, j + v.j);
    return vol * acc;
  };
  const double h0 = hval(0, 0, 0);
  double cf = 0.0;
  for (const Node& z : zs) cf += z.v * (h0 - hval(z.t, z.i, z.j));
  cf *= vol;

  // neutral four-point function over (zb1, w1, zb2, w2), charges + - - +;
  // w = zb - v reads the field where the kernel smears it, w = -v the base
  double quad = 0.0;
  for (int a = 0; a < nz; ++a) {
    const Node& z1 = zs[static_cast<std::size_t>(a)];
    for (int b = 0; b < nz; ++b) {
      const Node& z2 = zs[static_cast<std::size_t>(b)];
      const double pzz = eplus(z1.t - z2.t, z1.i - z2.i, z1.j - z2.j);
      double inner = 0.0;
      for (int p = 0; p < nv; ++p) {
        const Node& v1 = vs[static_cast<std::size_t>(p)];
        // w1 at zb1 - v1 or at -v1, with the sign of the kernel difference
        for (int wc = 0; wc < 2; ++wc) {
          const int w1t = (wc == 0 ? z1.t : 0) - v1.t;
          const int w1i = (wc == 0 ? z1.i : 0) - v1.i;
          const int w1j = (wc == 0 ? z1.j : 0) - v1.j;
          const double s1 = wc == 0 ? v1.v : -v1.v;
          const double f1 = eplus(z1.t - w1t, z1.i - w1i, z1.j - w1j) *
                            eminus(w1t - z2.t, w1i - z2.i, w1j - z2.j);
          for (int q = 0; q < nv; ++q) {
            const Node& v2 = vs[static_cast<std::size_t>(q)];
            for (int uc = 0; uc < 2; ++uc) {
              const int w2t = (uc == 0 ? z2.t : 0) - v2.t;
              const int w2i = (uc == 0 ? z2.i : 0) - v2.i;
              const int w2j = (uc == 0 ? z2.j : 0) - v2.j;
              const double s2 = uc == 0 ? v2.v : -v2.v;
              inner += s1 * s2 * f1 *
                       eminus(z1.t - w2t, z1.i - w2i, z1.j - w2j) *
                       eplus(w1t - w2t, w1i - w2i, w1j - w2j) *
                       eplus(z2.t - w2t, z2.i - w2i, z2.j - w2j);
            }
          }
        }
      }
      quad += z1.v * z2.v * pzz * inner;
    }
  }
  quad *= vol * vol * vol * vol;
  return quad - cf * cf;
}

std::vector<CauchyRow> cauchy_in_eps(const CovarianceWorkspace& ws,
                                     const std::vector<double>& eps_ladder, double beta2,
                                     Profile prof, double lam, int n, std::uint64_t seed) {
  if (eps_ladder.size() < 2)
    throw std::invalid_argument("cauchy_in_eps: need at least two scales");
  if (n < 100) throw std::invalid_argument("cauchy_in_eps: need n >= 100");
  const TorusGrid& g = ws.grid();
  const Fft2& fft = ws.fft();
  const int N = g.N, M = N * N;
  std::vector<double> ladder = eps_ladder;
  std::sort(ladder.begin(), ladder.end(), std::greater<>());
  const std::size_t ne = ladder.size();

  std::vector<CovarianceWorkspace::Mollifier> mos;
  std::vector<SpectralConvolver> convs;
  std::vector<double> cnorm;
  int smax = 0, smin = 0;
  for (double e : ladder) {
    mos.push_back(ws.mollifier(e));
    convs.emplace_back(SpectralConvolver::heat_mollified(ws, mos.back()));
    smax = std::max(smax, convs.back().s_max());
    smin = std::min(smin, convs.back().s_min());
  }

  const ProfileHats ph = profile_hats(g, fft, prof, lam, false);
  const int tout = 2 * ph.half + 1;
  const std::int64_t tlo = smax;      // first slab every output window covers
  const int T = smax + tout - smin;   // last one too, for the widest tap span

  std::vector<CauchyRow> rows(ne - 1);
  for (std::size_t e = 0; e + 1 < ne; ++e) {
    const MollifiedCovariance qa(ws, mos[e], mos[e]);
    const MollifiedCovariance qb(ws, mos[e + 1], mos[e + 1]);
    const MollifiedCovariance qab(ws, mos[e], mos[e + 1]);
    rows[e].eps_a = ladder[e];
    rows[e].eps_b = ladder[e + 1];
    rows[e].lambda = lam;
    rows[e].n = n;
    rows[e].exact = exact_difference_moment(qa, qb, qab, beta2, prof, lam);
    if (e == 0) cnorm.push_back(std::exp(beta2 * qa.q0() / 2.0));
    cnorm.push_back(std::exp(beta2 * qb.q0() / 2.0));
  }

  const double kbeta = std::sqrt(beta2);
  std::vector<std::vector<double>> w(ne - 1);
  std::vector<Eigen::ArrayXXcd> psihat(ne, Eigen::ArrayXXcd(tout, M));
  for (int i = 0; i < n; ++i) {
    const NoiseRealization xi = sample_noise(g, seed, T, 0, static_cast<std::uint64_t>(i));
    const SpectralField spec = to_spectral(g, xi.xi);
    for (std::size_t e = 0; e < ne; ++e) {
      const SpectralField phis = convs[e].apply(spec);
      const RealField phir = to_real(g, phis);
      const int off = static_cast<int>(tlo - phis.t0);
      for (int r = 0; r < tout; ++r) {
        const Eigen::ArrayXXcd hat =
            fft.fwd(wick_slab(phir.slabs[static_cast<std::size_t>(off + r)], kbeta, cnorm[e]));
        psihat[e].row(r) = Eigen::Map<const Eigen::ArrayXcd>(hat.data(), M).transpose();
      }
    }
    for (std::size_t e = 0; e + 1 < ne; ++e) {
      const Eigen::ArrayXXcd dhat = psihat[e] - psihat[e + 1];
      const Eigen::ArrayXXcd v = multicenter_pairing(g, fft, ph, dhat, ph.half);
      w[e].push_back(v.abs2().mean());
    }
  }
  for (std::size_t e = 0; e + 1 < ne; ++e) {
    const MeanSe ms = jackknife(w[e]);
    rows[e].mc = ms.mean;
    rows[e].se = ms.se;
  }
  return rows;
}

ExponentFit fit_exponent(const std::vector<double>& lambdas, const std::vector<double>& means) {
  if (lambdas.size() != means.size())
    throw std::invalid_argument("fit_exponent: ladder lengths differ");
  std::vector<MomentEstimate> ladder;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    MomentEstimate e;
    e.p = 2;
    e.lambda = lambdas[i];
    e.mean = means[i];
    ladder.push_back(e);
  }
  return fit_exponent(ladder, 2);
}

ExponentFit fit_exponent(const std::vector<MomentEstimate>& ladder, int p) {
  std::vector<double> x, y, wt;
  for (const MomentEstimate& e : ladder) {
    if (e.p != p || !e.flag.empty()) continue;
    if (!(e.mean > 0)) throw std::domain_error("fit_exponent: nonpositive mean in ladder");
    x.push_back(std::log(e.lambda));
    y.push_back(std::log(e.mean));
    wt.push_back(e.se > 0 ? (e.mean / e.se) * (e.mean / e.se) : 1.0);
  }
  const int m = static_cast<int>(x.size());
  if (m < 3) throw std::invalid_argument("fit_exponent: need at least 3 usable rungs");
  double sw = 0, sx = 0, sy = 0;
  for (int i = 0; i < m; ++i) {
    sw += wt[i];
    sx += wt[i] * x[i];
    sy += wt[i] * y[i];
  }
  const double xb = sx / sw, yb = sy / sw;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < m; ++i) {
    sxx += wt[i] * (x[i] - xb) * (x[i] - xb);
    sxy += wt[i] * (x[i] - xb) * (y[i] - yb);
  }
  ExponentFit fit;
  fit.used = m;
  fit.slope = sxy / sxx;
  fit.intercept = yb - fit.slope * xb;
  double chi2 = 0;
  for (int i = 0; i < m; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    chi2 += wt[i] * r * r;
  }
  fit.se = m > 2 ? std::sqrt(std::max(chi2, 0.0) / (m - 2) / sxx) : 0.0;
  return fit;
}

}  // namespace wick
