#ifndef WICK_KERNELS_HPP
#define WICK_KERNELS_HPP

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "wick/fft2.hpp"
#include "wick/geom.hpp"

namespace wick {

// Truncated heat kernel: equals the heat kernel of d_t - (1/2)Lap inside the
// parabolic ball of radius `inner`, smoothly cut to 0 beyond `outer`, and
// vanishes for t <= 0. No moment/annihilation conditions are imposed; all
// downstream constants absorb that choice.
struct KernelSpec {
  double inner = 0.25;
  double outer = 0.45;
  void require_valid(double L) const {
    if (!(0 < inner && inner < outer)) throw std::invalid_argument("KernelSpec: need 0 < inner < outer");
    if (!(outer < L / 2)) throw std::invalid_argument("KernelSpec: outer must stay below L/2");
  }
  double t_support() const { return outer * outer; }  // K(t,.) = 0 for t >= outer^2
};

// C^inf step: 0 for u <= 0, 1 for u >= 1.
double smooth_step(double u);
// 1 on [0, inner], 0 on [outer, inf)
double kernel_cutoff(const KernelSpec& ks, double r);
// free-space kernel value; grid code passes min-image offsets
double kernel_value(const KernelSpec& ks, const PointD& z);

// Spatial-spectral tabulations of K and of Q = K * (time-reflection of K) on a
// grid. Layout: rows = time slabs, cols = flattened spatial modes, so a
// column is the contiguous time series of one mode (the autocorrelation and
// the mollifier convolutions all run along columns).
class CovarianceWorkspace {
 public:
  CovarianceWorkspace(const TorusGrid& g, const KernelSpec& ks);

  // Tabulates hat K on slabs [0, S] and hat Q on lags [0, W); W defaults to the
  // full support S+1. Q(-t, x) = Q(t, x) = Q(t, -x), so lag >= 0 suffices.
  // The per-mode time autocorrelation runs through a padded FFT, so cost is
  // O(U S log S) rather than O(U W S).
  void build(int max_lag = -1, bool keep_khat = true);
  bool built() const { return qhat_.size() > 0; }

  const TorusGrid& grid() const { return g_; }
  const KernelSpec& spec() const { return ks_; }
  const Fft2& fft() const { return fft_; }
  int kernel_slabs() const { return S_; }      // K lives on slabs 1..S
  int q_lags() const { return static_cast<int>(qhat_.rows()); }
  int modes() const { return g_.N * g_.N; }

  // hat K is even per mode axis, so only modes m1, m2 <= N/2 are stored.
  int unique_modes() const { return (g_.N / 2 + 1) * (g_.N / 2 + 1); }
  int reduced_index(int m) const {
    const int N = g_.N;
    int m1 = m % N, m2 = m / N;
    if (m1 > N / 2) m1 = N - m1;
    if (m2 > N / 2) m2 = N - m2;
    return m1 + (N / 2 + 1) * m2;
  }
  const Eigen::ArrayXXd& khat() const { return khat_; }   // (S+1) x U, reduced modes
  const Eigen::ArrayXXd& qhat() const { return qhat_; }   // W x M
  Eigen::VectorXd qhat_row(int lag) const;                // 0 beyond stored lags
  Eigen::ArrayXXd q_slab(int lag) const;                  // real space N x N
  double q_point(const PointD& z) const;                  // nearest-node

  Eigen::ArrayXXd k_slab(int s) const;   // real-space K(s dt, .), exact formula
  double k_mass() const;                 // int K = dt sum_s hat K(s, mode 0)

  // Discrete mollifier at scale eps (profile scaled parabolically, unit
  // discrete mass). Returns spatial-DFT rows on slabs [-S_rho, S_rho].
  // Separable builders fill the rank-1 factors instead of the dense table;
  // hat rho(s, m) = time_taps(s + half) * mode_gain(m) then.
  struct Mollifier {
    int half;                   // S_rho
    double eps;
    Eigen::ArrayXXd hat;        // (2*half+1) x M, row s+half; empty if separable
    Eigen::VectorXd time_taps;  // f(s dt), unit discrete mass
    Eigen::VectorXd mode_gain;  // spatial transform per mode, gain(0) = 1
    bool separable() const { return time_taps.size() > 0; }
  };
  Mollifier mollifier(double eps, Profile prof = Profile::Bump) const;

  // Tensor-profile mollifier with the spatial transform done by quadrature
  // instead of grid sampling: exact in space for any eps, slab-sampled in
  // time. Used where eps approaches the spatial mesh and point sampling
  // would distort the effective scale. Stored in separable form.
  Mollifier mollifier_spectral(double eps) const;

  // resolvability on this grid: eps >= 2h. Time is not constrained: a scale
  // with eps^2 below dt degenerates to a single-slab time profile, which is
  // still a unit-mass discrete mollifier and keeps every table downstream
  // self-consistent (only the continuum small-eps law needs finer dt).
  void require_resolved(double eps) const;

  // Q_{a,b}(0) = dt^2 sum_m sum_{t1,t2} rho_a(t1,m) rho_b(t2,m) hat Q(t1-t2,m)
  // by per-mode FFT, without materializing the lag table of the pair. Matches
  // MollifiedCovariance::q0 to roundoff at a fraction of its cost; the fits
  // over eps ladders run through this.
  //
  // hat Q is a right-endpoint rule in time and hat K jumps to 1 at t = 0+
  // (delta limit of the heat kernel), so each mode misses a boundary-layer
  // integral below the first slab. `endpoint` restores it with the exact gap
  // for the heat symbol: (dt/2) hat K(l) on slow modes, 1/|k|^2 once the
  // layer fits inside one step. Use it when chasing the continuum small-eps
  // law. Leave it off when the target is the covariance of the discretely
  // convolved field itself, which is exactly the uncorrected table.
  double mollified_q0(const Mollifier& a, const Mollifier& b, bool endpoint = false) const;

 private:
  TorusGrid g_;
  KernelSpec ks_;
  Fft2 fft_;
  int S_;
  Eigen::ArrayXXd khat_, qhat_;
  Eigen::ArrayXXd khat_head_;  // first q_lags() rows of khat_, kept for the endpoint term

  Eigen::ArrayXXd slab_to_row_fft(const Eigen::ArrayXXd& slab) const;
};

// Q_eps,epsbar = Q * (rho_eps * time-reflected rho_epsbar); equal scales give
// the plain mollified covariance Q_eps. Even in t and in each x coordinate.
class MollifiedCovariance {
 public:
  MollifiedCovariance(const CovarianceWorkspace& ws, double eps,
                      double eps_bar = -1.0, Profile prof = Profile::Bump);
  MollifiedCovariance(const CovarianceWorkspace& ws, const CovarianceWorkspace::Mollifier& a,
                      const CovarianceWorkspace::Mollifier& b);

  const CovarianceWorkspace& workspace() const { return *ws_; }
  double eps() const { return eps_; }
  double eps_bar() const { return eps_bar_; }
  int lag_extent() const { return extent_; }  // Q_eps(l dt, .) = 0 for |l| > extent

  Eigen::VectorXd hat_row(int lag) const;     // M entries, computed on demand
  const Eigen::ArrayXXd& slab(int lag) const; // memoized real slab, |lag| ok
  double q0() const { return q0_; }
  double value(const PointD& z) const;        // nearest-node lookup

  // stream real slabs for lag in [l0, l1] without memoizing
  void for_each_slab(int l0, int l1,
                     const std::function<void(int, const Eigen::ArrayXXd&)>& fn) const;
  void clear_cache() const { cache_.clear(); }

  // materialize hat Q_eps for every lag at once (per-mode FIR along columns);
  // worth it when many slabs will be consumed, costly in memory on big grids
  void build_dense() const;

 private:
  const CovarianceWorkspace* ws_;
  double eps_, eps_bar_, q0_ = 0.0;
  bool truncated_ = false;  // workspace holds fewer lags than the full support
  bool separable_ = false;  // both mollifiers rank-1: rhobar = rbt (x) gain
  int extent_ = 0, rb_half_ = 0;
  Eigen::ArrayXXd rhobar_hat_;  // (2*rb_half+1) x M, dense route only
  Eigen::VectorXd rbt_;         // time factor of rhobar, separable route
  Eigen::VectorXd gain_;        // mode factor of rhobar, separable route
  mutable Eigen::ArrayXXd dense_;  // (extent+1) x M once built
  mutable std::map<int, Eigen::ArrayXXd> cache_;

  Eigen::VectorXd hat_row_nocache(int lag) const;
};

// J_eps(z)^a = exp(-a beta2 Q_eps(z)); a = -1 gives the inverse factor that
// appears in two-point functions, a = -k^2 the k-th mode version.
Eigen::ArrayXXd jay_pow_slab(const MollifiedCovariance& mc, double beta2, int lag, double a);
double jay_pow(const MollifiedCovariance& mc, double beta2, const PointD& z, double a);

// Q_eps(0) = -(1/2pi) log eps + Chat + O(eps^2). Fitted over an eps ladder:
// LSQ of Q0 + log(eps)/2pi against [1, eps^2] gives Chat and the quadratic
// remainder; a straight-line fit against log eps gives `slope`, and the full
// three-parameter model c0 + c1 log eps + c2 eps^2 gives `slope_lemma`, which
// is free of the eps^2 bend that the straight fit picks up at the large end
// of the ladder.
struct WickConstantFit {
  double chat = 0;            // limiting constant
  double quad = 0;            // coefficient of eps^2
  double slope = 0;           // straight-line d Q0 / d log eps
  double slope_lemma = 0;     // log coefficient of the full model
  double residual_ratio = 0;  // r(2 eps_min) / r(eps_min), r(e) = Q0 + log(e)/2pi - chat
  std::vector<double> eps, q0;
};
WickConstantFit fit_wick_constant(const CovarianceWorkspace& ws, std::vector<double> eps_ladder,
                                  bool spectral_mollifier = false);

// constant-normalization prefactor: Psi = C_rho eps^{-beta2/4pi} e^{i k beta Phi}
inline double c_rho(double beta2, double chat) { return std::exp(beta2 * chat / 2.0); }

}  // namespace wick

#endif
