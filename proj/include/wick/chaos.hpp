#ifndef WICK_CHAOS_HPP
#define WICK_CHAOS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "wick/geom.hpp"
#include "wick/kernels.hpp"
#include "wick/noise.hpp"

namespace wick {

// Psi^k = C e^{i k beta Phi}. Wick normalization takes C = e^{beta2 Q_eps(0)/2}
// with the lag-zero value of the table behind Phi, so E Psi^1 = 1 exactly at
// every eps (the sampled field's variance IS that table entry, to roundoff).
// Constant normalization takes the eps-explicit C_rho eps^{-beta2/4pi}, which
// agrees with the first only in the small-eps limit.
enum class Normalization { Wick, Constant };

struct WickField {
  int k = 1;
  double beta2 = 0.0;
  double eps = 0.0;
  double q0 = 0.0;  // lag-zero covariance behind the normalization
  Normalization norm = Normalization::Wick;
  ComplexField values;  // window of the source field; |values| is constant
};

// pre: cov pairs the mollifier that produced phi with itself (checked through
// eps; a profile mismatch at equal eps is on the caller). Negative k
// conjugates: Psi^{-k} = conj Psi^k. chat feeds Constant normalization only.
WickField wick_exponential(const FreeField& phi, const MollifiedCovariance& cov, double beta2,
                           int k, Normalization norm = Normalization::Wick, double chat = 0.0);

// E[Psi^k(z) conj Psi^k(w)] = prefactor * e^{k^2 beta2 Q_eps(z-w)}; the
// prefactor e^{-beta2 (k^2 - 1) Q_eps(0)} kills every mode but k = 1 as
// eps -> 0, which is the vanishing the higher-mode ladder measures.
double wick_pair_prefactor(const MollifiedCovariance& cov, double beta2, int k);

// E |<phi_c^lam, Psi^k>|^2 as the lag sum  vol sum_D (phi*phi)(D) pair(D),
// profile autocorrelation by slabwise FFT. Exact for the field the sampler
// actually produces, so Monte Carlo pairings must land within sampling error
// of this number; that tie is the main guard on the whole chain.
double exact_second_moment(const MollifiedCovariance& cov, double beta2, int k, Profile prof,
                           double lam);

// E |<phi, Psi_a - Psi_b>|^2 for two scales driven by one noise: the cross
// term runs through the mixed table, E Psi_a conj Psi_b = e^{beta2 Q_ab}, so
// qab must pair qa's mollifier with qb's. k = 1. The three tails cancel, so
// equal scales give exactly zero.
double exact_difference_moment(const MollifiedCovariance& qa, const MollifiedCovariance& qb,
                               const MollifiedCovariance& qab, double beta2, Profile prof,
                               double lam);

// C_eps^{(k)} = vol sum_w K(w) E[Psi^k(w) conj Psi^k(0)], the constant the
// diagonal second-order products subtract. Grows like eps^{2 - beta2/2pi}
// once beta2 > 4pi, like |log eps| at 4pi, and is Cauchy in eps below.
// Real-space sum over the kernel support.
double counterterm(const MollifiedCovariance& cov, double beta2, int k);

// H^{(k)}(y) = vol sum_v K(v) pair(y + v), the kernel smeared against the
// k-th two-point function, on slabs y0..y1. H(0) equals counterterm() through
// an independent route; the centering surface of the second-order process is
// F(y) = H(0) - H(y). Needs the workspace built with khat kept.
RealField kernel_smeared_pair(const MollifiedCovariance& cov, double beta2, int k,
                              std::int64_t y0, std::int64_t y1);

// a(zbar) [ (K * b)(zbar) - (K * b)(z) ] over the window where the smeared
// factor exists, z the base node (base_slab, bi, bj). centered subtracts the
// mean surface F^{(k)}(zbar - z), which is nonzero only when b is the
// conjugate partner of a (E a b vanishes with eps otherwise, and so does the
// subtraction; we keep it literal: centered on a non-partner pair subtracts
// nothing). pre: a and b share windows and normalization.
struct SecondOrderField {
  int k = 1, l = 1;
  bool conjugated = false;  // second factor entered as a conjugate mode (l < 0)
  std::int64_t base_slab = 0;
  int base_i = 0, base_j = 0;
  bool centered = false;
  double counterterm = 0.0;  // constant part of the subtraction, H(0)
  ComplexField values;       // over zbar
};

SecondOrderField second_order_process(const WickField& a, const WickField& b,
                                      const MollifiedCovariance& cov, std::int64_t base_slab,
                                      int bi, int bj, bool centered);

// cosine/sine second-order product: part a of Psi^k against the smeared part
// b of Psi^l, minus C^{(k)}/2 exactly on the diagonal a = b, k = l. Values
// are real; kept in the complex container so the pairing code is shared.
// a_sine/b_sine pick the sine part, else cosine.
SecondOrderField second_order_trig(const WickField& pk, const WickField& pl,
                                   const MollifiedCovariance& cov, bool a_sine, bool b_sine,
                                   std::int64_t base_slab, int bi, int bj);

// One moment estimate of a pairing ladder. se is the jackknife standard
// error over realizations. flag marks rungs outside the trusted window:
// "mollifier-dominated" below lam = 8 eps, "under-resolved" when the profile
// support has fewer than 4 cells or 4 slabs across (still computed; the
// estimate stays exact against its own grid oracle, it just measures the
// instrument rather than the field).
struct MomentEstimate {
  std::string process;
  int k = 1, l = 0, p = 2;
  double lambda = 0.0, eps = 0.0, beta2 = 0.0;
  double mean = 0.0, se = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  std::string flag;
};

struct MomentPlan {
  Profile prof = Profile::Bump;
  std::vector<double> lambdas;  // one estimate per (lambda, p)
  std::vector<int> ps = {2};    // even moments only
  int n = 200;
  std::uint64_t seed = 1;
  Normalization norm = Normalization::Wick;
  double chat = 0.0;
};

// <phi_c^lam, Psi^k> over plan.n fresh realizations, every spatial center of
// the middle slab at once (one inverse FFT per lambda), all lambdas sharing
// each realization. Deterministic in (seed, grid, plan).
std::vector<MomentEstimate> moment_estimate(const CovarianceWorkspace& ws,
                                            const CovarianceWorkspace::Mollifier& mo,
                                            double beta2, int k, const MomentPlan& plan);

// <phi_z^lam, Psi^pm(z, .)>: the centered k = l = 1 second-order process
// paired at its own base point, every spatial base of the middle slab at
// once. Same sharing and determinism as moment_estimate.
std::vector<MomentEstimate> second_order_moments(const CovarianceWorkspace& ws,
                                                 const CovarianceWorkspace::Mollifier& mo,
                                                 double beta2, const MomentPlan& plan);

// E |<phi_z^lam, Psi^pm(z, .)>|^2 by the neutral four-point function: a
// direct O(G^4) sum over the profile and kernel supports, no transforms, no
// shared code with the samplers. Small grids only.
double psi_pm_second_moment_bruteforce(const MollifiedCovariance& cov, double beta2,
                                       Profile prof, double lam);

// E |<phi, Psi_eps - Psi_eps'>|^2 along successive ladder pairs, both fields
// driven by the same noise window each realization; the coupling is the
// point, independent draws never contract. exact goes through the mixed
// table and the Monte Carlo column must sit within sampling error of it.
struct CauchyRow {
  double eps_a = 0.0, eps_b = 0.0, lambda = 0.0;
  double mc = 0.0, se = 0.0, exact = 0.0;
  int n = 0;
};

std::vector<CauchyRow> cauchy_in_eps(const CovarianceWorkspace& ws,
                                     const std::vector<double>& eps_ladder, double beta2,
                                     Profile prof, double lam, int n, std::uint64_t seed);

// weighted log-log slope of mean against lambda over one ladder, weights
// 1/(relative se)^2, flagged rungs skipped; se = 0 rungs weigh 1 (exact
// ladders). Throws below 3 usable rungs.
struct ExponentFit {
  double slope = 0.0, intercept = 0.0, se = 0.0;
  int used = 0;
};

ExponentFit fit_exponent(const std::vector<MomentEstimate>& ladder, int p);
ExponentFit fit_exponent(const std::vector<double>& lambdas, const std::vector<double>& means);

}  // namespace wick

#endif
