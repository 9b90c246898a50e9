#ifndef WICK_MULTIPOLE_HPP
#define WICK_MULTIPOLE_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "wick/geom.hpp"

namespace wick {

class MollifiedCovariance;

// Signed space-time charge. The mode index is carried along for bookkeeping;
// everything in this header treats all charges as sharing one index.
struct Charge {
  PointD z;
  int sign = 1;  // +1 or -1
  int mode = 1;
};

// Oriented pair of charge labels, up -> down. Orientation records which
// factor carried the conjugate; none of the combinatorics below reads it.
struct OrientedPair {
  int up = 0;
  int down = 0;
};

// Charge layout for the pair-expansion machinery: the renorm pairs partition
// the labels into dipoles. The hierarchy and matching routines below also
// accept configurations with renorm left empty (signs alone drive them).
struct ChargeConfiguration {
  std::vector<Charge> charges;
  std::vector<OrientedPair> renorm;

  int pair_count() const { return static_cast<int>(renorm.size()); }
  int plus_label(int e) const;
  int minus_label(int e) const;
  // Balanced signs; renorm pairs disjoint, opposite-signed, covering every
  // label; orientations split as evenly as parity allows; positions distinct.
  void validate() const;
};

// Deterministic layout: pair e owns labels {2e, 2e+1} with the minus charge
// placed near its plus partner at a log-uniform scale, so batches exercise
// tight dipoles and loose clusters alike.
ChargeConfiguration random_charge_configuration(int m, std::uint64_t seed, double spread = 1.0,
                                                double min_sep = 1e-3);

// Adversarial variant for the clustering bounds: all 2m charges sit on one
// monotone equal-gap chain along a single axis, the single-linkage geometry
// that drives the hierarchical ratio towards its sup. Randomness is the gap
// length, the axis, and a balanced sign shuffle, so a batch pins the worst
// case tightly enough for the recorded constants to be reproducible.
ChargeConfiguration random_chain_configuration(int m, std::uint64_t seed, double spread = 1.0);

// Dipoles tight against their mutual separations: sizes at most a quarter of
// the minimum centre distance. This is the scale-separated regime the
// clustering bound is used in, and the ratio statistic concentrates on it,
// which is what makes recorded constants reproducible between batches.
ChargeConfiguration random_multipole_configuration(int m, std::uint64_t seed,
                                                   double spread = 1.0);

// Symmetric positive potential together with a radial-ball sup,
// ball_sup(r) >= sup over the parabolic ball of radius r. These two are the
// only ways any routine here looks at a potential.
struct PotentialFunction {
  std::function<double(const PointD&)> eval;
  std::function<double(double)> ball_sup;
  std::string name;
};

// ||z||^alpha with the exact ball sup r^alpha. alpha >= 0.
PotentialFunction power_law_potential(double alpha);

// exp(-k^2 beta2 Q) from a built covariance table, captured by reference: the
// table must outlive the returned object. ball_sup is sampled over
// directions, not exact; positions must sit well inside the fundamental cell
// for the torus reduction behind the table lookup to be harmless.
PotentialFunction covariance_potential(const MollifiedCovariance& cov, double beta2, int k = 1);

// sup of eval(x)/eval(xbar) over sampled pairs with ||x|| <= c ||xbar||.
double doubling_constant(const PotentialFunction& jay, double c, int samples, std::uint64_t seed);

struct HierarchyLevel {
  int n = 0;  // merge threshold 2^n
  std::vector<std::vector<int>> blocks;                 // sorted labels, ordered by front
  std::vector<std::vector<std::array<int, 2>>> pairs;   // per block, each pair sorted
};

struct DyadicHierarchy {
  int n_min = 0;
  int n_max = 0;
  std::vector<HierarchyLevel> levels;  // n_min..n_max inclusive

  const HierarchyLevel& level(int n) const;
  // pairing of the coarsest level's single block
  std::vector<std::array<int, 2>> final_pairing() const;
};

// Single-linkage merges at dyadic thresholds, pairings inherited and then
// extended greedily (lowest unpaired + with lowest unpaired -). Pure function
// of the configuration; throws on duplicate positions. The structural
// invariants (pairs inside blocks, opposite signs, disjointness, leftover
// labels sharing one sign, monotone inclusion) are asserted on every build.
DyadicHierarchy build_hierarchy(const ChargeConfiguration& cfg);

struct BoundReport {
  double max_ratio = 0.0;  // worst LHS/RHS over all levels and blocks
  int level = 0;
  int block = 0;
};
// Pointwise bound check: within each block, the product of J^{sigma sigma}
// over unordered pairs against the paired 1/J factors times the ball sup
// raised to the number of unpaired two-subsets. Evaluated in log space.
BoundReport hierarchical_bound_report(const ChargeConfiguration& cfg, const DyadicHierarchy& hier,
                                      const PotentialFunction& jay);

// prod of 1/J over the given label pairs
double pairing_value(const ChargeConfiguration& cfg, const PotentialFunction& jay,
                     const std::vector<std::array<int, 2>>& pairing);

struct BestPairing {
  std::vector<std::array<int, 2>> pairing;
  double value = 0.0;
};
// Exhaustive maximum of pairing_value over perfect +/- matchings.
// N! enumeration; refuses more than 6 pairs per sign.
BestPairing brute_force_best_pairing(const ChargeConfiguration& cfg,
                                     const PotentialFunction& jay);

// Pair-expansion terms over subsets of renorm pairs, passed as bit masks
// over renorm indices. h_subset is the P-term: paired factors inverted, all
// pairs among the remaining charges weighted by their sign product. h_total
// is the alternating sum over all P.
double h_subset(const ChargeConfiguration& cfg, const PotentialFunction& jay,
                std::uint32_t pmask);
double h_total(const ChargeConfiguration& cfg, const PotentialFunction& jay);

struct Dipole {
  PointD plus, minus;
};

// Quadrupole ratio minus one, and the distance cross-ratio controlling it.
// A collapsed e or f gives exactly 0; coincident points across the two
// dipoles are degenerate and throw.
double delta_ef(const PotentialFunction& jay, const Dipole& e, const Dipole& f);
double a_ef(const Dipole& e, const Dipole& f);

// Rejection-samples two dipoles whose smaller scale stays below both cross
// distances (the regime where delta is controlled by a_ef).
std::pair<Dipole, Dipole> random_dipole_pair_condef(std::mt19937_64& rng, double spread = 1.0);

struct CancellationReport {
  double lhs = 0.0;    // the alternating sum itself
  double rhs = 0.0;    // sum over (A, B) of Delta_A^B times the partial sums
  double scale = 0.0;  // max |H_P|, the natural size of the cancellation
  double rel = 0.0;    // |lhs - rhs| / scale
  std::size_t terms = 0;  // number of (A, B) pairs enumerated
};
// Exact rewriting of h_total at expansion depth ell under the given ordering
// of the renorm pairs (a permutation of 0..m-1). The identity is algebraic in
// the pair values, so both sides are accumulated in long double from one
// shared table of J evaluations.
CancellationReport cancellation_identity_check(const ChargeConfiguration& cfg,
                                               const PotentialFunction& jay, int ell,
                                               const std::vector<int>& ordering);

struct PairClasses {
  std::vector<int> good;  // renorm indices that the hierarchy also selected
  std::vector<int> bad;
};
// A selected pair is bad when some other renorm pair interleaves it at a
// cross distance below both dipole scales.
PairClasses classify_pairs(const ChargeConfiguration& cfg, const DyadicHierarchy& hier);

// prod a_i - 1 expanded over nonempty subsets of the (a_i - 1) factors.
double telescope_expansion(const std::vector<double>& a);

}  // namespace wick

#endif
