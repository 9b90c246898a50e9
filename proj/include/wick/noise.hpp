#pragma once
// Space-time white noise and its convolution against the kernel machinery.
//
// Noise is counter-based: every (slab, cell pair) is one Philox block keyed
// by (seed, sample), so realizations are bitwise reproducible, windows can be
// sliced and re-sampled consistently, and samples are order-independent.

#include <array>
#include <cstdint>

#include <Eigen/Dense>

#include "wick/fft2.hpp"
#include "wick/geom.hpp"
#include "wick/kernels.hpp"

namespace wick {

using Mollifier = CovarianceWorkspace::Mollifier;

struct PhiloxCtr {
  std::uint32_t c0 = 0, c1 = 0, c2 = 0, c3 = 0;
};
struct PhiloxKey {
  std::uint32_t k0 = 0, k1 = 0;
};

// Philox4x32-10 block function
std::array<std::uint32_t, 4> philox4x32(PhiloxCtr c, PhiloxKey k);

// two unit normals per block, Box-Muller on 53-bit uniforms in (0,1)
std::array<double, 2> block_normals(const std::array<std::uint32_t, 4>& b);

// white-noise increments scaled by the cell volume: each cell holds an
// independent N(0, 1/(dt h^2)) draw, the discrete density of xi over the cell
struct NoiseRealization {
  TorusGrid grid;
  std::uint64_t seed = 0;
  std::uint64_t sample = 0;
  RealField xi;
};

// slab t, cells (2c, 2c+1) share the block ctr=(lo t, hi t, c, sample), key=seed;
// slicing the window or growing it never changes overlapping slabs
NoiseRealization sample_noise(const TorusGrid& g, std::uint64_t seed, int slabs,
                              std::int64_t t0 = 0, std::uint64_t sample = 0);

// time-major spectral window: rows.col(m) is mode m = m1 + N m2 over slabs,
// row r belongs to slab t0 + r
struct SpectralField {
  std::int64_t t0 = 0;
  Eigen::ArrayXXcd rows;
  int slabs() const { return static_cast<int>(rows.rows()); }
};

SpectralField to_spectral(const TorusGrid& g, const RealField& f);
SpectralField to_spectral(const TorusGrid& g, const ComplexField& f);
RealField to_real(const TorusGrid& g, const SpectralField& f);
ComplexField to_complex(const TorusGrid& g, const SpectralField& f);

// per-mode FIR filter in slab time: out(t,m) = dt sum_s taps(s,m) in(t-s,m),
// tap row r acting at offset s = s_min + r. apply() runs a padded circular
// FFT per mode, exact on the fully overlapped window it returns;
// apply_direct() is the same sum written out, kept as the oracle.
class SpectralConvolver {
 public:
  SpectralConvolver(const TorusGrid& g, int s_min, Eigen::ArrayXXd taps);

  static SpectralConvolver from_mollifier(const TorusGrid& g, const Mollifier& mo);
  // truncated heat kernel, taps 0..S with no mass on the contemporaneous slab
  static SpectralConvolver heat(const CovarianceWorkspace& ws);
  // fused K * rho, the one-pass route from white noise to the mollified field;
  // its discrete covariance is exactly the uncorrected lag table
  static SpectralConvolver heat_mollified(const CovarianceWorkspace& ws, const Mollifier& mo);

  SpectralField apply(const SpectralField& in) const;
  SpectralField apply_direct(const SpectralField& in) const;

  int s_min() const { return s_min_; }
  int s_max() const { return s_min_ + static_cast<int>(taps_.rows()) - 1; }
  int tap_count() const { return static_cast<int>(taps_.rows()); }
  const Eigen::ArrayXXd& taps() const { return taps_; }

 private:
  TorusGrid g_;
  int s_min_;
  Eigen::ArrayXXd taps_;               // R x N^2
  mutable int pad_ = 0;
  mutable Eigen::ArrayXXcd taps_hat_;  // pad x N^2, rebuilt when the pad changes
};

// rho_eps * xi as a discrete convolution of the sampled increments
RealField mollify(const NoiseRealization& xi, const Mollifier& mo);

struct FreeField {
  TorusGrid grid;
  double eps = 0.0;
  std::uint64_t source_seed = 0;
  RealField values;
  // d_t Phi - Lap Phi / 2 - xi_eps, forward first-order time and centered
  // second-order space, one slab shorter than values
  RealField remainder;
};

// Phi_eps = K * rho_eps * xi through the fused taps
FreeField free_field(const NoiseRealization& xi, const CovarianceWorkspace& ws,
                     const Mollifier& mo);

}  // namespace wick
