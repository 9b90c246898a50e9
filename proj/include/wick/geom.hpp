#ifndef WICK_GEOM_HPP
#define WICK_GEOM_HPP

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wick {

// Space-time point under the parabolic scaling (2,1,1): time counts twice.
// ||z||^4 = t^2 + x1^4 + x2^4, so dilations act as (t,x) -> (lam^2 t, lam x).
template <class Real = double>
struct Point3 {
  Real t{}, x1{}, x2{};
};
using PointD = Point3<double>;

template <class Real>
inline Point3<Real> operator+(const Point3<Real>& a, const Point3<Real>& b) {
  return {a.t + b.t, a.x1 + b.x1, a.x2 + b.x2};
}
template <class Real>
inline Point3<Real> operator-(const Point3<Real>& a, const Point3<Real>& b) {
  return {a.t - b.t, a.x1 - b.x1, a.x2 - b.x2};
}
template <class Real>
inline Point3<Real> operator-(const Point3<Real>& a) {
  return {-a.t, -a.x1, -a.x2};
}

template <class Real>
inline Point3<Real> parabolic_scale(const Point3<Real>& p, Real lam) {
  return {lam * lam * p.t, lam * p.x1, lam * p.x2};
}

// Minimal-magnitude representative of d modulo period.
template <class Real>
inline Real wrap_min_image(Real d, Real period) {
  return d - period * std::round(d / period);
}

template <class Real>
inline Real parabolic_norm4(const Point3<Real>& p) {
  const Real a = p.x1 * p.x1, b = p.x2 * p.x2;
  return p.t * p.t + a * a + b * b;
}

// Free-space norm; no torus reduction.
template <class Real>
inline Real parabolic_norm(const Point3<Real>& p) {
  return std::sqrt(std::sqrt(parabolic_norm4(p)));
}

// Torus variant: spatial components reduced to their minimal-magnitude
// representative first. Exact dilation covariance only holds for points
// already inside the fundamental cell, which is how grids use it.
template <class Real>
inline Real parabolic_norm(const Point3<Real>& p, Real period) {
  return parabolic_norm(Point3<Real>{p.t, wrap_min_image(p.x1, period),
                                     wrap_min_image(p.x2, period)});
}

template <class Real>
inline Real parabolic_dist(const Point3<Real>& a, const Point3<Real>& b) {
  return parabolic_norm(a - b);
}
template <class Real>
inline Real parabolic_dist(const Point3<Real>& a, const Point3<Real>& b, Real period) {
  return parabolic_norm(a - b, period);
}

// Uniform grid on [0,L)^2, time step dt, spatial step h = L/N.
// Time indices are absolute (can be negative); slab t = it*dt.
struct TorusGrid {
  double L = 1.0;
  int N = 64;
  double dt = 0.0;

  double h() const { return L / N; }
  double cell_volume() const { return dt * h() * h(); }
  double x(int i) const { return h() * i; }
  // minimal-magnitude offset of index difference di
  double offset(int di) const {
    di %= N;
    if (di > N / 2) di -= N;
    if (di < -(N / 2)) di += N;
    return h() * di;
  }
  int wrap_index(int i) const {
    i %= N;
    return i < 0 ? i + N : i;
  }
  void require_valid() const {
    if (L <= 0 || N < 2 || dt <= 0) throw std::invalid_argument("TorusGrid: need L>0, N>=2, dt>0");
  }
};

// Compactly supported test profiles on the unit parabolic ball, peak value 1.
//   bump:   exp(1 - 1/(1 - ||z||^2)) for ||z|| < 1
//   tensor: product of 1D bumps, squeezed so the support stays inside the ball
enum class Profile { Bump, Tensor };

Profile profile_by_name(const std::string& name);
const char* profile_name(Profile p);
double profile_value(Profile which, const PointD& z);

// phi_c^lam(z) = lam^-4 phi(lam^-2 (z.t - c.t), lam^-1 (x - c.x)); spatial
// offsets are reduced mod L so centers near the seam behave.
double rescaled_profile(Profile which, const PointD& center, double lam,
                        const PointD& z, double L);

// A field known on a contiguous window of time slabs.
template <class Scalar>
struct FieldWindow {
  std::int64_t t0 = 0;                                              // absolute index of slabs[0]
  std::vector<Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>> slabs;  // each N x N

  bool covers(std::int64_t a, std::int64_t b) const {  // [a,b] inclusive
    return a >= t0 && b < t0 + static_cast<std::int64_t>(slabs.size());
  }
};
using RealField = FieldWindow<double>;
using ComplexField = FieldWindow<std::complex<double>>;

// <phi_c^lam, f> as a grid sum over the support of the rescaled profile.
// Requires the profile support resolved by >= 4 cells per parabolic direction:
// lam >= 4h and lam^2 >= 4dt.
std::complex<double> pair_field(const ComplexField& f, const TorusGrid& g, Profile prof,
                                const PointD& center, double lam);
double pair_field(const RealField& f, const TorusGrid& g, Profile prof,
                  const PointD& center, double lam);

}  // namespace wick

#endif
