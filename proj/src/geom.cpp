#include "wick/geom.hpp"

namespace wick {

Profile profile_by_name(const std::string& name) {
  if (name == "bump") return Profile::Bump;
  if (name == "tensor") return Profile::Tensor;
  throw std::invalid_argument("unknown test profile: " + name);
}

const char* profile_name(Profile p) {
  switch (p) {
    case Profile::Bump: return "bump";
    case Profile::Tensor: return "tensor";
  }
  return "?";
}

namespace {

// 1D bump exp(1 - 1/(1-u^2)) on (-1,1), peak 1.
double bump1(double u) {
  const double s = u * u;
  if (s >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - s));
}

}  // namespace

double profile_value(Profile which, const PointD& z) {
  switch (which) {
    case Profile::Bump: {
      const double n2 = std::sqrt(parabolic_norm4(z));  // ||z||^2
      if (n2 >= 1.0) return 0.0;
      return std::exp(1.0 - 1.0 / (1.0 - n2));
    }
    case Profile::Tensor: {
      // squeeze by 3^(1/4) per direction so t^2 + x1^4 + x2^4 < 1 on the support
      const double c = 0.7598356856515925;  // 3^(-1/4)
      return bump1(z.t / (c * c)) * bump1(z.x1 / c) * bump1(z.x2 / c);
    }
  }
  return 0.0;
}

double rescaled_profile(Profile which, const PointD& center, double lam,
                        const PointD& z, double L) {
  if (lam <= 0) throw std::invalid_argument("rescaled_profile: lam must be positive");
  const double il = 1.0 / lam;
  const PointD arg{(z.t - center.t) * il * il,
                   wrap_min_image(z.x1 - center.x1, L) * il,
                   wrap_min_image(z.x2 - center.x2, L) * il};
  return il * il * il * il * profile_value(which, arg);
}

namespace {

template <class Scalar>
Scalar pair_impl(const FieldWindow<Scalar>& f, const TorusGrid& g, Profile prof,
                 const PointD& center, double lam) {
  g.require_valid();
  if (lam < 4.0 * g.h() || lam * lam < 4.0 * g.dt)
    throw std::invalid_argument("pair_field: support under-resolved (need lam >= 4h, lam^2 >= 4dt)");

  // slabs carrying the support [center.t - lam^2, center.t + lam^2]
  const std::int64_t ia = static_cast<std::int64_t>(std::ceil((center.t - lam * lam) / g.dt));
  const std::int64_t ib = static_cast<std::int64_t>(std::floor((center.t + lam * lam) / g.dt));
  if (!f.covers(ia, ib)) throw std::invalid_argument("pair_field: field window does not cover the support");

  // spatial bounding box, +-lam around the center in each coordinate
  const int ci = static_cast<int>(std::round(center.x1 / g.h()));
  const int cj = static_cast<int>(std::round(center.x2 / g.h()));
  const int r = static_cast<int>(std::ceil(lam / g.h()));
  const int span = std::min(2 * r + 1, g.N);

  Scalar acc{};
  for (std::int64_t it = ia; it <= ib; ++it) {
    const auto& slab = f.slabs[static_cast<std::size_t>(it - f.t0)];
    const double t = it * g.dt;
    for (int a = 0; a < span; ++a) {
      const int i = g.wrap_index(ci - r + a);
      for (int b = 0; b < span; ++b) {
        const int j = g.wrap_index(cj - r + b);
        const double w = rescaled_profile(prof, center, lam, {t, g.x(i), g.x(j)}, g.L);
        if (w != 0.0) acc += w * slab(i, j);
      }
    }
  }
  return acc * g.cell_volume();
}

}  // namespace

std::complex<double> pair_field(const ComplexField& f, const TorusGrid& g, Profile prof,
                                const PointD& center, double lam) {
  return pair_impl(f, g, prof, center, lam);
}
double pair_field(const RealField& f, const TorusGrid& g, Profile prof,
                  const PointD& center, double lam) {
  return pair_impl(f, g, prof, center, lam);
}

}  // namespace wick
