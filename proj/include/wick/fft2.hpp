#ifndef WICK_FFT2_HPP
#define WICK_FFT2_HPP

#include <unsupported/Eigen/FFT>
#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "wick/geom.hpp"

namespace wick {

// 2D FFT on the torus grid with physical normalization:
//   hat f(k) = sum_x f(x) h^2 e^{-ikx},   f(x) = L^-2 sum_k hat f(k) e^{ikx}.
// Convolution theorem then holds without stray factors:
//   hat(f * g) = hat f hat g  for the grid convolution sum_y f(x-y) g(y) h^2.
class Fft2 {
 public:
  explicit Fft2(const TorusGrid& g) : N_(g.N), L_(g.L), h2_(g.h() * g.h()) {}

  Eigen::ArrayXXcd fwd(const Eigen::ArrayXXcd& f) const {
    Eigen::ArrayXXcd out = f;
    transform(out, false);
    return out * h2_;
  }
  Eigen::ArrayXXcd inv(const Eigen::ArrayXXcd& fhat) const {
    Eigen::ArrayXXcd out = fhat;
    transform(out, true);
    return out * (static_cast<double>(N_) * N_ / (L_ * L_));
  }
  Eigen::ArrayXXcd fwd_real(const Eigen::ArrayXXd& f) const {
    return fwd(f.cast<std::complex<double>>());
  }
  // for fields even under x -> -x the spectrum is real
  Eigen::ArrayXXd fwd_even(const Eigen::ArrayXXd& f) const { return fwd_real(f).real(); }
  Eigen::ArrayXXd inv_even(const Eigen::ArrayXXd& fhat) const {
    return inv(fhat.cast<std::complex<double>>()).real();
  }

  int N() const { return N_; }
  // |k|^2 of mode (m1, m2), aliased to the symmetric range
  double k2(int m1, int m2) const {
    const double f = 2.0 * M_PI / L_;
    const int a = m1 > N_ / 2 ? m1 - N_ : m1;
    const int b = m2 > N_ / 2 ? m2 - N_ : m2;
    return f * f * (static_cast<double>(a) * a + static_cast<double>(b) * b);
  }

 private:
  int N_;
  double L_, h2_;
  mutable Eigen::FFT<double> fft_;
  mutable std::vector<std::complex<double>> in_, out_;

  void transform(Eigen::ArrayXXcd& M, bool inverse) const {
    in_.resize(N_);
    out_.resize(N_);
    for (int j = 0; j < N_; ++j) {  // columns (contiguous)
      Eigen::VectorXcd col = M.col(j).matrix();
      std::copy(col.data(), col.data() + N_, in_.begin());
      if (inverse) fft_.inv(out_, in_); else fft_.fwd(out_, in_);
      for (int i = 0; i < N_; ++i) M(i, j) = out_[i];
    }
    for (int i = 0; i < N_; ++i) {  // rows
      for (int j = 0; j < N_; ++j) in_[j] = M(i, j);
      if (inverse) fft_.inv(out_, in_); else fft_.fwd(out_, in_);
      for (int j = 0; j < N_; ++j) M(i, j) = out_[j];
    }
  }
};

}  // namespace wick

#endif
