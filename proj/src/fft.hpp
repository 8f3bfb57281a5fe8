#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <vector>

namespace lucyd::detail {

/// Real-to-complex 3D transform pair over a fixed D x H x W grid. Plans are
/// created under a process-wide lock (the FFTW planner is not reentrant) and
/// executed through the new-array interface, so one instance must not be
/// shared across threads but separate instances may run concurrently.
class RealFft3d {
 public:
  RealFft3d(int d, int h, int w);
  ~RealFft3d();
  RealFft3d(const RealFft3d&) = delete;
  RealFft3d& operator=(const RealFft3d&) = delete;

  std::size_t real_size() const { return real_size_; }
  std::size_t complex_size() const { return complex_size_; }

  std::vector<std::complex<double>> forward(const std::vector<double>& in);
  /// Normalized inverse; the result is divided by D*H*W.
  std::vector<double> inverse(const std::vector<std::complex<double>>& in);

 private:
  int d_, h_, w_;
  std::size_t real_size_;
  std::size_t complex_size_;
  double* real_buf_ = nullptr;
  fftw_complex* complex_buf_ = nullptr;
  fftw_plan forward_plan_ = nullptr;
  fftw_plan inverse_plan_ = nullptr;
};

}  // namespace lucyd::detail
