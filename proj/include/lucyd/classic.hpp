#pragma once

#include <functional>
#include <vector>

#include "lucyd/ops.hpp"
#include "lucyd/volume.hpp"

namespace lucyd {

/// Non-negative 3D blur kernel with unit sum. The center voxel is at
/// ((kd-1)/2, (kh-1)/2, (kw-1)/2).
struct Psf {
  int kd = 1;
  int kh = 1;
  int kw = 1;
  std::vector<float> values{1.0f};

  float at(int z, int y, int x) const {
    return values[(static_cast<std::size_t>(z) * kh + y) * kw + x];
  }
  /// The adjoint kernel K^T, mirrored through the center.
  Psf flipped() const;
};

/// Radius covering three standard deviations.
int default_psf_radius(double sigma);

/// Isotropic Gaussian sampled at voxel centers, side 2*radius+1, unit sum.
/// sigma = 0 gives a centered delta.
Psf gaussian_psf(double sigma, int radius);

/// Gaussian with separate axial (z) and lateral (y, x) widths.
Psf gaussian_psf(double sigma_axial, double sigma_lateral, int radius_axial,
                 int radius_lateral);

/// Circular convolution of a single-channel volume with a PSF through the
/// real FFT.
Volume fft_convolve(const Volume& x, const Psf& psf);

/// Frequency-domain Wiener filter, conj(P) Y / (|P|^2 + nsr).
Volume wiener(const Volume& y, const Psf& psf, double nsr);

inline constexpr int kDefaultRlIterations = 30;
inline constexpr double kDefaultWienerNsr = 1e-2;

/// Called after every Richardson-Lucy iteration with the 1-based iteration
/// number and the current estimate.
using RlObserver = std::function<void(int, const VolumeD&)>;

/// Fixed-count Richardson-Lucy deconvolution with circular boundaries.
/// Starts from z_0 = y; denominators are clamped below at eps.
Volume richardson_lucy(const Volume& y, const Psf& psf, int iterations,
                       double eps = kDivEps, const RlObserver& observer = {});

}  // namespace lucyd
