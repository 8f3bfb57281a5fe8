#pragma once

#include <cstddef>
#include <vector>

#include "lucyd/network.hpp"
#include "lucyd/tape.hpp"
#include "lucyd/volume.hpp"

namespace lucyd {

/// Gaussian-window SSIM settings (Wang et al. defaults).
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;

  double c1() const { return (k1 * data_range) * (k1 * data_range); }
  double c2() const { return (k2 * data_range) * (k2 * data_range); }
};

/// Normalized 1D Gaussian taps; the 3D window is their separable product.
std::vector<double> ssim_window(const SsimParams& params);

/// 10 log10(range^2 / MSE). Identical inputs give +infinity.
template <typename T>
double psnr(const BasicVolume<T>& a, const BasicVolume<T>& b,
            double range = 1.0);

/// Mean of the local SSIM map over all window positions that fit inside the
/// volume. Inputs must be single-channel and at least `window` per side.
template <typename T>
double ssim3d(const BasicVolume<T>& a, const BasicVolume<T>& b,
              const SsimParams& params = {});

/// Taped SSIM; differentiable in both arguments.
template <typename T>
VarId ssim3d(Tape<T>& tape, VarId a, VarId b, const SsimParams& params = {});

template <typename T>
std::size_t param_count(const ModelParams<T>& params) {
  std::size_t n = 0;
  for (const auto& k : params.kernels) n += k.param_count();
  return n;
}

/// Learnable parameter count the reference LUCYD model reports.
inline constexpr std::size_t kReportedParamCount = 24964;

}  // namespace lucyd
