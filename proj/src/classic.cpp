#include "lucyd/classic.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "fft.hpp"

namespace lucyd {

namespace {

using Spectrum = std::vector<std::complex<double>>;

std::vector<double> gaussian_profile(double sigma, int radius) {
  std::vector<double> p(static_cast<std::size_t>(2 * radius + 1), 0.0);
  if (sigma == 0.0) {
    p[radius] = 1.0;
    return p;
  }
  for (int i = -radius; i <= radius; ++i) {
    p[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  return p;
}

void require_single_channel(const Volume& v, const char* op) {
  if (v.shape().c != 1) {
    fail_usage(std::string(op) + ": expected a single-channel volume, got " +
               v.shape().str());
  }
}

// PSF circularly shifted so its center lands on voxel (0, 0, 0).
std::vector<double> embed_psf(const Psf& psf, const Shape& s) {
  if (psf.kd > s.d || psf.kh > s.h || psf.kw > s.w) {
    fail_usage("psf of size " + std::to_string(psf.kd) + "x" +
               std::to_string(psf.kh) + "x" + std::to_string(psf.kw) +
               " does not fit volume " + s.str());
  }
  std::vector<double> out(s.spatial(), 0.0);
  const int cd = (psf.kd - 1) / 2, ch = (psf.kh - 1) / 2, cw = (psf.kw - 1) / 2;
  for (int z = 0; z < psf.kd; ++z) {
    const int zz = ((z - cd) % s.d + s.d) % s.d;
    for (int y = 0; y < psf.kh; ++y) {
      const int yy = ((y - ch) % s.h + s.h) % s.h;
      for (int x = 0; x < psf.kw; ++x) {
        const int xx = ((x - cw) % s.w + s.w) % s.w;
        out[(static_cast<std::size_t>(zz) * s.h + yy) * s.w + xx] +=
            psf.at(z, y, x);
      }
    }
  }
  return out;
}

std::vector<double> to_double(const Volume& v) {
  return std::vector<double>(v.data().begin(), v.data().end());
}

Volume to_volume(const Shape& s, const std::vector<double>& v) {
  return Volume(s, std::vector<float>(v.begin(), v.end()));
}

}  // namespace

Psf Psf::flipped() const {
  Psf out = *this;
  for (int z = 0; z < kd; ++z) {
    for (int y = 0; y < kh; ++y) {
      for (int x = 0; x < kw; ++x) {
        out.values[(static_cast<std::size_t>(z) * kh + y) * kw + x] =
            at(kd - 1 - z, kh - 1 - y, kw - 1 - x);
      }
    }
  }
  return out;
}

int default_psf_radius(double sigma) {
  return static_cast<int>(std::ceil(3.0 * sigma));
}

Psf gaussian_psf(double sigma, int radius) {
  return gaussian_psf(sigma, sigma, radius, radius);
}

Psf gaussian_psf(double sigma_axial, double sigma_lateral, int radius_axial,
                 int radius_lateral) {
  if (!(sigma_axial >= 0.0) || !(sigma_lateral >= 0.0)) {
    fail_usage("gaussian_psf: sigma must be non-negative");
  }
  if (radius_axial < 0 || radius_lateral < 0) {
    fail_usage("gaussian_psf: radius must be non-negative");
  }
  const auto pz = gaussian_profile(sigma_axial, radius_axial);
  const auto pxy = gaussian_profile(sigma_lateral, radius_lateral);
  Psf psf;
  psf.kd = 2 * radius_axial + 1;
  psf.kh = psf.kw = 2 * radius_lateral + 1;
  std::vector<double> raw;
  raw.reserve(static_cast<std::size_t>(psf.kd) * psf.kh * psf.kw);
  double total = 0.0;
  for (double a : pz) {
    for (double b : pxy) {
      for (double c : pxy) {
        raw.push_back(a * b * c);
        total += a * b * c;
      }
    }
  }
  psf.values.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    psf.values[i] = static_cast<float>(raw[i] / total);
  }
  return psf;
}

Volume fft_convolve(const Volume& x, const Psf& psf) {
  require_single_channel(x, "fft_convolve");
  const Shape s = x.shape();
  detail::RealFft3d fft(s.d, s.h, s.w);
  const Spectrum kernel = fft.forward(embed_psf(psf, s));
  Spectrum spec = fft.forward(to_double(x));
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= kernel[i];
  return to_volume(s, fft.inverse(spec));
}

Volume wiener(const Volume& y, const Psf& psf, double nsr) {
  require_single_channel(y, "wiener");
  if (!(nsr >= 0.0)) fail_usage("wiener: nsr must be non-negative");
  const Shape s = y.shape();
  detail::RealFft3d fft(s.d, s.h, s.w);
  const Spectrum kernel = fft.forward(embed_psf(psf, s));
  Spectrum spec = fft.forward(to_double(y));
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double denom = std::norm(kernel[i]) + nsr;
    spec[i] = denom > 0.0 ? std::conj(kernel[i]) * spec[i] / denom
                          : std::complex<double>(0.0, 0.0);
  }
  return to_volume(s, fft.inverse(spec));
}

Volume richardson_lucy(const Volume& y, const Psf& psf, int iterations,
                       double eps, const RlObserver& observer) {
  require_single_channel(y, "richardson_lucy");
  if (iterations < 1) fail_usage("richardson_lucy: iterations must be >= 1");
  if (!(eps > 0.0)) fail_usage("richardson_lucy: eps must be positive");
  for (float v : y.data()) {
    if (!(v >= 0.0f)) {
      fail_data("richardson_lucy: input must be non-negative and finite");
    }
  }
  const Shape s = y.shape();
  detail::RealFft3d fft(s.d, s.h, s.w);
  const Spectrum kernel = fft.forward(embed_psf(psf, s));
  const std::vector<double> observed = to_double(y);
  std::vector<double> estimate = observed;
  std::vector<double> ratio(observed.size());

  for (int k = 1; k <= iterations; ++k) {
    Spectrum spec = fft.forward(estimate);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= kernel[i];
    const std::vector<double> reblurred = fft.inverse(spec);
    for (std::size_t i = 0; i < ratio.size(); ++i) {
      ratio[i] = observed[i] / std::max(reblurred[i], eps);
    }
    spec = fft.forward(ratio);
    // Multiplying by conj(P) applies the mirrored kernel K^T.
    for (std::size_t i = 0; i < spec.size(); ++i) {
      spec[i] *= std::conj(kernel[i]);
    }
    const std::vector<double> correction = fft.inverse(spec);
    for (std::size_t i = 0; i < estimate.size(); ++i) {
      // The exact correction is non-negative; clip FFT round-off.
      estimate[i] *= std::max(correction[i], 0.0);
    }
    if (observer) observer(k, VolumeD(s, estimate));
  }
  return to_volume(s, estimate);
}

}  // namespace lucyd
