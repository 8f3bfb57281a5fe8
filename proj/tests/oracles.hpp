#pragma once

#include "lucyd/classic.hpp"
#include "lucyd/ops.hpp"
#include "lucyd/volume.hpp"
#include "support.hpp"

namespace lucyd::test {

// Direct summation, accumulated in double.
inline Volume conv_oracle(const Volume& x, const Kernel3d<float>& k, int stride, Padding pad) {
  const Shape in = x.shape();
  const int cd = pad == Padding::same_zero ? k.kd / 2 : 0;
  const int ch = pad == Padding::same_zero ? k.kh / 2 : 0;
  const int cw = pad == Padding::same_zero ? k.kw / 2 : 0;
  auto extent = [&](int n, int kn) {
    return pad == Padding::same_zero ? (n + stride - 1) / stride : (n - kn) / stride + 1;
  };
  Volume out(Shape{k.c_out, extent(in.d, k.kd), extent(in.h, k.kh), extent(in.w, k.kw)});
  const Shape os = out.shape();
  for (int o = 0; o < os.c; ++o)
    for (int z = 0; z < os.d; ++z)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) {
          double acc = k.bias[o];
          for (int i = 0; i < in.c; ++i)
            for (int a = 0; a < k.kd; ++a)
              for (int b = 0; b < k.kh; ++b)
                for (int c = 0; c < k.kw; ++c) {
                  const int sz = z * stride + a - cd;
                  const int sy = y * stride + b - ch;
                  const int sx = xx * stride + c - cw;
                  if (sz < 0 || sy < 0 || sx < 0 || sz >= in.d || sy >= in.h || sx >= in.w) continue;
                  acc += static_cast<double>(k.weight(o, i, a, b, c)) * x.at(i, sz, sy, sx);
                }
          out.at(o, z, y, xx) = static_cast<float>(acc);
        }
  return out;
}

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

/// Circular convolution by direct summation, PSF centred at its middle tap.
inline Volume circular_oracle(const Volume& x, const Psf& p) {
  const Shape s = x.shape();
  Volume out(s);
  const int cd = (p.kd - 1) / 2, ch = (p.kh - 1) / 2, cw = (p.kw - 1) / 2;
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int xx = 0; xx < s.w; ++xx) {
        double acc = 0.0;
        for (int a = 0; a < p.kd; ++a)
          for (int b = 0; b < p.kh; ++b)
            for (int c = 0; c < p.kw; ++c) {
              acc += static_cast<double>(p.at(a, b, c)) *
                     x.at(0, wrap(z - (a - cd), s.d), wrap(y - (b - ch), s.h),
                          wrap(xx - (c - cw), s.w));
            }
        out.at(0, z, y, xx) = static_cast<float>(acc);
      }
  return out;
}

/// Non-negative PSF with unit sum.
inline Psf random_psf(int kd, int kh, int kw, std::uint64_t seed) {
  const Volume r = random_volume(Shape{1, kd, kh, kw}, seed, 0.0, 1.0);
  Psf p;
  p.kd = kd;
  p.kh = kh;
  p.kw = kw;
  double total = 0.0;
  for (float v : r.storage()) total += v;
  p.values.clear();
  for (float v : r.storage()) p.values.push_back(static_cast<float>(v / total));
  return p;
}

}  // namespace lucyd::test
