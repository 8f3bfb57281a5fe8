#include "lucyd/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace lucyd {

namespace {

struct Grid {
  int d = 0;
  int h = 0;
  int w = 0;
  std::size_t size() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t at(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * h + y) * w + x;
  }
};

// Valid correlation with the separable window along x, then y, then z.
std::vector<double> filter_valid(const std::vector<double>& in, Grid g,
                                 const std::vector<double>& taps) {
  const int n = static_cast<int>(taps.size());
  Grid gx{g.d, g.h, g.w - n + 1};
  std::vector<double> tx(gx.size(), 0.0);
  for (int z = 0; z < gx.d; ++z)
    for (int y = 0; y < gx.h; ++y)
      for (int x = 0; x < gx.w; ++x) {
        double acc = 0.0;
        for (int t = 0; t < n; ++t) acc += taps[t] * in[g.at(z, y, x + t)];
        tx[gx.at(z, y, x)] = acc;
      }
  Grid gy{gx.d, gx.h - n + 1, gx.w};
  std::vector<double> ty(gy.size(), 0.0);
  for (int z = 0; z < gy.d; ++z)
    for (int y = 0; y < gy.h; ++y)
      for (int t = 0; t < n; ++t)
        for (int x = 0; x < gy.w; ++x)
          ty[gy.at(z, y, x)] += taps[t] * tx[gx.at(z, y + t, x)];
  Grid gz{gy.d - n + 1, gy.h, gy.w};
  std::vector<double> tz(gz.size(), 0.0);
  for (int z = 0; z < gz.d; ++z)
    for (int t = 0; t < n; ++t)
      for (int y = 0; y < gz.h; ++y)
        for (int x = 0; x < gz.w; ++x)
          tz[gz.at(z, y, x)] += taps[t] * ty[gy.at(z + t, y, x)];
  return tz;
}

// Adjoint of filter_valid: scatters a map of the valid grid back onto the
// full grid.
std::vector<double> filter_valid_adjoint(const std::vector<double>& map,
                                         Grid full,
                                         const std::vector<double>& taps) {
  const int n = static_cast<int>(taps.size());
  Grid gx{full.d, full.h, full.w - n + 1};
  Grid gy{gx.d, gx.h - n + 1, gx.w};
  Grid gz{gy.d - n + 1, gy.h, gy.w};
  std::vector<double> ty(gy.size(), 0.0);
  for (int z = 0; z < gz.d; ++z)
    for (int t = 0; t < n; ++t)
      for (int y = 0; y < gz.h; ++y)
        for (int x = 0; x < gz.w; ++x)
          ty[gy.at(z + t, y, x)] += taps[t] * map[gz.at(z, y, x)];
  std::vector<double> tx(gx.size(), 0.0);
  for (int z = 0; z < gy.d; ++z)
    for (int y = 0; y < gy.h; ++y)
      for (int t = 0; t < n; ++t)
        for (int x = 0; x < gy.w; ++x)
          tx[gx.at(z, y + t, x)] += taps[t] * ty[gy.at(z, y, x)];
  std::vector<double> out(full.size(), 0.0);
  for (int z = 0; z < gx.d; ++z)
    for (int y = 0; y < gx.h; ++y)
      for (int x = 0; x < gx.w; ++x) {
        const double v = tx[gx.at(z, y, x)];
        for (int t = 0; t < n; ++t) out[full.at(z, y, x + t)] += taps[t] * v;
      }
  return out;
}

template <typename T>
Grid checked_grid(const BasicVolume<T>& a, const BasicVolume<T>& b,
                  const SsimParams& params) {
  if (a.shape() != b.shape()) {
    fail_usage("ssim3d: shape mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  }
  if (a.shape().c != 1) fail_usage("ssim3d: inputs must be single-channel");
  if (params.window < 1 || params.window % 2 == 0) {
    fail_usage("ssim3d: window side must be odd");
  }
  const Shape& s = a.shape();
  if (s.d < params.window || s.h < params.window || s.w < params.window) {
    fail_usage("ssim3d: volume " + s.str() + " is smaller than the " +
               std::to_string(params.window) + "-voxel window");
  }
  return Grid{s.d, s.h, s.w};
}

// Local statistics of one SSIM evaluation, kept for the adjoint.
struct SsimMoments {
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;
};

template <typename T>
SsimMoments moments(const BasicVolume<T>& a, const BasicVolume<T>& b, Grid g,
                    const std::vector<double>& taps) {
  std::vector<double> va(a.data().begin(), a.data().end());
  std::vector<double> vb(b.data().begin(), b.data().end());
  std::vector<double> aa(va.size()), bb(va.size()), ab(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  return SsimMoments{filter_valid(va, g, taps), filter_valid(vb, g, taps),
                     filter_valid(aa, g, taps), filter_valid(bb, g, taps),
                     filter_valid(ab, g, taps)};
}

double ssim_mean(const SsimMoments& m, const SsimParams& p) {
  const double c1 = p.c1(), c2 = p.c2();
  double acc = 0.0;
  for (std::size_t i = 0; i < m.mu_a.size(); ++i) {
    const double ma = m.mu_a[i], mb = m.mu_b[i];
    const double vaa = m.e_aa[i] - ma * ma;
    const double vbb = m.e_bb[i] - mb * mb;
    const double vab = m.e_ab[i] - ma * mb;
    acc += ((2 * ma * mb + c1) * (2 * vab + c2)) /
           ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
  }
  return acc / static_cast<double>(m.mu_a.size());
}

}  // namespace

std::vector<double> ssim_window(const SsimParams& params) {
  const int r = params.window / 2;
  std::vector<double> taps(static_cast<std::size_t>(params.window));
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    taps[i + r] = std::exp(-0.5 * i * i / (params.sigma * params.sigma));
    total += taps[i + r];
  }
  for (double& t : taps) t /= total;
  return taps;
}

template <typename T>
double psnr(const BasicVolume<T>& a, const BasicVolume<T>& b, double range) {
  if (a.shape() != b.shape()) {
    fail_usage("psnr: shape mismatch " + a.shape().str() + " vs " +
               b.shape().str());
  }
  if (!(range > 0.0)) fail_usage("psnr: range must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double m = acc / static_cast<double>(a.size());
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / m);
}

template <typename T>
double ssim3d(const BasicVolume<T>& a, const BasicVolume<T>& b,
              const SsimParams& params) {
  const Grid g = checked_grid(a, b, params);
  return ssim_mean(moments(a, b, g, ssim_window(params)), params);
}

template <typename T>
VarId ssim3d(Tape<T>& tape, VarId a, VarId b, const SsimParams& params) {
  const Grid g = checked_grid(tape.value(a), tape.value(b), params);
  const double value = ssim3d(tape.value(a), tape.value(b), params);
  return tape.record(
      OpKind::ssim3d, BasicVolume<T>(Shape{1, 1, 1, 1}, static_cast<T>(value)),
      {a, b}, {},
      [a, b, g, params](Tape<T>& t, const BasicVolume<T>& grad) {
        const auto taps = ssim_window(params);
        const BasicVolume<T>& va = t.value(a);
        const BasicVolume<T>& vb = t.value(b);
        const SsimMoments m = moments(va, vb, g, taps);
        const double c1 = params.c1(), c2 = params.c2();
        const double scale =
            static_cast<double>(grad[0]) / static_cast<double>(m.mu_a.size());
        const std::size_t n = m.mu_a.size();
        std::vector<double> g_mu_a(n), g_mu_b(n), g_aa(n), g_bb(n), g_ab(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double ma = m.mu_a[i], mb = m.mu_b[i];
          const double a1 = 2 * ma * mb + c1;
          const double a2 = 2 * (m.e_ab[i] - ma * mb) + c2;
          const double b1 = ma * ma + mb * mb + c1;
          const double b2 = (m.e_aa[i] - ma * ma) + (m.e_bb[i] - mb * mb) + c2;
          const double s = (a1 * a2) / (b1 * b2);
          const double inv = 1.0 / (b1 * b2);
          // Partials with the raw second moments held fixed.
          g_mu_a[i] = scale * ((2 * mb * a2 - 2 * mb * a1) * inv -
                               s * (2 * ma / b1 - 2 * ma / b2));
          g_mu_b[i] = scale * ((2 * ma * a2 - 2 * ma * a1) * inv -
                               s * (2 * mb / b1 - 2 * mb / b2));
          g_ab[i] = scale * 2 * a1 * inv;
          g_aa[i] = -scale * s / b2;
          g_bb[i] = g_aa[i];
        }
        const Grid full = g;
        const auto back_ab = filter_valid_adjoint(g_ab, full, taps);
        if (t.requires_grad(a)) {
          const auto back_mu = filter_valid_adjoint(g_mu_a, full, taps);
          const auto back_sq = filter_valid_adjoint(g_aa, full, taps);
          auto ga = t.grad_buffer(a).data();
          for (std::size_t i = 0; i < ga.size(); ++i) {
            const double x = va[i], y = vb[i];
            ga[i] += static_cast<T>(back_mu[i] + 2 * x * back_sq[i] +
                                    y * back_ab[i]);
          }
        }
        if (t.requires_grad(b)) {
          const auto back_mu = filter_valid_adjoint(g_mu_b, full, taps);
          const auto back_sq = filter_valid_adjoint(g_bb, full, taps);
          auto gb = t.grad_buffer(b).data();
          for (std::size_t i = 0; i < gb.size(); ++i) {
            const double x = va[i], y = vb[i];
            gb[i] += static_cast<T>(back_mu[i] + 2 * y * back_sq[i] +
                                    x * back_ab[i]);
          }
        }
      });
}

template double psnr(const BasicVolume<float>&, const BasicVolume<float>&,
                     double);
template double psnr(const BasicVolume<double>&, const BasicVolume<double>&,
                     double);
template double ssim3d(const BasicVolume<float>&, const BasicVolume<float>&,
                       const SsimParams&);
template double ssim3d(const BasicVolume<double>&, const BasicVolume<double>&,
                       const SsimParams&);
template VarId ssim3d(Tape<float>&, VarId, VarId, const SsimParams&);
template VarId ssim3d(Tape<double>&, VarId, VarId, const SsimParams&);

}  // namespace lucyd
