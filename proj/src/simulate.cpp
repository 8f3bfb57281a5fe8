#include "lucyd/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lucyd {

namespace {

struct Voxel {
  int z, y, x;
  float value;
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool free_at(const Volume& v, const std::vector<Voxel>& voxels) {
  return std::all_of(voxels.begin(), voxels.end(), [&](const Voxel& p) {
    return v.at(0, p.z, p.y, p.x) == 0.0f;
  });
}

std::vector<Voxel> dot_voxels(const PhantomSpec& s, std::mt19937_64& rng) {
  const int m = s.gaussian_dots ? 1 : 0;
  const int z = uniform_int(rng, m, s.d - 1 - m);
  const int y = uniform_int(rng, m, s.h - 1 - m);
  const int x = uniform_int(rng, m, s.w - 1 - m);
  const auto peak = static_cast<float>(
      uniform_real(rng, s.intensity_min, s.intensity_max));
  if (!s.gaussian_dots) return {{z, y, x, peak}};
  std::vector<Voxel> out;
  constexpr double kSigma = 0.7;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const double r2 = dz * dz + dy * dy + dx * dx;
        out.push_back({z + dz, y + dy, x + dx,
                       static_cast<float>(peak * std::exp(-r2 / (2 * kSigma * kSigma)))});
      }
  return out;
}

std::vector<Voxel> ball_voxels(const PhantomSpec& s, std::mt19937_64& rng) {
  const int limit = (std::min({s.d, s.h, s.w}) - 1) / 2;
  const double r_max = std::min(s.radius_max, static_cast<double>(limit));
  const double r_min = std::min(s.radius_min, r_max);
  const double r = uniform_real(rng, r_min, r_max);
  const int ri = static_cast<int>(std::ceil(r));
  const int cz = uniform_int(rng, ri, s.d - 1 - ri);
  const int cy = uniform_int(rng, ri, s.h - 1 - ri);
  const int cx = uniform_int(rng, ri, s.w - 1 - ri);
  const auto value = static_cast<float>(
      uniform_real(rng, s.intensity_min, s.intensity_max));
  std::vector<Voxel> out;
  for (int dz = -ri; dz <= ri; ++dz)
    for (int dy = -ri; dy <= ri; ++dy)
      for (int dx = -ri; dx <= ri; ++dx) {
        if (dz * dz + dy * dy + dx * dx <= r * r) {
          out.push_back({cz + dz, cy + dy, cx + dx, value});
        }
      }
  return out;
}

// Inner boundary of a solid axis-aligned ellipsoid: voxels inside it with at
// least one face neighbour outside.
std::vector<Voxel> shell_voxels(const PhantomSpec& s, std::mt19937_64& rng) {
  auto semi_axis = [&](int n) {
    const double limit = (n - 1) / 2 - 1;
    const double hi = std::min(s.radius_max, limit);
    return uniform_real(rng, std::min(s.radius_min, hi), hi);
  };
  const double az = semi_axis(s.d), ay = semi_axis(s.h), ax = semi_axis(s.w);
  const int rz = static_cast<int>(std::ceil(az)) + 1;
  const int ry = static_cast<int>(std::ceil(ay)) + 1;
  const int rx = static_cast<int>(std::ceil(ax)) + 1;
  const int cz = uniform_int(rng, rz, s.d - 1 - rz);
  const int cy = uniform_int(rng, ry, s.h - 1 - ry);
  const int cx = uniform_int(rng, rx, s.w - 1 - rx);
  const auto value = static_cast<float>(
      uniform_real(rng, s.intensity_min, s.intensity_max));
  auto inside = [&](int dz, int dy, int dx) {
    const double q = (dz / az) * (dz / az) + (dy / ay) * (dy / ay) +
                     (dx / ax) * (dx / ax);
    return q <= 1.0;
  };
  std::vector<Voxel> out;
  for (int dz = -rz; dz <= rz; ++dz)
    for (int dy = -ry; dy <= ry; ++dy)
      for (int dx = -rx; dx <= rx; ++dx) {
        if (!inside(dz, dy, dx)) continue;
        if (!inside(dz - 1, dy, dx) || !inside(dz + 1, dy, dx) ||
            !inside(dz, dy - 1, dx) || !inside(dz, dy + 1, dx) ||
            !inside(dz, dy, dx - 1) || !inside(dz, dy, dx + 1)) {
          out.push_back({cz + dz, cy + dy, cx + dx, value});
        }
      }
  return out;
}

void place(Volume& v, const PhantomSpec& s) {
  std::mt19937_64 rng(s.seed);
  for (int placed = 0; placed < s.count; ++placed) {
    bool ok = false;
    for (int attempt = 0; attempt < s.retry_budget && !ok; ++attempt) {
      std::vector<Voxel> voxels;
      switch (s.kind) {
        case PhantomKind::dots: voxels = dot_voxels(s, rng); break;
        case PhantomKind::spheres: voxels = ball_voxels(s, rng); break;
        case PhantomKind::shells: voxels = shell_voxels(s, rng); break;
      }
      if (free_at(v, voxels)) {
        for (const Voxel& p : voxels) v.at(0, p.z, p.y, p.x) = p.value;
        ok = true;
      }
    }
    if (!ok) {
      fail_data("generate_phantom: placed " + std::to_string(placed) + " of " +
                std::to_string(s.count) + " " + to_string(s.kind) +
                " within the retry budget of " +
                std::to_string(s.retry_budget));
    }
  }
}

void check_spec(const PhantomSpec& s) {
  if (s.d < 16 || s.h < 16 || s.w < 16) {
    fail_usage("generate_phantom: every dimension must be at least 16");
  }
  if (s.count < 1) fail_usage("generate_phantom: count must be positive");
  if (s.radius_min < 0 || s.radius_max < s.radius_min) {
    fail_usage("generate_phantom: invalid radius range");
  }
  if (s.intensity_min < 0 || s.intensity_max > 255 ||
      s.intensity_max < s.intensity_min) {
    fail_usage("generate_phantom: intensities must lie in [0, 255]");
  }
  if (s.retry_budget < 1) fail_usage("generate_phantom: retry budget must be positive");
}

}  // namespace

std::string to_string(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::dots: return "dots";
    case PhantomKind::spheres: return "spheres";
    case PhantomKind::shells: return "shells";
  }
  return "unknown";
}

PhantomKind phantom_kind_from_string(const std::string& name) {
  if (name == "dots") return PhantomKind::dots;
  if (name == "spheres") return PhantomKind::spheres;
  if (name == "shells") return PhantomKind::shells;
  fail_usage("unknown phantom kind '" + name + "' (dots, spheres, shells)");
}

PhantomSpec default_phantom_spec(PhantomKind kind, int d, int h, int w,
                                 std::uint64_t seed) {
  PhantomSpec s;
  s.kind = kind;
  s.d = d;
  s.h = h;
  s.w = w;
  s.seed = seed;
  const double scale = static_cast<double>(d) * h * w / (128.0 * 128.0 * 128.0);
  int per128 = 0;
  switch (kind) {
    case PhantomKind::dots:
      per128 = kDefaultDotsPer128;
      s.radius_min = s.radius_max = 0.0;
      break;
    case PhantomKind::spheres:
      per128 = kDefaultSpheresPer128;
      s.radius_min = 2.0;
      s.radius_max = 6.0;
      break;
    case PhantomKind::shells:
      per128 = kDefaultShellsPer128;
      s.radius_min = 6.0;
      s.radius_max = 20.0;
      break;
  }
  s.count = std::max(1, static_cast<int>(std::lround(per128 * scale)));
  return s;
}

Volume generate_phantom(const PhantomSpec& spec) {
  check_spec(spec);
  Volume v(Shape{1, spec.d, spec.h, spec.w});
  place(v, spec);
  return v;
}

Volume generate_mixed_phantom(int d, int h, int w, std::uint64_t seed) {
  Volume v(Shape{1, d, h, w});
  // Largest objects first so the retry budget is spent where space is scarce.
  const PhantomKind order[] = {PhantomKind::shells, PhantomKind::spheres,
                               PhantomKind::dots};
  std::uint64_t salt = 0;
  for (PhantomKind kind : order) {
    PhantomSpec s = default_phantom_spec(kind, d, h, w, derive_seed(seed, 0, ++salt));
    check_spec(s);
    place(v, s);
  }
  return v;
}

Psf degradation_psf(const DegradationSpec& spec) {
  if (spec.sigma_b < 0 || spec.axial() < 0) {
    fail_usage("degradation blur must be non-negative");
  }
  return gaussian_psf(spec.axial(), spec.sigma_b,
                      default_psf_radius(spec.axial()),
                      default_psf_radius(spec.sigma_b));
}

Volume degrade(const Volume& x, const DegradationSpec& spec) {
  if (x.shape().c != 1) fail_usage("degrade: expected a single-channel volume");
  if (spec.sigma_b < 0 || spec.axial() < 0 || spec.sigma_n < 0) {
    fail_usage("degrade: sigmas must be non-negative");
  }
  Volume y = (spec.sigma_b > 0 || spec.axial() > 0)
                 ? fft_convolve(x, degradation_psf(spec))
                 : x;
  if (spec.sigma_n > 0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.sigma_n);
    for (float& v : y.data()) {
      v = static_cast<float>(static_cast<double>(v) + noise(rng));
    }
  }
  for (float& v : y.data()) v = std::max(v, 0.0f);
  return y;
}

Volume crop(const Volume& v, int z, int y, int x, const PatchShape& p) {
  const Shape s = v.shape();
  if (z < 0 || y < 0 || x < 0 || z + p.d > s.d || y + p.h > s.h ||
      x + p.w > s.w) {
    fail_usage("crop: patch at (" + std::to_string(z) + "," + std::to_string(y) +
               "," + std::to_string(x) + ") does not fit " + s.str());
  }
  Volume out(Shape{s.c, p.d, p.h, p.w});
  for (int c = 0; c < s.c; ++c)
    for (int dz = 0; dz < p.d; ++dz)
      for (int dy = 0; dy < p.h; ++dy) {
        const auto src = v.data().begin() +
                         static_cast<std::ptrdiff_t>(v.index(c, z + dz, y + dy, x));
        std::copy(src, src + p.w,
                  out.data().begin() +
                      static_cast<std::ptrdiff_t>(out.index(c, dz, dy, 0)));
      }
  return out;
}

std::vector<PatchSample> sample_patches(std::span<const VolumePair> pairs,
                                        const PatchShape& patch, int n,
                                        std::uint64_t seed) {
  if (pairs.empty()) fail_usage("sample_patches: no volume pairs");
  if (n < 0) fail_usage("sample_patches: negative sample count");
  if (patch.d <= 0 || patch.h <= 0 || patch.w <= 0) {
    fail_usage("sample_patches: patch dims must be positive");
  }
  for (const VolumePair& p : pairs) {
    const Shape s = p.truth.shape();
    if (p.degraded.shape() != s) {
      fail_usage("sample_patches: degraded and ground truth shapes differ");
    }
    if (patch.d > s.d || patch.h > s.h || patch.w > s.w) {
      fail_usage("sample_patches: patch larger than volume " + s.str());
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<PatchSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PatchSample sample;
    sample.pair_index = static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<int>(pairs.size()) - 1));
    const VolumePair& p = pairs[sample.pair_index];
    const Shape s = p.truth.shape();
    sample.z = uniform_int(rng, 0, s.d - patch.d);
    sample.y = uniform_int(rng, 0, s.h - patch.h);
    sample.x = uniform_int(rng, 0, s.w - patch.w);
    sample.patch.degraded = crop(p.degraded, sample.z, sample.y, sample.x, patch);
    sample.patch.truth = crop(p.truth, sample.z, sample.y, sample.x, patch);
    out.push_back(std::move(sample));
  }
  return out;
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::train_mixed: return "train-mixed";
    case Regime::test_grid: return "test-grid";
    case Regime::regime_a: return "regime-A";
    case Regime::regime_b: return "regime-B";
  }
  return "unknown";
}

Regime regime_from_string(const std::string& name) {
  if (name == "train-mixed") return Regime::train_mixed;
  if (name == "test-grid") return Regime::test_grid;
  if (name == "regime-A") return Regime::regime_a;
  if (name == "regime-B") return Regime::regime_b;
  fail_usage("unknown regime '" + name +
             "' (train-mixed, test-grid, regime-A, regime-B)");
}

std::vector<DegradationSpec> regime_grid(Regime regime) {
  std::vector<DegradationSpec> cells;
  switch (regime) {
    case Regime::train_mixed:
      for (double b : {1.0, 1.2, 1.5})
        for (double n : {0.0, 15.0, 30.0}) cells.push_back({b, std::nullopt, n, 0});
      break;
    case Regime::test_grid:
      for (double b : {0.5, 2.0})
        for (double n : {20.0, 50.0, 70.0, 100.0})
          cells.push_back({b, std::nullopt, n, 0});
      break;
    case Regime::regime_a:
      cells.push_back({1.2, std::nullopt, 15.0, 0});
      break;
    case Regime::regime_b:
      cells.push_back({0.8, 2.0, 25.0, 0});
      break;
  }
  return cells;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                          std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  std::mt19937_64 rng(seq);
  return rng();
}

Dataset build_dataset(Regime regime, int n_volumes, int d, int h, int w,
                      std::uint64_t seed) {
  if (n_volumes < 1) fail_usage("build_dataset: need at least one volume");
  Dataset ds;
  ds.regime = regime;
  ds.seed = seed;
  ds.d = d;
  ds.h = h;
  ds.w = w;
  const auto cells = regime_grid(regime);
  const bool held_out = regime == Regime::train_mixed || regime == Regime::regime_a;
  for (int i = 0; i < n_volumes; ++i) {
    const auto index = static_cast<std::uint64_t>(i);
    const std::uint64_t phantom_seed = derive_seed(seed, index, 0);
    ds.truths.push_back(generate_mixed_phantom(d, h, w, phantom_seed));
    std::string split = "test";
    if (held_out) split = (n_volumes >= 2 && i == n_volumes - 1) ? "val" : "train";
    for (std::size_t c = 0; c < cells.size(); ++c) {
      DatasetEntry e;
      e.phantom_index = static_cast<std::size_t>(i);
      e.phantom_seed = phantom_seed;
      e.degradation = cells[c];
      e.degradation.seed = derive_seed(seed, index, c + 1);
      e.split = split;
      ds.degraded.push_back(degrade(ds.truths.back(), e.degradation));
      ds.entries.push_back(std::move(e));
    }
  }
  return ds;
}

}  // namespace lucyd
