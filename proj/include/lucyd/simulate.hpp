#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lucyd/classic.hpp"
#include "lucyd/volume.hpp"

namespace lucyd {

enum class PhantomKind { dots, spheres, shells };

std::string to_string(PhantomKind kind);
PhantomKind phantom_kind_from_string(const std::string& name);

/// One family of synthetic objects placed without overlap into a zero
/// background. Radii are in voxels: ball radius for spheres, semi-axis range
/// for shells, and unused for dots.
struct PhantomSpec {
  PhantomKind kind = PhantomKind::spheres;
  int d = 64;
  int h = 64;
  int w = 64;
  int count = 1;
  double radius_min = 2.0;
  double radius_max = 6.0;
  double intensity_min = 128.0;
  double intensity_max = 255.0;
  /// Dots only: paint a 3-voxel-wide Gaussian blob instead of one voxel.
  bool gaussian_dots = false;
  std::uint64_t seed = 0;
  /// Placement attempts allowed per object before giving up.
  int retry_budget = 1000;

  bool operator==(const PhantomSpec&) const = default;
};

/// Default object counts per 128^3 volume, scaled by volume for other shapes.
inline constexpr int kDefaultDotsPer128 = 200;
inline constexpr int kDefaultSpheresPer128 = 80;
inline constexpr int kDefaultShellsPer128 = 5;

PhantomSpec default_phantom_spec(PhantomKind kind, int d, int h, int w,
                                 std::uint64_t seed);

Volume generate_phantom(const PhantomSpec& spec);

/// Dots, spheres and shells at their default densities composed into one
/// volume. Each family draws from its own stream derived from `seed`.
Volume generate_mixed_phantom(int d, int h, int w, std::uint64_t seed);

/// Blur and additive noise. `sigma_b` is the lateral (y, x) blur; the axial
/// blur equals it unless `sigma_b_axial` is set. `sigma_n` is on the 0-255
/// intensity scale.
struct DegradationSpec {
  double sigma_b = 0.0;
  std::optional<double> sigma_b_axial;
  double sigma_n = 0.0;
  std::uint64_t seed = 0;

  double axial() const { return sigma_b_axial.value_or(sigma_b); }
  bool operator==(const DegradationSpec&) const = default;
};

/// Gaussian PSF of the degradation, radius ceil(3 sigma) per axis.
Psf degradation_psf(const DegradationSpec& spec);

/// y = x * K + n, clamped at zero. Identity when both sigmas are zero.
Volume degrade(const Volume& x, const DegradationSpec& spec);

struct VolumePair {
  Volume degraded;
  Volume truth;
};

struct PatchShape {
  int d = 32;
  int h = 64;
  int w = 64;

  bool operator==(const PatchShape&) const = default;
};

struct PatchSample {
  std::size_t pair_index = 0;
  int z = 0;
  int y = 0;
  int x = 0;
  VolumePair patch;
};

Volume crop(const Volume& v, int z, int y, int x, const PatchShape& patch);

/// `n` aligned random crops; the same offsets are applied to both volumes of
/// a pair.
std::vector<PatchSample> sample_patches(std::span<const VolumePair> pairs,
                                        const PatchShape& patch, int n,
                                        std::uint64_t seed);

enum class Regime { train_mixed, test_grid, regime_a, regime_b };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);

/// The degradation cells of a regime (seeds left at zero).
std::vector<DegradationSpec> regime_grid(Regime regime);

struct DatasetEntry {
  std::size_t phantom_index = 0;
  std::uint64_t phantom_seed = 0;
  DegradationSpec degradation;
  std::string split;
};

/// Ground truths are mixed phantoms; every entry pairs one of them with one
/// degradation cell.
struct Dataset {
  Regime regime = Regime::train_mixed;
  std::uint64_t seed = 0;
  int d = 64;
  int h = 64;
  int w = 64;
  std::vector<Volume> truths;
  std::vector<DatasetEntry> entries;
  std::vector<Volume> degraded;
};

/// Stream seed for item `index` of a run seeded with `seed`, so items can be
/// generated independently of each other.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                          std::uint64_t salt = 0);

Dataset build_dataset(Regime regime, int n_volumes, int d, int h, int w,
                      std::uint64_t seed);

}  // namespace lucyd
