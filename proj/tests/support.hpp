#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "lucyd/volume.hpp"

namespace lucyd::test {

template <typename T = float>
BasicVolume<T> random_volume(Shape s, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  BasicVolume<T> v(s);
  for (auto& x : v.storage()) x = static_cast<T>(u(rng));
  return v;
}

template <typename T = float>
Kernel3d<T> random_kernel(int out, int in, int kd, int kh, int kw,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Kernel3d<T> k(out, in, kd, kh, kw);
  for (auto& x : k.weights) x = static_cast<T>(u(rng));
  for (auto& x : k.bias) x = static_cast<T>(u(rng));
  return k;
}

template <typename T>
double max_abs_diff(const BasicVolume<T>& a, const BasicVolume<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("lucyd_test_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace lucyd::test
