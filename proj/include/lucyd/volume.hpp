#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lucyd/error.hpp"

namespace lucyd {

/// Extent of a rank-4 volume in CDHW order.
struct Shape {
  int c = 1;
  int d = 1;
  int h = 1;
  int w = 1;

  std::size_t spatial() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t numel() const { return static_cast<std::size_t>(c) * spatial(); }
  bool same_spatial(const Shape& o) const {
    return d == o.d && h == o.h && w == o.w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(c) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Dense CDHW volume. `Volume` (float) is the storage type; `VolumeD` is the
/// 64-bit shadow used by gradient checks.
template <typename T>
class BasicVolume {
 public:
  using value_type = T;

  BasicVolume() = default;

  explicit BasicVolume(Shape shape, T fill = T(0))
      : shape_(validated(shape)), data_(shape.numel(), fill) {}

  BasicVolume(Shape shape, std::vector<T> data)
      : shape_(validated(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      fail_usage("volume data length " + std::to_string(data_.size()) +
                 " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t index(int c, int z, int y, int x) const {
    return ((static_cast<std::size_t>(c) * shape_.d + z) * shape_.h + y) *
               shape_.w +
           x;
  }
  T& at(int c, int z, int y, int x) { return data_[index(c, z, y, x)]; }
  T at(int c, int z, int y, int x) const { return data_[index(c, z, y, x)]; }

  std::span<T> channel(int c) {
    return std::span<T>(data_).subspan(c * shape_.spatial(), shape_.spatial());
  }
  std::span<const T> channel(int c) const {
    return std::span<const T>(data_).subspan(c * shape_.spatial(),
                                             shape_.spatial());
  }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  template <typename U>
  BasicVolume<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicVolume<U>(shape_, std::move(out));
  }

  bool operator==(const BasicVolume&) const = default;

 private:
  static Shape validated(Shape s) {
    if (s.c <= 0 || s.d <= 0 || s.h <= 0 || s.w <= 0) {
      fail_usage("volume shape must be positive, got " + s.str());
    }
    return s;
  }

  Shape shape_{};
  std::vector<T> data_;
};

using Volume = BasicVolume<float>;
using VolumeD = BasicVolume<double>;

/// Learnable 3D convolution kernel, weights laid out (c_out, c_in, kd, kh, kw).
template <typename T>
struct Kernel3d {
  int c_out = 0;
  int c_in = 0;
  int kd = 1;
  int kh = 1;
  int kw = 1;
  std::vector<T> weights;
  std::vector<T> bias;

  Kernel3d() = default;
  Kernel3d(int out, int in, int d, int h, int w)
      : c_out(out), c_in(in), kd(d), kh(h), kw(w),
        weights(static_cast<std::size_t>(out) * in * d * h * w, T(0)),
        bias(static_cast<std::size_t>(out), T(0)) {
    if (out <= 0 || in <= 0 || d <= 0 || h <= 0 || w <= 0) {
      fail_usage("kernel dimensions must be positive");
    }
  }

  std::size_t taps() const { return static_cast<std::size_t>(kd) * kh * kw; }
  std::size_t param_count() const { return weights.size() + bias.size(); }

  std::size_t index(int o, int i, int z, int y, int x) const {
    return (((static_cast<std::size_t>(o) * c_in + i) * kd + z) * kh + y) *
               kw +
           x;
  }
  T& weight(int o, int i, int z, int y, int x) {
    return weights[index(o, i, z, y, x)];
  }
  T weight(int o, int i, int z, int y, int x) const {
    return weights[index(o, i, z, y, x)];
  }

  template <typename U>
  Kernel3d<U> cast() const {
    Kernel3d<U> k;
    k.c_out = c_out;
    k.c_in = c_in;
    k.kd = kd;
    k.kh = kh;
    k.kw = kw;
    k.weights.assign(weights.begin(), weights.end());
    k.bias.assign(bias.begin(), bias.end());
    return k;
  }

  bool operator==(const Kernel3d&) const = default;
};

}  // namespace lucyd
