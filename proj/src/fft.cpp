#include "fft.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>

#include "lucyd/error.hpp"

namespace lucyd::detail {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft3d::RealFft3d(int d, int h, int w)
    : d_(d), h_(h), w_(w),
      real_size_(static_cast<std::size_t>(d) * h * w),
      complex_size_(static_cast<std::size_t>(d) * h * (w / 2 + 1)) {
  real_buf_ = fftw_alloc_real(real_size_);
  complex_buf_ = fftw_alloc_complex(complex_size_);
  if (real_buf_ == nullptr || complex_buf_ == nullptr) {
    fftw_free(real_buf_);
    fftw_free(complex_buf_);
    fail_data("fft: allocation failed");
  }
  std::lock_guard lock(planner_mutex());
  forward_plan_ = fftw_plan_dft_r2c_3d(d_, h_, w_, real_buf_, complex_buf_,
                                       FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_3d(d_, h_, w_, complex_buf_, real_buf_,
                                       FFTW_ESTIMATE);
}

RealFft3d::~RealFft3d() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(forward_plan_);
  fftw_destroy_plan(inverse_plan_);
  fftw_free(real_buf_);
  fftw_free(complex_buf_);
}

std::vector<std::complex<double>> RealFft3d::forward(
    const std::vector<double>& in) {
  std::copy(in.begin(), in.end(), real_buf_);
  fftw_execute(forward_plan_);
  std::vector<std::complex<double>> out(complex_size_);
  std::memcpy(static_cast<void*>(out.data()), complex_buf_,
              complex_size_ * sizeof(fftw_complex));
  return out;
}

std::vector<double> RealFft3d::inverse(
    const std::vector<std::complex<double>>& in) {
  // c2r overwrites its input, so it always runs on the internal copy.
  std::memcpy(complex_buf_, in.data(), complex_size_ * sizeof(fftw_complex));
  fftw_execute(inverse_plan_);
  const double scale = 1.0 / static_cast<double>(real_size_);
  std::vector<double> out(real_size_);
  for (std::size_t i = 0; i < real_size_; ++i) out[i] = real_buf_[i] * scale;
  return out;
}

}  // namespace lucyd::detail
