#pragma once

#include <string>

#include "lucyd/tape.hpp"
#include "lucyd/volume.hpp"

namespace lucyd {

enum class Padding { same_zero, valid };
enum class EwiseOp { add, mul, div_guarded };

/// Denominator clamp used by every guarded division.
inline constexpr double kDivEps = 1e-6;
inline constexpr double kLeakySlope = 0.1;

Shape conv3d_output_shape(const Shape& in, int c_out, int kd, int kh, int kw,
                          int stride, Padding pad);

// Plain evaluation. These are the kernels the taped versions run forward.

template <typename T>
BasicVolume<T> conv3d(const BasicVolume<T>& x, const Kernel3d<T>& k,
                      int stride = 1, Padding pad = Padding::same_zero);

/// Accumulates d(loss)/dx into `grad_x` and d(loss)/dk into `grad_k`; either
/// may be null.
template <typename T>
void conv3d_backward(const BasicVolume<T>& x, const Kernel3d<T>& k, int stride,
                     Padding pad, const BasicVolume<T>& grad_out,
                     BasicVolume<T>* grad_x, Kernel3d<T>* grad_k);

template <typename T>
BasicVolume<T> upsample_nearest2x(const BasicVolume<T>& x);

template <typename T>
BasicVolume<T> concat_channels(const BasicVolume<T>& a, const BasicVolume<T>& b);

template <typename T>
BasicVolume<T> slice_channels(const BasicVolume<T>& x, int begin, int count);

template <typename T>
BasicVolume<T> ewise(EwiseOp op, const BasicVolume<T>& a,
                     const BasicVolume<T>& b, double eps = kDivEps);

template <typename T>
BasicVolume<T> leaky_relu(const BasicVolume<T>& x, double slope = kLeakySlope);

/// log(1 + exp(x)), evaluated without overflow.
template <typename T>
BasicVolume<T> softplus(const BasicVolume<T>& x);

template <typename T>
BasicVolume<T> channel_mean(const BasicVolume<T>& x);

template <typename T>
double sum(const BasicVolume<T>& x);

template <typename T>
double mse(const BasicVolume<T>& a, const BasicVolume<T>& b);

// Taped versions. Each appends one record and returns its output id.

template <typename T>
VarId conv3d(Tape<T>& tape, VarId x, ParamId k, int stride = 1,
             Padding pad = Padding::same_zero, std::string label = {});

template <typename T>
VarId upsample_nearest2x(Tape<T>& tape, VarId x, std::string label = {});

template <typename T>
VarId concat_channels(Tape<T>& tape, VarId a, VarId b, std::string label = {});

template <typename T>
VarId slice_channels(Tape<T>& tape, VarId x, int begin, int count);

template <typename T>
VarId ewise(Tape<T>& tape, EwiseOp op, VarId a, VarId b, double eps = kDivEps,
            std::string label = {});

template <typename T>
VarId leaky_relu(Tape<T>& tape, VarId x, double slope = kLeakySlope,
                 std::string label = {});

template <typename T>
VarId softplus(Tape<T>& tape, VarId x, std::string label = {});

template <typename T>
VarId channel_mean(Tape<T>& tape, VarId x, std::string label = {});

template <typename T>
VarId sum(Tape<T>& tape, VarId x);

template <typename T>
VarId mean(Tape<T>& tape, VarId x);

template <typename T>
VarId mse(Tape<T>& tape, VarId a, VarId b);

}  // namespace lucyd
