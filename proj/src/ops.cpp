#include "lucyd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace lucyd {

namespace {

// Output indices o along one axis for which stride*o + offset lands inside
// [0, n_in). Half-open.
struct AxisRange {
  int lo = 0;
  int hi = 0;
};

AxisRange tap_range(int n_in, int n_out, int stride, int offset) {
  AxisRange r;
  r.lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int last = n_in - 1 - offset;
  r.hi = last < 0 ? 0 : std::min(n_out, last / stride + 1);
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

struct ConvGeometry {
  Shape in;
  Shape out;
  int stride = 1;
  int pad_d = 0;
  int pad_h = 0;
  int pad_w = 0;
};

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const Kernel3d<T>& k, int stride,
                           Padding pad) {
  if (in.c != k.c_in) {
    fail_usage("conv3d: input has " + std::to_string(in.c) +
               " channels but kernel expects " + std::to_string(k.c_in));
  }
  if (k.weights.size() != static_cast<std::size_t>(k.c_out) * k.c_in * k.taps() ||
      k.bias.size() != static_cast<std::size_t>(k.c_out)) {
    fail_usage("conv3d: kernel storage does not match its declared shape");
  }
  ConvGeometry g;
  g.in = in;
  g.out = conv3d_output_shape(in, k.c_out, k.kd, k.kh, k.kw, stride, pad);
  g.stride = stride;
  if (pad == Padding::same_zero) {
    g.pad_d = (k.kd - 1) / 2;
    g.pad_h = (k.kh - 1) / 2;
    g.pad_w = (k.kw - 1) / 2;
  }
  return g;
}

std::size_t row_start(const Shape& s, int c, int z, int y) {
  return ((static_cast<std::size_t>(c) * s.d + z) * s.h + y) *
         static_cast<std::size_t>(s.w);
}

template <typename T>
void require_same_shape(const BasicVolume<T>& a, const BasicVolume<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    fail_usage(std::string(op) + ": shape mismatch " + a.shape().str() +
               " vs " + b.shape().str());
  }
}

template <typename T>
BasicVolume<T> scalar(double v) {
  return BasicVolume<T>(Shape{1, 1, 1, 1}, static_cast<T>(v));
}

}  // namespace

Shape conv3d_output_shape(const Shape& in, int c_out, int kd, int kh, int kw,
                          int stride, Padding pad) {
  if (stride != 1 && stride != 2) {
    fail_usage("conv3d: stride must be 1 or 2, got " + std::to_string(stride));
  }
  Shape out{c_out, 0, 0, 0};
  if (pad == Padding::same_zero) {
    if (kd % 2 == 0 || kh % 2 == 0 || kw % 2 == 0) {
      fail_usage("conv3d: same padding requires odd kernel dimensions");
    }
    out.d = (in.d + stride - 1) / stride;
    out.h = (in.h + stride - 1) / stride;
    out.w = (in.w + stride - 1) / stride;
  } else {
    if (in.d < kd || in.h < kh || in.w < kw) {
      fail_usage("conv3d: valid padding needs input " + in.str() +
                 " at least as large as the kernel");
    }
    out.d = (in.d - kd) / stride + 1;
    out.h = (in.h - kh) / stride + 1;
    out.w = (in.w - kw) / stride + 1;
  }
  return out;
}

namespace {

// Row kernels. `w` holds the kw taps of one (o, i, tz, ty) kernel row; `off0`
// is the input offset of tap 0 relative to stride*x.

template <typename T>
void forward_row(T* __restrict out, const T* __restrict in, const T* w, int kw,
                 int n_out, int n_in, int stride, int off0) {
  if (stride == 1 && kw == 3 && off0 == -1 && n_out == n_in && n_in >= 2) {
    const T w0 = w[0], w1 = w[1], w2 = w[2];
    out[0] += w1 * in[0] + w2 * in[1];
    for (int x = 1; x < n_out - 1; ++x) {
      out[x] += w0 * in[x - 1] + w1 * in[x] + w2 * in[x + 1];
    }
    out[n_out - 1] += w0 * in[n_in - 2] + w1 * in[n_in - 1];
    return;
  }
  for (int tx = 0; tx < kw; ++tx) {
    const int off = off0 + tx;
    const AxisRange r = tap_range(n_in, n_out, stride, off);
    const T wt = w[tx];
    if (stride == 1) {
      for (int x = r.lo; x < r.hi; ++x) out[x] += wt * in[x + off];
    } else {
      for (int x = r.lo; x < r.hi; ++x) out[x] += wt * in[2 * x + off];
    }
  }
}

template <typename T>
void backward_input_row(T* __restrict gin, const T* __restrict gout,
                        const T* w, int kw, int n_out, int n_in, int stride,
                        int off0) {
  if (stride == 1 && kw == 3 && off0 == -1 && n_out == n_in && n_in >= 2) {
    const T w0 = w[0], w1 = w[1], w2 = w[2];
    gin[0] += w1 * gout[0] + w0 * gout[1];
    for (int x = 1; x < n_in - 1; ++x) {
      gin[x] += w2 * gout[x - 1] + w1 * gout[x] + w0 * gout[x + 1];
    }
    gin[n_in - 1] += w2 * gout[n_out - 2] + w1 * gout[n_out - 1];
    return;
  }
  for (int tx = 0; tx < kw; ++tx) {
    const int off = off0 + tx;
    const AxisRange r = tap_range(n_in, n_out, stride, off);
    const T wt = w[tx];
    if (stride == 1) {
      for (int x = r.lo; x < r.hi; ++x) gin[x + off] += wt * gout[x];
    } else {
      for (int x = r.lo; x < r.hi; ++x) gin[2 * x + off] += wt * gout[x];
    }
  }
}

// Accumulates gout[x] * in[stride*x + off0 + tx] into lanes[tx * n_out + x].
template <typename T>
void weight_row(T* __restrict lanes, const T* __restrict gout,
                const T* __restrict in, int kw, int n_out, int n_in,
                int stride, int off0) {
  if (stride == 1 && kw == 3 && off0 == -1 && n_out == n_in && n_in >= 2) {
    T* __restrict l0 = lanes;
    T* __restrict l1 = lanes + n_out;
    T* __restrict l2 = lanes + 2 * n_out;
    l1[0] += gout[0] * in[0];
    l2[0] += gout[0] * in[1];
    for (int x = 1; x < n_out - 1; ++x) {
      l0[x] += gout[x] * in[x - 1];
      l1[x] += gout[x] * in[x];
      l2[x] += gout[x] * in[x + 1];
    }
    l0[n_out - 1] += gout[n_out - 1] * in[n_in - 2];
    l1[n_out - 1] += gout[n_out - 1] * in[n_in - 1];
    return;
  }
  for (int tx = 0; tx < kw; ++tx) {
    const int off = off0 + tx;
    const AxisRange r = tap_range(n_in, n_out, stride, off);
    T* __restrict l = lanes + static_cast<std::size_t>(tx) * n_out;
    if (stride == 1) {
      for (int x = r.lo; x < r.hi; ++x) l[x] += gout[x] * in[x + off];
    } else {
      for (int x = r.lo; x < r.hi; ++x) l[x] += gout[x] * in[2 * x + off];
    }
  }
}

}  // namespace

template <typename T>
BasicVolume<T> conv3d(const BasicVolume<T>& x, const Kernel3d<T>& k,
                      int stride, Padding pad) {
  const ConvGeometry g = conv_geometry(x.shape(), k, stride, pad);
  BasicVolume<T> out(g.out);
  const T* src = x.data().data();
  T* dst = out.data().data();

  for (int o = 0; o < g.out.c; ++o) {
    std::fill(out.channel(o).begin(), out.channel(o).end(), k.bias[o]);
    for (int i = 0; i < g.in.c; ++i) {
      for (int tz = 0; tz < k.kd; ++tz) {
        const AxisRange rz = tap_range(g.in.d, g.out.d, stride, tz - g.pad_d);
        for (int ty = 0; ty < k.kh; ++ty) {
          const AxisRange ry =
              tap_range(g.in.h, g.out.h, stride, ty - g.pad_h);
          const T* w = &k.weights[k.index(o, i, tz, ty, 0)];
          for (int z = rz.lo; z < rz.hi; ++z) {
            const int zi = stride * z + tz - g.pad_d;
            for (int y = ry.lo; y < ry.hi; ++y) {
              const int yi = stride * y + ty - g.pad_h;
              forward_row(dst + row_start(g.out, o, z, y),
                          src + row_start(g.in, i, zi, yi), w, k.kw, g.out.w,
                          g.in.w, stride, -g.pad_w);
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv3d_backward(const BasicVolume<T>& x, const Kernel3d<T>& k, int stride,
                     Padding pad, const BasicVolume<T>& grad_out,
                     BasicVolume<T>* grad_x, Kernel3d<T>* grad_k) {
  const ConvGeometry g = conv_geometry(x.shape(), k, stride, pad);
  if (grad_out.shape() != g.out) {
    fail_usage("conv3d backward: gradient shape " + grad_out.shape().str() +
               " does not match output " + g.out.str());
  }
  const T* src = x.data().data();
  const T* gout = grad_out.data().data();

  if (grad_x != nullptr) {
    if (grad_x->shape() != g.in) {
      fail_usage("conv3d backward: input gradient has the wrong shape");
    }
    T* gin = grad_x->data().data();
    for (int i = 0; i < g.in.c; ++i) {
      for (int o = 0; o < g.out.c; ++o) {
        for (int tz = 0; tz < k.kd; ++tz) {
          const AxisRange rz =
              tap_range(g.in.d, g.out.d, stride, tz - g.pad_d);
          for (int ty = 0; ty < k.kh; ++ty) {
            const AxisRange ry =
                tap_range(g.in.h, g.out.h, stride, ty - g.pad_h);
            const T* w = &k.weights[k.index(o, i, tz, ty, 0)];
            for (int z = rz.lo; z < rz.hi; ++z) {
              const int zi = stride * z + tz - g.pad_d;
              for (int y = ry.lo; y < ry.hi; ++y) {
                const int yi = stride * y + ty - g.pad_h;
                backward_input_row(gin + row_start(g.in, i, zi, yi),
                                   gout + row_start(g.out, o, z, y), w, k.kw,
                                   g.out.w, g.in.w, stride, -g.pad_w);
              }
            }
          }
        }
      }
    }
  }

  if (grad_k != nullptr) {
    // Per-lane partial sums keep the reduction vectorizable and its order
    // fixed.
    std::vector<T> lanes(static_cast<std::size_t>(g.out.w) * k.kw);
    for (int o = 0; o < g.out.c; ++o) {
      T bias_acc = T(0);
      for (T v : grad_out.channel(o)) bias_acc += v;
      grad_k->bias[o] += bias_acc;
      for (int i = 0; i < g.in.c; ++i) {
        for (int tz = 0; tz < k.kd; ++tz) {
          const AxisRange rz =
              tap_range(g.in.d, g.out.d, stride, tz - g.pad_d);
          for (int ty = 0; ty < k.kh; ++ty) {
            const AxisRange ry =
                tap_range(g.in.h, g.out.h, stride, ty - g.pad_h);
            std::fill(lanes.begin(), lanes.end(), T(0));
            for (int z = rz.lo; z < rz.hi; ++z) {
              const int zi = stride * z + tz - g.pad_d;
              for (int y = ry.lo; y < ry.hi; ++y) {
                const int yi = stride * y + ty - g.pad_h;
                weight_row(lanes.data(), gout + row_start(g.out, o, z, y),
                           src + row_start(g.in, i, zi, yi), k.kw, g.out.w,
                           g.in.w, stride, -g.pad_w);
              }
            }
            for (int tx = 0; tx < k.kw; ++tx) {
              T acc = T(0);
              const T* l = lanes.data() + static_cast<std::size_t>(tx) * g.out.w;
              for (int xo = 0; xo < g.out.w; ++xo) acc += l[xo];
              grad_k->weight(o, i, tz, ty, tx) += acc;
            }
          }
        }
      }
    }
  }
}

template <typename T>
BasicVolume<T> upsample_nearest2x(const BasicVolume<T>& x) {
  const Shape s = x.shape();
  BasicVolume<T> out(Shape{s.c, 2 * s.d, 2 * s.h, 2 * s.w});
  for (int c = 0; c < s.c; ++c) {
    for (int z = 0; z < 2 * s.d; ++z) {
      for (int y = 0; y < 2 * s.h; ++y) {
        const std::size_t src = x.index(c, z / 2, y / 2, 0);
        const std::size_t dst = out.index(c, z, y, 0);
        for (int xx = 0; xx < 2 * s.w; ++xx) {
          out[dst + xx] = x[src + xx / 2];
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicVolume<T> concat_channels(const BasicVolume<T>& a,
                               const BasicVolume<T>& b) {
  if (!a.shape().same_spatial(b.shape())) {
    fail_usage("concat_channels: spatial mismatch " + a.shape().str() +
               " vs " + b.shape().str());
  }
  Shape s = a.shape();
  s.c = a.shape().c + b.shape().c;
  std::vector<T> data;
  data.reserve(s.numel());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return BasicVolume<T>(s, std::move(data));
}

template <typename T>
BasicVolume<T> slice_channels(const BasicVolume<T>& x, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > x.shape().c) {
    fail_usage("slice_channels: range [" + std::to_string(begin) + ", " +
               std::to_string(begin + count) + ") outside " +
               x.shape().str());
  }
  Shape s = x.shape();
  s.c = count;
  const auto first = x.data().begin() + static_cast<std::ptrdiff_t>(
                                            begin * x.shape().spatial());
  return BasicVolume<T>(
      s, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(s.numel())));
}

template <typename T>
BasicVolume<T> ewise(EwiseOp op, const BasicVolume<T>& a,
                     const BasicVolume<T>& b, double eps) {
  require_same_shape(a, b, "ewise");
  if (op == EwiseOp::div_guarded && !(eps > 0)) {
    fail_usage("ewise: div_guarded needs a positive eps");
  }
  BasicVolume<T> out(a.shape());
  const T e = static_cast<T>(eps);
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (op) {
      case EwiseOp::add: out[i] = a[i] + b[i]; break;
      case EwiseOp::mul: out[i] = a[i] * b[i]; break;
      case EwiseOp::div_guarded: out[i] = a[i] / std::max(b[i], e); break;
    }
  }
  return out;
}

template <typename T>
BasicVolume<T> leaky_relu(const BasicVolume<T>& x, double slope) {
  BasicVolume<T> out(x.shape());
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] >= T(0) ? x[i] : s * x[i];
  }
  return out;
}

template <typename T>
BasicVolume<T> softplus(const BasicVolume<T>& x) {
  BasicVolume<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    out[i] = static_cast<T>(std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))));
  }
  return out;
}

template <typename T>
BasicVolume<T> channel_mean(const BasicVolume<T>& x) {
  const Shape s = x.shape();
  BasicVolume<T> out(Shape{1, s.d, s.h, s.w});
  auto dst = out.data();
  for (int c = 0; c < s.c; ++c) {
    auto src = x.channel(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  const T inv = T(1) / static_cast<T>(s.c);
  for (T& v : dst) v *= inv;
  return out;
}

template <typename T>
double sum(const BasicVolume<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double mse(const BasicVolume<T>& a, const BasicVolume<T>& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

// Taped versions.

template <typename T>
VarId conv3d(Tape<T>& tape, VarId x, ParamId k, int stride, Padding pad,
             std::string label) {
  BasicVolume<T> out = conv3d(tape.value(x), tape.kernel(k), stride, pad);
  return tape.record(
      OpKind::conv3d, std::move(out), {x}, {k},
      [x, k, stride, pad](Tape<T>& t, const BasicVolume<T>& g) {
        BasicVolume<T>* gx = t.requires_grad(x) ? &t.grad_buffer(x) : nullptr;
        conv3d_backward(t.value(x), t.kernel(k), stride, pad, g, gx,
                        &t.param_grad_buffer(k));
      },
      std::move(label));
}

template <typename T>
VarId upsample_nearest2x(Tape<T>& tape, VarId x, std::string label) {
  BasicVolume<T> out = upsample_nearest2x(tape.value(x));
  return tape.record(
      OpKind::upsample_nearest2x, std::move(out), {x}, {},
      [x](Tape<T>& t, const BasicVolume<T>& g) {
        BasicVolume<T>& gx = t.grad_buffer(x);
        const Shape s = gx.shape();
        for (int c = 0; c < s.c; ++c) {
          for (int z = 0; z < 2 * s.d; ++z) {
            for (int y = 0; y < 2 * s.h; ++y) {
              const std::size_t dst = gx.index(c, z / 2, y / 2, 0);
              const std::size_t src = g.index(c, z, y, 0);
              for (int xx = 0; xx < 2 * s.w; ++xx) {
                gx[dst + xx / 2] += g[src + xx];
              }
            }
          }
        }
      },
      std::move(label));
}

template <typename T>
VarId concat_channels(Tape<T>& tape, VarId a, VarId b, std::string label) {
  BasicVolume<T> out = concat_channels(tape.value(a), tape.value(b));
  return tape.record(
      OpKind::concat_channels, std::move(out), {a, b}, {},
      [a, b](Tape<T>& t, const BasicVolume<T>& g) {
        const std::size_t na = t.value(a).size();
        if (t.requires_grad(a)) {
          auto ga = t.grad_buffer(a).data();
          for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
          auto gb = t.grad_buffer(b).data();
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        }
      },
      std::move(label));
}

template <typename T>
VarId slice_channels(Tape<T>& tape, VarId x, int begin, int count) {
  BasicVolume<T> out = slice_channels(tape.value(x), begin, count);
  return tape.record(
      OpKind::slice_channels, std::move(out), {x}, {},
      [x, begin](Tape<T>& t, const BasicVolume<T>& g) {
        auto gx = t.grad_buffer(x).data();
        const std::size_t base = begin * t.value(x).shape().spatial();
        for (std::size_t i = 0; i < g.size(); ++i) gx[base + i] += g[i];
      });
}

template <typename T>
VarId ewise(Tape<T>& tape, EwiseOp op, VarId a, VarId b, double eps,
            std::string label) {
  BasicVolume<T> out = ewise(op, tape.value(a), tape.value(b), eps);
  const OpKind kind = op == EwiseOp::add   ? OpKind::add
                      : op == EwiseOp::mul ? OpKind::mul
                                           : OpKind::div_guarded;
  return tape.record(
      kind, std::move(out), {a, b}, {},
      [op, a, b, eps](Tape<T>& t, const BasicVolume<T>& g) {
        const BasicVolume<T>& va = t.value(a);
        const BasicVolume<T>& vb = t.value(b);
        const T e = static_cast<T>(eps);
        if (t.requires_grad(a)) {
          auto ga = t.grad_buffer(a).data();
          for (std::size_t i = 0; i < ga.size(); ++i) {
            switch (op) {
              case EwiseOp::add: ga[i] += g[i]; break;
              case EwiseOp::mul: ga[i] += g[i] * vb[i]; break;
              case EwiseOp::div_guarded:
                ga[i] += g[i] / std::max(vb[i], e);
                break;
            }
          }
        }
        if (t.requires_grad(b)) {
          auto gb = t.grad_buffer(b).data();
          for (std::size_t i = 0; i < gb.size(); ++i) {
            switch (op) {
              case EwiseOp::add: gb[i] += g[i]; break;
              case EwiseOp::mul: gb[i] += g[i] * va[i]; break;
              case EwiseOp::div_guarded:
                // Clamped denominators pass no gradient.
                if (vb[i] > e) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                break;
            }
          }
        }
      },
      std::move(label));
}

template <typename T>
VarId leaky_relu(Tape<T>& tape, VarId x, double slope, std::string label) {
  BasicVolume<T> out;
  if (const std::vector<char>* branch = tape.frozen_branches(tape.size())) {
    out = tape.value(x);
    if (branch->size() != out.size()) {
      fail_usage("frozen branch pattern does not match the leaky_relu input");
    }
    const T s = static_cast<T>(slope);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!(*branch)[i]) out[i] *= s;
    }
  } else {
    out = leaky_relu(tape.value(x), slope);
  }
  return tape.record(
      OpKind::leaky_relu, std::move(out), {x}, {},
      [x, slope](Tape<T>& t, const BasicVolume<T>& g) {
        const BasicVolume<T>& vx = t.value(x);
        auto gx = t.grad_buffer(x).data();
        const T s = static_cast<T>(slope);
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] += vx[i] >= T(0) ? g[i] : s * g[i];
        }
      },
      std::move(label));
}

template <typename T>
VarId softplus(Tape<T>& tape, VarId x, std::string label) {
  BasicVolume<T> out = softplus(tape.value(x));
  return tape.record(
      OpKind::softplus, std::move(out), {x}, {},
      [x](Tape<T>& t, const BasicVolume<T>& g) {
        const BasicVolume<T>& vx = t.value(x);
        auto gx = t.grad_buffer(x).data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(vx[i])));
          gx[i] += static_cast<T>(static_cast<double>(g[i]) * sig);
        }
      },
      std::move(label));
}

template <typename T>
VarId channel_mean(Tape<T>& tape, VarId x, std::string label) {
  BasicVolume<T> out = channel_mean(tape.value(x));
  return tape.record(
      OpKind::channel_mean, std::move(out), {x}, {},
      [x](Tape<T>& t, const BasicVolume<T>& g) {
        BasicVolume<T>& gx = t.grad_buffer(x);
        const int c = gx.shape().c;
        const T inv = T(1) / static_cast<T>(c);
        for (int ch = 0; ch < c; ++ch) {
          auto dst = gx.channel(ch);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * inv;
        }
      },
      std::move(label));
}

template <typename T>
VarId sum(Tape<T>& tape, VarId x) {
  return tape.record(OpKind::sum, scalar<T>(sum(tape.value(x))), {x}, {},
                     [x](Tape<T>& t, const BasicVolume<T>& g) {
                       for (T& v : t.grad_buffer(x).data()) v += g[0];
                     });
}

template <typename T>
VarId mean(Tape<T>& tape, VarId x) {
  const double n = static_cast<double>(tape.value(x).size());
  return tape.record(OpKind::mean, scalar<T>(sum(tape.value(x)) / n), {x}, {},
                     [x, n](Tape<T>& t, const BasicVolume<T>& g) {
                       const T share = static_cast<T>(g[0] / n);
                       for (T& v : t.grad_buffer(x).data()) v += share;
                     });
}

template <typename T>
VarId mse(Tape<T>& tape, VarId a, VarId b) {
  const double value = mse(tape.value(a), tape.value(b));
  return tape.record(
      OpKind::mse, scalar<T>(value), {a, b}, {},
      [a, b](Tape<T>& t, const BasicVolume<T>& g) {
        const BasicVolume<T>& va = t.value(a);
        const BasicVolume<T>& vb = t.value(b);
        const T scale = static_cast<T>(2.0 * g[0] / static_cast<double>(va.size()));
        if (t.requires_grad(a)) {
          auto ga = t.grad_buffer(a).data();
          for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += scale * (va[i] - vb[i]);
          }
        }
        if (t.requires_grad(b)) {
          auto gb = t.grad_buffer(b).data();
          for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] -= scale * (va[i] - vb[i]);
          }
        }
      });
}

#define LUCYD_INSTANTIATE_OPS(T)                                               \
  template BasicVolume<T> conv3d(const BasicVolume<T>&, const Kernel3d<T>&,    \
                                 int, Padding);                                \
  template void conv3d_backward(const BasicVolume<T>&, const Kernel3d<T>&,     \
                                int, Padding, const BasicVolume<T>&,           \
                                BasicVolume<T>*, Kernel3d<T>*);                \
  template BasicVolume<T> upsample_nearest2x(const BasicVolume<T>&);           \
  template BasicVolume<T> concat_channels(const BasicVolume<T>&,               \
                                          const BasicVolume<T>&);              \
  template BasicVolume<T> slice_channels(const BasicVolume<T>&, int, int);     \
  template BasicVolume<T> ewise(EwiseOp, const BasicVolume<T>&,                \
                                const BasicVolume<T>&, double);                \
  template BasicVolume<T> leaky_relu(const BasicVolume<T>&, double);           \
  template BasicVolume<T> softplus(const BasicVolume<T>&);                     \
  template BasicVolume<T> channel_mean(const BasicVolume<T>&);                 \
  template double sum(const BasicVolume<T>&);                                  \
  template double mse(const BasicVolume<T>&, const BasicVolume<T>&);           \
  template VarId conv3d(Tape<T>&, VarId, ParamId, int, Padding, std::string);  \
  template VarId upsample_nearest2x(Tape<T>&, VarId, std::string);             \
  template VarId concat_channels(Tape<T>&, VarId, VarId, std::string);         \
  template VarId slice_channels(Tape<T>&, VarId, int, int);                    \
  template VarId ewise(Tape<T>&, EwiseOp, VarId, VarId, double, std::string);  \
  template VarId leaky_relu(Tape<T>&, VarId, double, std::string);             \
  template VarId softplus(Tape<T>&, VarId, std::string);                       \
  template VarId channel_mean(Tape<T>&, VarId, std::string);                   \
  template VarId sum(Tape<T>&, VarId);                                         \
  template VarId mean(Tape<T>&, VarId);                                        \
  template VarId mse(Tape<T>&, VarId, VarId);

LUCYD_INSTANTIATE_OPS(float)
LUCYD_INSTANTIATE_OPS(double)

#undef LUCYD_INSTANTIATE_OPS

}  // namespace lucyd
