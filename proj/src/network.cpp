#include "lucyd/network.hpp"

#include <cmath>
#include <random>

#include "lucyd/ops.hpp"

namespace lucyd {

namespace {

// The data flow is written once against two executors: EvalOps computes
// volumes directly, TapeOps records onto a gradient tape.

template <typename T>
struct EvalOps {
  using Var = BasicVolume<T>;
  const ModelParams<T>& params;
  std::array<LayerSpec, kLayerCount> specs;

  Var conv(const Var& x, Layer l) const {
    const LayerSpec& s = specs[static_cast<std::size_t>(l)];
    Var out = conv3d(x, params[l], s.stride, Padding::same_zero);
    return s.activated ? leaky_relu(out) : out;
  }
  Var upsample(const Var& x) const { return upsample_nearest2x(x); }
  Var concat(const Var& a, const Var& b) const { return concat_channels(a, b); }
  Var add(const Var& a, const Var& b) const { return ewise(EwiseOp::add, a, b); }
  Var mul(const Var& a, const Var& b) const { return ewise(EwiseOp::mul, a, b); }
  Var div(const Var& a, const Var& b) const {
    return ewise(EwiseOp::div_guarded, a, b, kDivEps);
  }
  Var mean(const Var& x) const { return channel_mean(x); }
  Var positive(const Var& x) const { return softplus(x); }
  const Shape& shape(const Var& x) const { return x.shape(); }
};

template <typename T>
struct TapeOps {
  using Var = VarId;
  Tape<T>& tape;
  const std::vector<ParamId>& ids;
  std::array<LayerSpec, kLayerCount> specs;

  Var conv(Var x, Layer l) const {
    const LayerSpec& s = specs[static_cast<std::size_t>(l)];
    const std::string name(s.name);
    Var out = conv3d(tape, x, ids[static_cast<std::size_t>(l)], s.stride,
                     Padding::same_zero, name);
    return s.activated ? leaky_relu(tape, out, kLeakySlope, name + ".act") : out;
  }
  Var upsample(Var x) const { return upsample_nearest2x(tape, x); }
  Var concat(Var a, Var b) const { return concat_channels(tape, a, b); }
  Var add(Var a, Var b) const { return ewise(tape, EwiseOp::add, a, b); }
  Var mul(Var a, Var b) const { return ewise(tape, EwiseOp::mul, a, b); }
  Var div(Var a, Var b) const {
    return ewise(tape, EwiseOp::div_guarded, a, b, kDivEps, "rldiv.div");
  }
  Var mean(Var x) const { return channel_mean(tape, x); }
  Var positive(Var x) const { return softplus(tape, x, "rldiv.softplus"); }
  const Shape& shape(Var x) const { return tape.value(x).shape(); }
};

template <class Ops>
typename Ops::Var residual(const Ops& op, const typename Ops::Var& x, Layer a,
                           Layer b) {
  return op.add(x, op.conv(op.conv(x, a), b));
}

void check_ffblock_shapes(const Shape& shallow, const Shape& deep,
                          const ModelConfig& c, int which) {
  if (which != 1 && which != 2) fail_usage("ffblock: which must be 1 or 2");
  if (shallow.c != c.features || deep.c != c.bottleneck) {
    fail_usage("ffblock: expected " + std::to_string(c.features) + " shallow and " +
               std::to_string(c.bottleneck) + " deep channels, got " +
               shallow.str() + " and " + deep.str());
  }
  if (deep.d != (shallow.d + 1) / 2 || deep.h != (shallow.h + 1) / 2 ||
      deep.w != (shallow.w + 1) / 2) {
    fail_usage("ffblock: deep features " + deep.str() +
               " are not at half the resolution of " + shallow.str());
  }
}

template <class Ops>
typename Ops::Var fuse(const Ops& op, const ModelConfig& config,
                       const typename Ops::Var& shallow,
                       const typename Ops::Var& deep, int which) {
  check_ffblock_shapes(op.shape(shallow), op.shape(deep), config, which);
  if (which == 1) {
    auto up = op.conv(op.upsample(deep), Layer::ff1_up);
    auto fused = op.conv(op.concat(shallow, up), Layer::ff1_fuse);
    return op.conv(fused, Layer::ff1_refine);
  }
  auto down = op.conv(shallow, Layer::ff2_down);
  auto fused = op.conv(op.concat(down, deep), Layer::ff2_fuse);
  return op.conv(fused, Layer::ff2_refine);
}

template <class Ops>
Outputs<typename Ops::Var> graph(const Ops& op, const ModelConfig& config,
                                 const typename Ops::Var& y) {
  check_network_input(op.shape(y));
  // Correction-module encoder and forward projector f.
  auto e1 = residual(op, op.conv(y, Layer::eb1_conv), Layer::eb1_res_a,
                     Layer::eb1_res_b);
  auto e1_down = op.conv(e1, Layer::eb1_down);
  auto fp = residual(op, op.conv(y, Layer::fp_conv), Layer::fp_res_a,
                     Layer::fp_res_b);
  auto fp_down = op.conv(fp, Layer::fp_encode);

  // Shared bottleneck.
  auto e2 = residual(op, op.conv(op.concat(e1_down, fp_down), Layer::eb2_conv),
                     Layer::eb2_res_a, Layer::eb2_res_b);
  auto f1 = fuse(op, config, e1, e2, 1);
  auto f2 = fuse(op, config, e1, e2, 2);
  auto d2 = residual(op, op.conv(f2, Layer::db2_conv), Layer::db2_res_a,
                     Layer::db2_res_b);
  auto expanded = op.conv(op.upsample(d2), Layer::expand_up);

  // Correction decoder: mask M and z~ = y + M.
  auto d1 = residual(op, op.conv(op.concat(expanded, f1), Layer::db1_conv),
                     Layer::db1_res_a, Layer::db1_res_b);
  auto mask = op.conv(d1, Layer::mask);
  auto estimate = op.add(y, mask);

  // RLDiv: y divided by the channel mean of the projected features, mapped
  // through softplus so the denominator is positive with a gradient
  // everywhere. The guarded division still clamps at kDivEps.
  auto ratio = op.div(y, op.positive(op.mean(fp)));
  auto projected = op.conv(ratio, Layer::rldiv_proj);

  // Backward projector b, producing the update term u.
  auto merged = op.conv(op.concat(projected, expanded), Layer::bp_merge);
  auto refined = residual(op, op.add(merged, projected), Layer::bp_res_a,
                          Layer::bp_res_b);
  auto update = op.mean(op.conv(refined, Layer::bp_refine));

  // RLMul.
  auto restored = op.mul(estimate, update);
  return Outputs<typename Ops::Var>{restored, estimate, update, mask};
}

}  // namespace

std::array<LayerSpec, kLayerCount> layer_specs(const ModelConfig& c) {
  const int f = c.features;
  const int b = c.bottleneck;
  if (f <= 0 || b <= 0) fail_usage("model widths must be positive");
  return {{
      {"eb1.conv", 1, f, 3, 1, true},
      {"eb1.res.a", f, f, 3, 1, true},
      {"eb1.res.b", f, f, 3, 1, true},
      {"eb1.down", f, f, 3, 2, true},
      {"fp.conv", 1, f, 3, 1, true},
      {"fp.res.a", f, f, 3, 1, true},
      {"fp.res.b", f, f, 3, 1, true},
      {"fp.encode", f, f, 3, 2, true},
      {"eb2.conv", 2 * f, b, 3, 1, true},
      {"eb2.res.a", b, b, 3, 1, true},
      {"eb2.res.b", b, b, 3, 1, true},
      {"ff1.up", b, f, 3, 1, true},
      {"ff1.fuse", 2 * f, f, 1, 1, true},
      {"ff1.refine", f, f, 3, 1, true},
      {"ff2.down", f, f, 3, 2, true},
      {"ff2.fuse", f + b, b, 1, 1, true},
      {"ff2.refine", b, b, 3, 1, true},
      {"db2.conv", b, b, 3, 1, true},
      {"db2.res.a", b, b, 3, 1, true},
      {"db2.res.b", b, b, 3, 1, true},
      {"expand.up", b, f, 3, 1, true},
      {"db1.conv", 2 * f, f, 3, 1, true},
      {"db1.res.a", f, f, 3, 1, true},
      {"db1.res.b", f, f, 3, 1, true},
      {"mask", f, 1, 3, 1, false},
      {"rldiv.proj", 1, f, 3, 1, true},
      {"bp.merge", 2 * f, f, 3, 1, true},
      {"bp.res.a", f, f, 3, 1, true},
      {"bp.res.b", f, f, 3, 1, true},
      {"bp.refine", f, f, 3, 1, false},
  }};
}

template <typename T>
ModelParams<T> zero_params(const ModelConfig& config) {
  ModelParams<T> p;
  p.config = config;
  for (const LayerSpec& s : layer_specs(config)) {
    p.names.emplace_back(s.name);
    p.kernels.emplace_back(s.c_out, s.c_in, s.kernel, s.kernel, s.kernel);
  }
  return p;
}

ModelParams<float> init_params(std::uint64_t seed, const ModelConfig& config) {
  ModelParams<float> p = zero_params<float>(config);
  std::mt19937_64 rng(seed);
  for (auto& k : p.kernels) {
    const double bound =
        std::sqrt(1.0 / (static_cast<double>(k.c_in) * static_cast<double>(k.taps())));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& w : k.weights) w = static_cast<float>(dist(rng));
  }
  return p;
}

void check_network_input(const Shape& s) {
  if (s.c != 1) {
    fail_usage("network input must be single-channel, got " + s.str());
  }
  if (s.d % 2 != 0 || s.h % 2 != 0 || s.w % 2 != 0) {
    fail_usage("network input spatial dims must be even, got " + s.str());
  }
  if (s.d < 8 || s.h < 8 || s.w < 8) {
    fail_usage("network input spatial dims must be at least 8, got " + s.str());
  }
}

template <typename T>
Outputs<BasicVolume<T>> forward(const ModelParams<T>& params,
                                const BasicVolume<T>& y) {
  if (params.kernels.size() != kLayerCount) {
    fail_usage("model parameters do not match the network topology");
  }
  EvalOps<T> op{params, layer_specs(params.config)};
  return graph(op, params.config, y);
}

template <typename T>
std::vector<ParamId> bind_params(Tape<T>& tape, const ModelParams<T>& params) {
  if (params.kernels.size() != kLayerCount) {
    fail_usage("model parameters do not match the network topology");
  }
  std::vector<ParamId> ids;
  ids.reserve(params.kernels.size());
  for (std::size_t i = 0; i < params.kernels.size(); ++i) {
    ids.push_back(tape.param(params.kernels[i], params.names[i]));
  }
  return ids;
}

template <typename T>
Outputs<VarId> forward(Tape<T>& tape, const std::vector<ParamId>& params,
                       const ModelConfig& config, VarId y) {
  if (params.size() != kLayerCount) {
    fail_usage("bound parameters do not match the network topology");
  }
  TapeOps<T> op{tape, params, layer_specs(config)};
  return graph(op, config, y);
}

template <typename T>
BasicVolume<T> ffblock(const ModelParams<T>& params,
                       const BasicVolume<T>& shallow,
                       const BasicVolume<T>& deep, int which) {
  EvalOps<T> op{params, layer_specs(params.config)};
  return fuse(op, params.config, shallow, deep, which);
}

template <typename T>
VarId ffblock(Tape<T>& tape, const std::vector<ParamId>& params,
              const ModelConfig& config, VarId shallow, VarId deep,
              int which) {
  TapeOps<T> op{tape, params, layer_specs(config)};
  return fuse(op, config, shallow, deep, which);
}

#define LUCYD_INSTANTIATE_NETWORK(T)                                           \
  template ModelParams<T> zero_params(const ModelConfig&);                     \
  template Outputs<BasicVolume<T>> forward(const ModelParams<T>&,              \
                                           const BasicVolume<T>&);             \
  template std::vector<ParamId> bind_params(Tape<T>&, const ModelParams<T>&);  \
  template Outputs<VarId> forward(Tape<T>&, const std::vector<ParamId>&,       \
                                  const ModelConfig&, VarId);                  \
  template BasicVolume<T> ffblock(const ModelParams<T>&,                       \
                                  const BasicVolume<T>&,                       \
                                  const BasicVolume<T>&, int);                 \
  template VarId ffblock(Tape<T>&, const std::vector<ParamId>&,                \
                         const ModelConfig&, VarId, VarId, int);

LUCYD_INSTANTIATE_NETWORK(float)
LUCYD_INSTANTIATE_NETWORK(double)

#undef LUCYD_INSTANTIATE_NETWORK

}  // namespace lucyd
