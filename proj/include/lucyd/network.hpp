#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lucyd/tape.hpp"
#include "lucyd/volume.hpp"

namespace lucyd {

/// Channel widths. The correction and update modules run at `features`
/// channels; the shared bottleneck at `bottleneck`.
struct ModelConfig {
  int features = 4;
  int bottleneck = 8;

  bool operator==(const ModelConfig&) const = default;
};

/// Every convolution of the network, in checkpoint order.
///
/// Decoder naming: `db2` is the bottleneck decoder, `db1` the correction
/// module decoder that produces the mask features.
enum class Layer : int {
  eb1_conv, eb1_res_a, eb1_res_b, eb1_down,
  fp_conv, fp_res_a, fp_res_b, fp_encode,
  eb2_conv, eb2_res_a, eb2_res_b,
  ff1_up, ff1_fuse, ff1_refine,
  ff2_down, ff2_fuse, ff2_refine,
  db2_conv, db2_res_a, db2_res_b,
  expand_up,
  db1_conv, db1_res_a, db1_res_b,
  mask,
  rldiv_proj,
  bp_merge, bp_res_a, bp_res_b, bp_refine,
  count_,
};

inline constexpr std::size_t kLayerCount = static_cast<std::size_t>(Layer::count_);

struct LayerSpec {
  std::string_view name;
  int c_in = 0;
  int c_out = 0;
  int kernel = 3;
  int stride = 1;
  /// Followed by leaky ReLU. False only for the mask and update projections.
  bool activated = true;
};

std::array<LayerSpec, kLayerCount> layer_specs(const ModelConfig& config);

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Kernel3d<T>> kernels;

  Kernel3d<T>& operator[](Layer l) { return kernels[static_cast<std::size_t>(l)]; }
  const Kernel3d<T>& operator[](Layer l) const {
    return kernels[static_cast<std::size_t>(l)];
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    out.names = names;
    for (const auto& k : kernels) out.kernels.push_back(k.template cast<U>());
    return out;
  }

  bool operator==(const ModelParams&) const = default;
};

/// All-zero weights and biases with the layer topology of `config`.
template <typename T = float>
ModelParams<T> zero_params(const ModelConfig& config = {});

/// Fan-in scaled uniform weights in +-sqrt(1 / (c_in * taps)), zero biases.
ModelParams<float> init_params(std::uint64_t seed,
                               const ModelConfig& config = {});

/// The four tensors the network exposes: the restored image x', the
/// corrected estimate z~ = y + M, the update term u and the mask M.
template <typename V>
struct Outputs {
  V restored;
  V estimate;
  V update;
  V mask;
};

/// Fails unless `shape` is a single-channel volume whose spatial dims are
/// even and at least 8.
void check_network_input(const Shape& shape);

template <typename T>
Outputs<BasicVolume<T>> forward(const ModelParams<T>& params,
                                const BasicVolume<T>& y);

/// Binds every kernel of `params` to `tape`, in layer order.
template <typename T>
std::vector<ParamId> bind_params(Tape<T>& tape, const ModelParams<T>& params);

template <typename T>
Outputs<VarId> forward(Tape<T>& tape, const std::vector<ParamId>& params,
                       const ModelConfig& config, VarId y);

/// Multi-scale fusion. which = 1 fuses at the shallow (full) resolution,
/// which = 2 at the deep (half) resolution.
template <typename T>
BasicVolume<T> ffblock(const ModelParams<T>& params,
                       const BasicVolume<T>& shallow,
                       const BasicVolume<T>& deep, int which);

template <typename T>
VarId ffblock(Tape<T>& tape, const std::vector<ParamId>& params,
              const ModelConfig& config, VarId shallow, VarId deep, int which);

}  // namespace lucyd
