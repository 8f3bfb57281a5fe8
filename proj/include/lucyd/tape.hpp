#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lucyd/volume.hpp"

namespace lucyd {

enum class OpKind {
  input,
  conv3d,
  upsample_nearest2x,
  concat_channels,
  slice_channels,
  add,
  mul,
  div_guarded,
  leaky_relu,
  softplus,
  channel_mean,
  sum,
  mean,
  mse,
  ssim3d,
  loss_combine,
};

const char* op_name(OpKind kind);
std::optional<OpKind> op_from_name(const std::string& name);

struct VarId {
  std::size_t index = 0;
};

struct ParamId {
  std::size_t index = 0;
};

/// Reverse-mode gradient tape. Every differentiable op appends one record
/// holding its output value; backward walks the records from the root down to
/// the first record, calling each record's adjoint exactly once.
///
/// Kernels bound with `param` are referenced, not copied, and must outlive the
/// tape. A tape belongs to a single forward/backward sequence.
template <typename T>
class Tape {
 public:
  /// Adjoint of one record: receives the gradient of the record's output and
  /// accumulates into its inputs and parameters through `grad_buffer` /
  /// `param_grad_buffer`.
  using Adjoint = std::function<void(Tape&, const BasicVolume<T>& grad_out)>;

  VarId input(BasicVolume<T> value, bool requires_grad = true,
              std::string label = "input");
  VarId constant(BasicVolume<T> value, std::string label = "constant") {
    return input(std::move(value), false, std::move(label));
  }
  ParamId param(const Kernel3d<T>& kernel, std::string label = "param");

  VarId record(OpKind kind, BasicVolume<T> value, std::vector<VarId> inputs,
               std::vector<ParamId> params, Adjoint adjoint,
               std::string label = {});

  const BasicVolume<T>& value(VarId id) const;
  /// Null when no gradient reached the variable.
  const BasicVolume<T>* grad(VarId id) const;
  BasicVolume<T> grad_or_zero(VarId id) const;
  const Kernel3d<T>& kernel(ParamId id) const;
  /// Zero-filled kernel of the right shape if no gradient reached it.
  Kernel3d<T> param_grad(ParamId id) const;

  bool requires_grad(VarId id) const;
  OpKind kind(VarId id) const;
  const std::string& label(VarId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::size_t param_size() const { return params_.size(); }

  BasicVolume<T>& grad_buffer(VarId id);
  Kernel3d<T>& param_grad_buffer(ParamId id);

  /// Seeds d(root)/d(root) = 1 and propagates. The root must hold exactly one
  /// element. Returns the number of records visited.
  std::size_t backward(VarId root);
  void zero_grad();

  /// Record indices visited by the last backward call, in visiting order.
  const std::vector<std::size_t>& visit_log() const { return visit_log_; }

  /// Test hook: the adjoint of every record of `kind` receives a negated
  /// upstream gradient. Used to prove the gradient checker catches errors.
  void inject_sign_flip(OpKind kind) { faulted_ = kind; }

  /// Gradient-check hook: leaky_relu records take their branch from the
  /// record at the same position of `reference` instead of from their own
  /// input, so finite differences stay on one linear piece.
  void freeze_branches(const Tape& reference);
  /// Per-element branch (input >= 0) for the record at `index`, or null.
  const std::vector<char>* frozen_branches(std::size_t index) const;

  /// Label and op name of the first record holding a NaN or Inf.
  std::optional<std::string> first_non_finite() const;

 private:
  struct Node {
    OpKind kind = OpKind::input;
    std::string label;
    std::vector<VarId> inputs;
    std::vector<ParamId> params;
    BasicVolume<T> value;
    std::optional<BasicVolume<T>> grad;
    Adjoint adjoint;
    bool requires_grad = false;
  };
  struct Param {
    const Kernel3d<T>* kernel = nullptr;
    std::string label;
    std::optional<Kernel3d<T>> grad;
  };

  const Node& node(VarId id) const;
  Node& node(VarId id);

  std::vector<Node> nodes_;
  std::vector<Param> params_;
  std::vector<std::size_t> visit_log_;
  std::optional<OpKind> faulted_;
  std::map<std::size_t, std::vector<char>> frozen_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lucyd
