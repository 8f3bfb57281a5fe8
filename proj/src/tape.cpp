#include "lucyd/tape.hpp"

#include <array>
#include <cmath>
#include <utility>

namespace lucyd {

namespace {

constexpr std::array<std::pair<OpKind, const char*>, 16> kOpNames{{
    {OpKind::input, "input"},
    {OpKind::conv3d, "conv3d"},
    {OpKind::upsample_nearest2x, "upsample_nearest2x"},
    {OpKind::concat_channels, "concat_channels"},
    {OpKind::slice_channels, "slice_channels"},
    {OpKind::add, "add"},
    {OpKind::mul, "mul"},
    {OpKind::div_guarded, "div_guarded"},
    {OpKind::leaky_relu, "leaky_relu"},
    {OpKind::softplus, "softplus"},
    {OpKind::channel_mean, "channel_mean"},
    {OpKind::sum, "sum"},
    {OpKind::mean, "mean"},
    {OpKind::mse, "mse"},
    {OpKind::ssim3d, "ssim3d"},
    {OpKind::loss_combine, "loss_combine"},
}};

}  // namespace

const char* op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(const std::string& name) {
  for (const auto& [k, n] : kOpNames) {
    if (name == n) return k;
  }
  return std::nullopt;
}

template <typename T>
VarId Tape<T>::input(BasicVolume<T> value, bool requires_grad,
                     std::string label) {
  Node n;
  n.kind = OpKind::input;
  n.label = std::move(label);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return VarId{nodes_.size() - 1};
}

template <typename T>
ParamId Tape<T>::param(const Kernel3d<T>& kernel, std::string label) {
  params_.push_back(Param{&kernel, std::move(label), std::nullopt});
  return ParamId{params_.size() - 1};
}

template <typename T>
VarId Tape<T>::record(OpKind kind, BasicVolume<T> value,
                      std::vector<VarId> inputs, std::vector<ParamId> params,
                      Adjoint adjoint, std::string label) {
  bool needs = !params.empty();
  for (VarId in : inputs) {
    if (in.index >= nodes_.size()) {
      fail_usage("tape record refers to an unknown input");
    }
    needs = needs || nodes_[in.index].requires_grad;
  }
  for (ParamId p : params) {
    if (p.index >= params_.size()) {
      fail_usage("tape record refers to an unknown parameter");
    }
  }
  Node n;
  n.kind = kind;
  n.label = label.empty() ? op_name(kind) : std::move(label);
  n.inputs = std::move(inputs);
  n.params = std::move(params);
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(n));
  return VarId{nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(VarId id) const {
  if (id.index >= nodes_.size()) fail_usage("unknown tape variable");
  return nodes_[id.index];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(VarId id) {
  if (id.index >= nodes_.size()) fail_usage("unknown tape variable");
  return nodes_[id.index];
}

template <typename T>
const BasicVolume<T>& Tape<T>::value(VarId id) const {
  return node(id).value;
}

template <typename T>
const BasicVolume<T>* Tape<T>::grad(VarId id) const {
  const auto& g = node(id).grad;
  return g ? &*g : nullptr;
}

template <typename T>
BasicVolume<T> Tape<T>::grad_or_zero(VarId id) const {
  const Node& n = node(id);
  return n.grad ? *n.grad : BasicVolume<T>(n.value.shape());
}

template <typename T>
const Kernel3d<T>& Tape<T>::kernel(ParamId id) const {
  if (id.index >= params_.size()) fail_usage("unknown tape parameter");
  return *params_[id.index].kernel;
}

template <typename T>
Kernel3d<T> Tape<T>::param_grad(ParamId id) const {
  if (id.index >= params_.size()) fail_usage("unknown tape parameter");
  const Param& p = params_[id.index];
  if (p.grad) return *p.grad;
  const Kernel3d<T>& k = *p.kernel;
  return Kernel3d<T>(k.c_out, k.c_in, k.kd, k.kh, k.kw);
}

template <typename T>
bool Tape<T>::requires_grad(VarId id) const {
  return node(id).requires_grad;
}

template <typename T>
OpKind Tape<T>::kind(VarId id) const {
  return node(id).kind;
}

template <typename T>
const std::string& Tape<T>::label(VarId id) const {
  return node(id).label;
}

template <typename T>
BasicVolume<T>& Tape<T>::grad_buffer(VarId id) {
  Node& n = node(id);
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

template <typename T>
Kernel3d<T>& Tape<T>::param_grad_buffer(ParamId id) {
  if (id.index >= params_.size()) fail_usage("unknown tape parameter");
  Param& p = params_[id.index];
  if (!p.grad) {
    const Kernel3d<T>& k = *p.kernel;
    p.grad.emplace(k.c_out, k.c_in, k.kd, k.kh, k.kw);
  }
  return *p.grad;
}

template <typename T>
std::size_t Tape<T>::backward(VarId root) {
  Node& r = node(root);
  if (r.value.size() != 1) {
    fail_usage("backward requires a scalar root, got shape " +
               r.value.shape().str() + " from '" + r.label + "'");
  }
  grad_buffer(root)[0] += T(1);
  visit_log_.clear();
  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    visit_log_.push_back(i);
    if (!n.requires_grad || !n.grad || !n.adjoint) continue;
    if (faulted_ && *faulted_ == n.kind) {
      BasicVolume<T> flipped = *n.grad;
      for (T& v : flipped.data()) v = -v;
      n.adjoint(*this, flipped);
    } else {
      // The adjoint may grow grads of earlier records but never this one.
      const BasicVolume<T>& g = *n.grad;
      n.adjoint(*this, g);
    }
  }
  return visit_log_.size();
}

template <typename T>
void Tape<T>::zero_grad() {
  for (Node& n : nodes_) n.grad.reset();
  for (Param& p : params_) p.grad.reset();
}

template <typename T>
void Tape<T>::freeze_branches(const Tape& reference) {
  frozen_.clear();
  for (std::size_t i = 0; i < reference.nodes_.size(); ++i) {
    const Node& n = reference.nodes_[i];
    if (n.kind != OpKind::leaky_relu) continue;
    const auto in = reference.nodes_[n.inputs.at(0).index].value.data();
    std::vector<char> branch(in.size());
    for (std::size_t j = 0; j < in.size(); ++j) branch[j] = in[j] >= T(0);
    frozen_.emplace(i, std::move(branch));
  }
}

template <typename T>
const std::vector<char>* Tape<T>::frozen_branches(std::size_t index) const {
  const auto it = frozen_.find(index);
  return it == frozen_.end() ? nullptr : &it->second;
}

template <typename T>
std::optional<std::string> Tape<T>::first_non_finite() const {
  for (const Node& n : nodes_) {
    for (T v : n.value.data()) {
      if (!std::isfinite(static_cast<double>(v))) {
        return n.label + " (" + op_name(n.kind) + ")";
      }
    }
  }
  return std::nullopt;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lucyd
