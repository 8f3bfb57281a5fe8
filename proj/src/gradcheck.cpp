#include "lucyd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "lucyd/metrics.hpp"
#include "lucyd/network.hpp"
#include "lucyd/ops.hpp"
#include "lucyd/training.hpp"

namespace lucyd {

namespace {

using Builder = std::function<VarId(Tape<double>&, const std::vector<VarId>&,
                                    const std::vector<ParamId>&)>;

struct Case {
  std::string name;
  double tolerance = kOpsTolerance;
  std::vector<std::string> input_names;
  std::vector<VolumeD> inputs;
  std::vector<std::string> kernel_names;
  std::vector<Kernel3d<double>> kernels;
  /// Kernels bound to the tape but not perturbed.
  std::vector<bool> kernel_checked;
  Builder build;
  /// Elements checked per tensor; 0 checks all of them.
  std::size_t sample = 0;
};

VolumeD random_volume(Shape s, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  VolumeD v(s);
  for (double& x : v.data()) x = dist(rng);
  return v;
}

Kernel3d<double> random_kernel(int out, int in, int k, std::mt19937_64& rng) {
  Kernel3d<double> kernel(out, in, k, k, k);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (double& w : kernel.weights) w = dist(rng);
  for (double& b : kernel.bias) b = dist(rng);
  return kernel;
}

// Values bounded away from zero so a perturbation never crosses a kink.
VolumeD away_from_zero(Shape s, std::mt19937_64& rng) {
  VolumeD v = random_volume(s, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& x : v.data()) {
    if (sign(rng)) x = -x;
  }
  return v;
}

struct Evaluated {
  Tape<double> tape;
  std::vector<VarId> inputs;
  std::vector<ParamId> params;
  VarId root;
};

// Non-scalar outputs are reduced against a fixed random projection so every
// output element contributes to the checked scalar.
VarId reduce(Tape<double>& tape, VarId out, const std::optional<VolumeD>& proj) {
  if (!proj) return out;
  const VarId p = tape.constant(*proj, "projection");
  return sum(tape, ewise(tape, EwiseOp::mul, out, p));
}

void build_into(Evaluated& e, const Case& c, std::optional<VolumeD>& proj,
                std::mt19937_64& rng) {
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    e.inputs.push_back(e.tape.input(c.inputs[i], true, c.input_names[i]));
  }
  for (std::size_t i = 0; i < c.kernels.size(); ++i) {
    e.params.push_back(e.tape.param(c.kernels[i], c.kernel_names[i]));
  }
  const VarId out = c.build(e.tape, e.inputs, e.params);
  if (!proj && e.tape.value(out).size() != 1) {
    proj = random_volume(e.tape.value(out).shape(), rng);
  }
  e.root = reduce(e.tape, out, proj);
}

std::vector<std::size_t> pick(std::size_t n, std::size_t sample,
                              std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (sample == 0 || sample >= n) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(sample);
  std::sort(all.begin(), all.end());
  return all;
}

GradcheckResult run_case(Case c, std::uint64_t seed,
                         const GradcheckOptions& options) {
  std::mt19937_64 rng(seed);
  std::optional<VolumeD> proj;
  Evaluated analytic;
  if (options.fault) analytic.tape.inject_sign_flip(*options.fault);
  build_into(analytic, c, proj, rng);
  analytic.tape.backward(analytic.root);

  auto value = [&]() {
    Evaluated e;
    e.tape.freeze_branches(analytic.tape);
    build_into(e, c, proj, rng);
    return e.tape.value(e.root)[0];
  };

  GradcheckResult result;
  result.name = c.name;
  result.tolerance = c.tolerance;
  auto central = [&](double& target, double h) {
    const double saved = target;
    target = saved + h;
    const double up = value();
    target = saved - h;
    const double down = value();
    target = saved;
    return (up - down) / (2.0 * h);
  };
  auto check = [&](const std::string& name, std::vector<double>& target,
                   const std::vector<double>& grad) {
    const auto picked = pick(target.size(), c.sample, rng);
    double scale = 0.0;
    for (std::size_t i : picked) scale = std::max(scale, std::abs(grad[i]));
    double max_diff = 0.0;
    std::size_t kinks = 0;
    for (std::size_t i : picked) {
      // A difference is accepted once steps h and h/2 agree. On smooth
      // stretches they agree at once; an interval straddling a kink (the
      // division clamp) makes them disagree, so the step is shrunk.
      std::optional<double> numeric;
      for (double h = options.eps; h >= options.eps * 1e-3 && !numeric; h /= 10) {
        const double wide = central(target[i], h);
        const double narrow = central(target[i], h / 2);
        if (std::abs(wide - narrow) <= 0.25 * c.tolerance * std::max(scale, 1e-12)) {
          numeric = narrow;
        }
      }
      if (!numeric) {
        ++kinks;
        continue;
      }
      scale = std::max(scale, std::abs(*numeric));
      max_diff = std::max(max_diff, std::abs(grad[i] - *numeric));
      ++result.checked;
    }
    result.skipped += kinks;
    double rel = scale > 1e-12 ? max_diff / scale : 0.0;
    if (kinks * 20 > picked.size()) rel = std::max(rel, 1.0);
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_tensor = name;
    }
  };

  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const VolumeD g = analytic.tape.grad_or_zero(analytic.inputs[i]);
    check(c.input_names[i], c.inputs[i].storage(), g.storage());
  }
  for (std::size_t k = 0; k < c.kernels.size(); ++k) {
    if (!c.kernel_checked.empty() && !c.kernel_checked[k]) continue;
    const Kernel3d<double> g = analytic.tape.param_grad(analytic.params[k]);
    check(c.kernel_names[k] + ".weight", c.kernels[k].weights, g.weights);
    check(c.kernel_names[k] + ".bias", c.kernels[k].bias, g.bias);
  }
  return result;
}

Case unary(std::string name, VolumeD x,
           std::function<VarId(Tape<double>&, VarId)> f) {
  Case c;
  c.name = std::move(name);
  c.input_names = {"x"};
  c.inputs = {std::move(x)};
  c.build = [f](Tape<double>& t, const std::vector<VarId>& in,
                const std::vector<ParamId>&) { return f(t, in[0]); };
  return c;
}

Case binary(std::string name, VolumeD a, VolumeD b,
            std::function<VarId(Tape<double>&, VarId, VarId)> f) {
  Case c;
  c.name = std::move(name);
  c.input_names = {"a", "b"};
  c.inputs = {std::move(a), std::move(b)};
  c.build = [f](Tape<double>& t, const std::vector<VarId>& in,
                const std::vector<ParamId>&) { return f(t, in[0], in[1]); };
  return c;
}

Case conv_case(std::string name, Shape x, int c_out, int k, int stride,
               Padding pad, std::mt19937_64& rng) {
  Case c;
  c.name = std::move(name);
  c.input_names = {"x"};
  c.inputs = {random_volume(x, rng)};
  c.kernel_names = {"k"};
  c.kernels = {random_kernel(c_out, x.c, k, rng)};
  c.build = [stride, pad](Tape<double>& t, const std::vector<VarId>& in,
                          const std::vector<ParamId>& p) {
    return conv3d(t, in[0], p[0], stride, pad);
  };
  return c;
}

ModelParams<double> random_model(std::uint64_t seed) {
  ModelParams<double> m = init_params(seed).cast<double>();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  for (auto& k : m.kernels) {
    for (double& b : k.bias) b = dist(rng);
  }
  return m;
}

Case model_case(std::string name, const ModelParams<double>& model,
                std::vector<std::string> input_names, std::vector<VolumeD> inputs,
                std::vector<bool> checked, std::size_t sample, Builder build) {
  Case c;
  c.name = std::move(name);
  c.input_names = std::move(input_names);
  c.inputs = std::move(inputs);
  c.kernel_names = model.names;
  c.kernels = model.kernels;
  c.kernel_checked = std::move(checked);
  c.sample = sample;
  c.build = std::move(build);
  return c;
}

std::vector<bool> only_layers(std::initializer_list<Layer> layers) {
  std::vector<bool> out(kLayerCount, false);
  for (Layer l : layers) out[static_cast<std::size_t>(l)] = true;
  return out;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed,
                                           const GradcheckOptions& options) {
  std::mt19937_64 rng(seed);
  std::vector<Case> cases;

  cases.push_back(conv_case("conv3d (stride 1, same)", Shape{2, 4, 4, 4}, 3, 3, 1,
                            Padding::same_zero, rng));
  cases.push_back(conv_case("conv3d (stride 2, same)", Shape{2, 4, 4, 4}, 3, 3, 2,
                            Padding::same_zero, rng));
  cases.push_back(conv_case("conv3d (stride 1, valid)", Shape{2, 4, 4, 4}, 2, 3, 1,
                            Padding::valid, rng));
  cases.push_back(conv_case("conv3d (stride 2, valid)", Shape{2, 4, 4, 4}, 2, 3, 2,
                            Padding::valid, rng));
  cases.push_back(conv_case("conv3d (1x1x1)", Shape{3, 4, 4, 4}, 2, 1, 1,
                            Padding::same_zero, rng));

  cases.push_back(unary("upsample_nearest2x", random_volume(Shape{2, 2, 2, 2}, rng),
                        [](Tape<double>& t, VarId x) { return upsample_nearest2x(t, x); }));
  cases.push_back(binary("concat_channels", random_volume(Shape{1, 3, 4, 4}, rng),
                         random_volume(Shape{2, 3, 4, 4}, rng),
                         [](Tape<double>& t, VarId a, VarId b) {
                           return concat_channels(t, a, b);
                         }));
  cases.push_back(unary("slice_channels", random_volume(Shape{3, 4, 4, 4}, rng),
                        [](Tape<double>& t, VarId x) { return slice_channels(t, x, 1, 2); }));
  cases.push_back(binary("add", random_volume(Shape{3, 4, 4, 4}, rng),
                         random_volume(Shape{3, 4, 4, 4}, rng),
                         [](Tape<double>& t, VarId a, VarId b) {
                           return ewise(t, EwiseOp::add, a, b);
                         }));
  cases.push_back(binary("mul", random_volume(Shape{3, 4, 4, 4}, rng),
                         random_volume(Shape{3, 4, 4, 4}, rng),
                         [](Tape<double>& t, VarId a, VarId b) {
                           return ewise(t, EwiseOp::mul, a, b);
                         }));
  {
    // Mostly positive denominators, with some far inside the clamped region.
    VolumeD den = random_volume(Shape{3, 4, 4, 4}, rng, 0.5, 1.5);
    std::bernoulli_distribution clamp(0.2);
    for (double& v : den.data()) {
      if (clamp(rng)) v = -v;
    }
    cases.push_back(binary("div_guarded", random_volume(Shape{3, 4, 4, 4}, rng), den,
                           [](Tape<double>& t, VarId a, VarId b) {
                             return ewise(t, EwiseOp::div_guarded, a, b);
                           }));
  }
  cases.push_back(unary("leaky_relu", away_from_zero(Shape{3, 4, 4, 4}, rng),
                        [](Tape<double>& t, VarId x) { return leaky_relu(t, x); }));
  cases.push_back(unary("softplus", random_volume(Shape{3, 4, 4, 4}, rng, -3.0, 3.0),
                        [](Tape<double>& t, VarId x) { return softplus(t, x); }));
  cases.push_back(unary("channel_mean", random_volume(Shape{3, 4, 4, 4}, rng),
                        [](Tape<double>& t, VarId x) { return channel_mean(t, x); }));
  cases.push_back(unary("sum", random_volume(Shape{3, 4, 4, 4}, rng),
                        [](Tape<double>& t, VarId x) { return sum(t, x); }));
  cases.push_back(unary("mean", random_volume(Shape{3, 4, 4, 4}, rng),
                        [](Tape<double>& t, VarId x) { return mean(t, x); }));
  cases.push_back(binary("mse", random_volume(Shape{3, 4, 4, 4}, rng),
                         random_volume(Shape{3, 4, 4, 4}, rng),
                         [](Tape<double>& t, VarId a, VarId b) { return mse(t, a, b); }));
  {
    const Shape s{1, 12, 12, 12};
    const VolumeD truth = random_volume(s, rng, 0.0, 1.0);
    VolumeD other = truth;
    std::normal_distribution<double> noise(0.0, 0.1);
    for (double& v : other.data()) v += noise(rng);
    cases.push_back(binary("ssim3d", other, truth,
                           [](Tape<double>& t, VarId a, VarId b) {
                             return ssim3d(t, a, b);
                           }));
    cases.push_back(binary("loss (mse - ln((1 + ssim) / 2))", other, truth,
                           [](Tape<double>& t, VarId a, VarId b) {
                             return loss(t, a, b);
                           }));
  }

  const ModelParams<double> model = random_model(seed);
  const ModelConfig cfg = model.config;
  for (int which : {1, 2}) {
    const auto checked =
        which == 1 ? only_layers({Layer::ff1_up, Layer::ff1_fuse, Layer::ff1_refine})
                   : only_layers({Layer::ff2_down, Layer::ff2_fuse, Layer::ff2_refine});
    cases.push_back(model_case(
        "ffblock " + std::to_string(which), model, {"shallow", "deep"},
        {random_volume(Shape{cfg.features, 4, 4, 4}, rng),
         random_volume(Shape{cfg.bottleneck, 2, 2, 2}, rng)},
        checked, 24,
        [cfg, which](Tape<double>& t, const std::vector<VarId>& in,
                     const std::vector<ParamId>& p) {
          return ffblock(t, p, cfg, in[0], in[1], which);
        }));
  }

  std::vector<GradcheckResult> results;
  std::uint64_t index = 0;
  for (Case& c : cases) {
    results.push_back(run_case(std::move(c), seed + (++index), options));
  }
  return results;
}

std::vector<GradcheckResult> gradcheck_full(std::uint64_t seed,
                                            const GradcheckOptions& options) {
  std::mt19937_64 rng(seed);
  const ModelParams<double> model = random_model(seed);
  const ModelConfig cfg = model.config;
  const Shape s{1, 12, 16, 16};
  const VolumeD truth = random_volume(s, rng, 0.0, 1.0);
  VolumeD y = truth;
  std::normal_distribution<double> noise(0.0, 0.05);
  for (double& v : y.data()) v = std::max(0.0, v + noise(rng));
  const std::vector<bool> all(kLayerCount, true);

  std::vector<Case> cases;
  cases.push_back(model_case(
      "network (restored x')", model, {"y"}, {y}, all, 4,
      [cfg](Tape<double>& t, const std::vector<VarId>& in,
            const std::vector<ParamId>& p) {
        return forward(t, p, cfg, in[0]).restored;
      }));
  cases.push_back(model_case(
      "network + loss", model, {"y"}, {y}, all, 4,
      [cfg, truth](Tape<double>& t, const std::vector<VarId>& in,
                   const std::vector<ParamId>& p) {
        const VarId restored = forward(t, p, cfg, in[0]).restored;
        return loss(t, restored, t.constant(truth, "truth"));
      }));
  for (Case& c : cases) c.tolerance = kFullTolerance;

  std::vector<GradcheckResult> results;
  std::uint64_t index = 0;
  for (Case& c : cases) {
    results.push_back(run_case(std::move(c), seed + (++index), options));
  }
  return results;
}

}  // namespace lucyd
