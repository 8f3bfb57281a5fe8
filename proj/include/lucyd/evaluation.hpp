#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lucyd/classic.hpp"
#include "lucyd/simulate.hpp"
#include "lucyd/training.hpp"

namespace lucyd {

enum class Method { input, wiener, rl, lucyd };

inline constexpr std::array<Method, 4> kMethods{Method::input, Method::wiener,
                                                Method::rl, Method::lucyd};

std::string to_string(Method method);

struct EvalOptions {
  int rl_iterations = kDefaultRlIterations;
  double nsr = kDefaultWienerNsr;
  TileSpec tile;
};

/// One degraded volume with its ground truth, both on the 0-255 scale. The
/// classic solvers are given the true degradation PSF.
struct EvalItem {
  const Volume* truth = nullptr;
  const Volume* degraded = nullptr;
  DegradationSpec degradation;
};

/// Per-cell mean of per-volume scores. `scores` is indexed by Method; the
/// lucyd entry is unset when no model was given.
struct CellResult {
  DegradationSpec cell;
  int volumes = 0;
  std::array<Scores, 4> scores{};
};

/// Receives every restored volume (0-255 scale) before it is scored.
using OutputSink =
    std::function<void(std::size_t item, Method method, const Volume& restored)>;

/// Restoration by one method. `model` is required only for Method::lucyd.
Volume restore(Method method, const Volume& degraded,
               const DegradationSpec& degradation,
               const ModelParams<float>* model, const EvalOptions& options);

/// SSIM and PSNR of a 0-255 restoration against its 0-255 truth, computed on
/// normalized volumes with unit data range.
Scores score(const Volume& restored, const Volume& truth);

/// Cells appear in order of first occurrence; seeds are ignored when
/// grouping.
std::vector<CellResult> evaluate(std::span<const EvalItem> items,
                                 const ModelParams<float>* model,
                                 const EvalOptions& options,
                                 const OutputSink& sink = {});

/// "%.6g" with '.' as decimal separator; infinities print as inf.
std::string format_number(double v);

/// One row per cell, methods as column pairs.
std::string format_report_wide(std::span<const CellResult> cells,
                               bool with_lucyd);

/// One row per (method, cell).
std::string format_report_long(std::span<const CellResult> cells,
                               bool with_lucyd);

}  // namespace lucyd
