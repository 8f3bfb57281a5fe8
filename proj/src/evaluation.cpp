#include "lucyd/evaluation.hpp"

#include <cmath>
#include <cstdio>

#include "lucyd/metrics.hpp"

namespace lucyd {

namespace {

bool same_cell(const DegradationSpec& a, const DegradationSpec& b) {
  return a.sigma_b == b.sigma_b && a.axial() == b.axial() &&
         a.sigma_n == b.sigma_n;
}

std::string cell_columns(const CellResult& c) {
  return format_number(c.cell.sigma_b) + "," + format_number(c.cell.axial()) +
         "," + format_number(c.cell.sigma_n) + "," + std::to_string(c.volumes);
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::input: return "input";
    case Method::wiener: return "wiener";
    case Method::rl: return "rl";
    case Method::lucyd: return "lucyd";
  }
  return "unknown";
}

Volume restore(Method method, const Volume& degraded,
               const DegradationSpec& degradation,
               const ModelParams<float>* model, const EvalOptions& options) {
  switch (method) {
    case Method::input:
      return degraded;
    case Method::wiener:
      return wiener(degraded, degradation_psf(degradation), options.nsr);
    case Method::rl:
      return richardson_lucy(degraded, degradation_psf(degradation),
                             options.rl_iterations);
    case Method::lucyd:
      if (!model) fail_usage("lucyd restoration requires a model");
      return denormalized(infer(*model, normalized(degraded), options.tile));
  }
  fail_usage("unknown restoration method");
}

Scores score(const Volume& restored, const Volume& truth) {
  const Volume r = normalized(restored);
  const Volume t = normalized(truth);
  return Scores{ssim3d(r, t), psnr(r, t)};
}

std::vector<CellResult> evaluate(std::span<const EvalItem> items,
                                 const ModelParams<float>* model,
                                 const EvalOptions& options,
                                 const OutputSink& sink) {
  if (items.empty()) fail_data("evaluation set is empty");
  std::vector<CellResult> cells;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const EvalItem& item = items[i];
    if (!item.truth || !item.degraded) fail_usage("evaluation item is missing a volume");
    std::size_t c = 0;
    while (c < cells.size() && !same_cell(cells[c].cell, item.degradation)) ++c;
    if (c == cells.size()) {
      CellResult fresh;
      fresh.cell = item.degradation;
      fresh.cell.seed = 0;
      cells.push_back(fresh);
    }
    CellResult& cell = cells[c];
    for (Method m : kMethods) {
      if (m == Method::lucyd && !model) continue;
      const Volume out = restore(m, *item.degraded, item.degradation, model, options);
      if (sink) sink(i, m, out);
      const Scores s = score(out, *item.truth);
      Scores& acc = cell.scores[static_cast<std::size_t>(m)];
      acc.ssim += s.ssim;
      acc.psnr += s.psnr;
    }
    cell.volumes += 1;
  }
  for (CellResult& cell : cells) {
    for (Scores& s : cell.scores) {
      s.ssim /= cell.volumes;
      s.psnr /= cell.volumes;
    }
  }
  return cells;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string format_report_wide(std::span<const CellResult> cells,
                               bool with_lucyd) {
  std::string out = "sigma_b,sigma_b_axial,sigma_n,volumes";
  for (Method m : kMethods) {
    if (m == Method::lucyd && !with_lucyd) continue;
    out += "," + to_string(m) + "_ssim," + to_string(m) + "_psnr";
  }
  out += "\n";
  for (const CellResult& c : cells) {
    out += cell_columns(c);
    for (Method m : kMethods) {
      if (m == Method::lucyd && !with_lucyd) continue;
      const Scores& s = c.scores[static_cast<std::size_t>(m)];
      out += "," + format_number(s.ssim) + "," + format_number(s.psnr);
    }
    out += "\n";
  }
  return out;
}

std::string format_report_long(std::span<const CellResult> cells,
                               bool with_lucyd) {
  std::string out = "method,sigma_b,sigma_b_axial,sigma_n,volumes,ssim,psnr\n";
  for (Method m : kMethods) {
    if (m == Method::lucyd && !with_lucyd) continue;
    for (const CellResult& c : cells) {
      const Scores& s = c.scores[static_cast<std::size_t>(m)];
      out += to_string(m) + "," + cell_columns(c) + "," + format_number(s.ssim) +
             "," + format_number(s.psnr) + "\n";
    }
  }
  return out;
}

}  // namespace lucyd
