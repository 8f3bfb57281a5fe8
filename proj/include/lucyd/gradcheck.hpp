#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lucyd/tape.hpp"

namespace lucyd {

/// Relative error of one check is max|analytic - numeric| over the checked
/// elements of a tensor, divided by the larger of the two gradients' max
/// magnitudes; a case reports its worst tensor.
///
/// Finite-difference passes reuse the activation branches of the analytic
/// pass. Each element is differenced with steps h and h/2, starting at
/// h = eps and shrinking tenfold while the two disagree. Elements still
/// unresolved at eps/1000 are skipped; a tensor with more than 5% skipped
/// elements fails.
struct GradcheckResult {
  std::string name;
  std::string worst_tensor;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed() const { return max_rel_error <= tolerance; }
};

struct GradcheckOptions {
  /// Central-difference step, applied in 64-bit arithmetic.
  double eps = 1e-3;
  /// Negate the upstream gradient of every record of this kind in the
  /// analytic pass. A working checker must then fail.
  std::optional<OpKind> fault;
};

inline constexpr double kOpsTolerance = 1e-5;
inline constexpr double kFullTolerance = 1e-4;

/// Every differentiable op on small random tensors, plus the loss and both
/// fusion blocks.
std::vector<GradcheckResult> gradcheck_ops(std::uint64_t seed,
                                           const GradcheckOptions& options = {});

/// The whole network and its training loss on a 12x16x16 volume, with a
/// sample of every parameter tensor.
std::vector<GradcheckResult> gradcheck_full(std::uint64_t seed,
                                            const GradcheckOptions& options = {});

}  // namespace lucyd
