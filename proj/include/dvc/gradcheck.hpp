#ifndef DVC_GRADCHECK_HPP_
#define DVC_GRADCHECK_HPP_

// Finite-difference checks of the overlap-suppression and cross-task
// alignment gradients over random configurations.

#include <cstdint>
#include <optional>
#include <string>

namespace dvc::losses {

enum class GradcheckTarget { kOsl, kCtca };

std::optional<GradcheckTarget> parse_gradcheck_target(const std::string& name);

struct GradcheckSummary {
  int configs = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  long checked = 0;
  long skipped = 0;  // points within a step of a kink or clamp
};

// OSL configurations draw 2..6 predictions and 1..3 ground truths with
// beta in [1, 1.5]; entries whose +/- step evaluation lands within
// 3 * step of an endpoint coincidence, a disjointness boundary, an argmax
// tie or the epsilon clamp are skipped. CTCA configurations draw K in 2..8,
// d in 2..16 and a random non-empty match set.
GradcheckSummary run_gradcheck(GradcheckTarget target, int n_configs,
                               std::uint64_t seed, double step = 1e-4);

}  // namespace dvc::losses

#endif  // DVC_GRADCHECK_HPP_
