#pragma once
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "badiff/tensor.hpp"

namespace badiff {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t entries_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;
  bool passed(double tolerance) const { return max_rel_err < tolerance; }
};

// Compares analytic gradients of a scalar-valued fragment against central
// finite differences at the given step. rel_err = |a-f| / max(1,|a|,|f|).
// When max_entries_per_param > 0, large tensors are checked on a random
// (seeded, deterministic) subset of entries.
GradCheckReport check_gradients(
    const std::function<Tensor()>& fragment,
    const std::vector<std::pair<std::string, Tensor>>& params,
    double step = 1e-5, int64_t max_entries_per_param = 0,
    uint64_t subsample_seed = 0);

// Convenience over a ParamSet (trainable parameters only).
GradCheckReport check_gradients(const std::function<Tensor()>& fragment,
                                ParamSet& params, double step = 1e-5,
                                int64_t max_entries_per_param = 0,
                                uint64_t subsample_seed = 0);

}  // namespace badiff
