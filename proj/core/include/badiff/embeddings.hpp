#pragma once
#include <vector>

#include "badiff/schedule.hpp"
#include "badiff/tensor.hpp"

namespace badiff {

// Sinusoidal timestep embedding, [dim] with interleaved sin/cos; dim even.
Tensor embed_timestep(int t, int dim);
// Batched: [N, dim].
Tensor embed_timestep(const std::vector<int>& t, int dim);

// 3-layer SiLU perceptron mapping a normalized budget scalar to R^d.
// The budget is rescaled to [0,1] over the configured range before the MLP.
class EntropyEmbed {
 public:
  EntropyEmbed() = default;
  EntropyEmbed(ParamSet& params, const std::string& prefix, int dim,
               int hidden, BudgetRange range, RngStream& rng);

  // [N, d]; every budget must lie within the configured range.
  Tensor forward(const std::vector<EntropyBudget>& budgets) const;
  Tensor forward(const EntropyBudget& budget) const;

  int dim() const { return dim_; }
  const BudgetRange& range() const { return range_; }

 private:
  int dim_ = 0;
  BudgetRange range_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace badiff
