#include "badiff/embeddings.hpp"

#include <cmath>

#include "badiff/ops.hpp"

namespace badiff {

Tensor embed_timestep(int t, int dim) {
  return embed_timestep(std::vector<int>{t}, dim);
}

Tensor embed_timestep(const std::vector<int>& t, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw std::invalid_argument("embed_timestep: dim must be positive and even");
  }
  int half = dim / 2;
  int n = static_cast<int>(t.size());
  Tensor out = Tensor::zeros({n, dim});
  double* d = out.data();
  for (int ni = 0; ni < n; ++ni) {
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * i / half);
      double arg = t[static_cast<size_t>(ni)] * freq;
      d[static_cast<size_t>(ni) * dim + 2 * i] = std::sin(arg);
      d[static_cast<size_t>(ni) * dim + 2 * i + 1] = std::cos(arg);
    }
  }
  return out;
}

EntropyEmbed::EntropyEmbed(ParamSet& params, const std::string& prefix, int dim,
                           int hidden, BudgetRange range, RngStream& rng)
    : dim_(dim), range_(range) {
  if (dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("EntropyEmbed: dims must be positive");
  }
  w1_ = params.add(prefix + ".w1", {hidden, 1}, rng, 1.0);
  b1_ = params.add_zeros(prefix + ".b1", {hidden});
  w2_ = params.add(prefix + ".w2", {hidden, hidden}, rng,
                   1.0 / std::sqrt(static_cast<double>(hidden)));
  b2_ = params.add_zeros(prefix + ".b2", {hidden});
  w3_ = params.add(prefix + ".w3", {dim, hidden}, rng,
                   1.0 / std::sqrt(static_cast<double>(hidden)));
  b3_ = params.add_zeros(prefix + ".b3", {dim});
}

Tensor EntropyEmbed::forward(const std::vector<EntropyBudget>& budgets) const {
  int n = static_cast<int>(budgets.size());
  std::vector<double> normed(budgets.size());
  for (size_t i = 0; i < budgets.size(); ++i) {
    if (!range_.contains(budgets[i].bpp)) {
      throw std::invalid_argument("entropy budget out of range");
    }
    normed[i] = (budgets[i].bpp - range_.lo) / (range_.hi - range_.lo);
  }
  Tensor x = Tensor::from_data({n, 1}, std::move(normed));
  Tensor h1 = ops::silu(ops::dense(x, w1_, b1_));
  Tensor h2 = ops::silu(ops::dense(h1, w2_, b2_));
  return ops::dense(h2, w3_, b3_);
}

Tensor EntropyEmbed::forward(const EntropyBudget& budget) const {
  return forward(std::vector<EntropyBudget>{budget});
}

}  // namespace badiff
