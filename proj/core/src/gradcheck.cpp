#include "badiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace badiff {

namespace {

double rel_err(double analytic, double fd) {
  double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
  return std::abs(analytic - fd) / denom;
}

std::vector<int64_t> pick_indices(int64_t n, int64_t max_entries, uint64_t seed) {
  std::vector<int64_t> idx;
  if (max_entries <= 0 || n <= max_entries) {
    idx.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
  }
  // Partial Fisher-Yates over [0,n) driven by the seeded stream.
  std::vector<int64_t> all(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
  RngStream rng(seed);
  for (int64_t i = 0; i < max_entries; ++i) {
    int64_t j = i + static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n - i)));
    std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
  }
  all.resize(static_cast<size_t>(max_entries));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckReport check_gradients(
    const std::function<Tensor()>& fragment,
    const std::vector<std::pair<std::string, Tensor>>& params, double step,
    int64_t max_entries_per_param, uint64_t subsample_seed) {
  GradCheckReport report;
  if (step <= 0.0) throw std::invalid_argument("check_gradients: step must be positive");

  for (auto& [name, t] : params) {
    Tensor tt = t;
    tt.set_requires_grad(true);
    tt.zero_grad();
  }
  Tensor out = fragment();
  if (out.numel() != 1) {
    throw std::invalid_argument("check_gradients: fragment must produce a scalar");
  }
  out.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, t] : params) analytic.push_back(t.grad());

  NoGradGuard ng;
  uint64_t pidx = 0;
  for (auto& [name, t] : params) {
    Tensor tt = t;
    GradCheckEntry entry;
    entry.name = name;
    auto indices = pick_indices(tt.numel(), max_entries_per_param,
                                subsample_seed * 0x9e3779b9ULL + pidx);
    for (int64_t i : indices) {
      double saved = tt.data()[i];
      tt.data()[i] = saved + step;
      double fplus = fragment().item();
      tt.data()[i] = saved - step;
      double fminus = fragment().item();
      tt.data()[i] = saved;
      double fd = (fplus - fminus) / (2.0 * step);
      double a = analytic[pidx][static_cast<size_t>(i)];
      entry.max_rel_err = std::max(entry.max_rel_err, rel_err(a, fd));
      ++entry.entries_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
    ++pidx;
  }
  return report;
}

GradCheckReport check_gradients(const std::function<Tensor()>& fragment,
                                ParamSet& params, double step,
                                int64_t max_entries_per_param,
                                uint64_t subsample_seed) {
  std::vector<std::pair<std::string, Tensor>> list;
  for (auto& p : params.list()) {
    if (p.trainable) list.emplace_back(p.name, p.tensor);
  }
  return check_gradients(fragment, list, step, max_entries_per_param, subsample_seed);
}

}  // namespace badiff
