#pragma once
#include <vector>

#include "badiff/tensor.hpp"

namespace badiff {

// Per-step noise coefficients for T steps; index t-1 holds step t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  double beta_at(int t) const;       // t in [1,T]
  double alpha_at(int t) const;
  double alpha_bar_at(int t) const;
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// Desk-scale default: 200 steps with the 1000-step DDPM beta range rescaled
// by 1000/T, so the terminal state is near-pure noise (alpha_bar_T ~ 4e-5).
inline constexpr int kDefaultSteps = 200;
inline constexpr double kDefaultBetaStart = 5e-4;
inline constexpr double kDefaultBetaEnd = 0.1;

inline NoiseSchedule make_default_schedule() {
  return make_linear_schedule(kDefaultSteps, kDefaultBetaStart, kDefaultBetaEnd);
}

// Target code length in bits per pixel.
struct EntropyBudget {
  double bpp = 1.0;
};

struct BudgetRange {
  double lo = 0.2;
  double hi = 2.0;
  bool contains(double bpp) const { return bpp >= lo && bpp <= hi; }
};

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched);
// Batched variant with a per-sample timestep.
Tensor forward_diffuse(const Tensor& x0, const std::vector<int>& t,
                       const Tensor& eps, const NoiseSchedule& sched);

// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t), clamped to [-1,1].
Tensor reconstruct_x0(const Tensor& x_t, int t, const Tensor& eps_hat,
                      const NoiseSchedule& sched);
Tensor reconstruct_x0(const Tensor& x_t, const std::vector<int>& t,
                      const Tensor& eps_hat, const NoiseSchedule& sched);

// x_{t-1} = (x_t - ((1-a_t)/sqrt(1-abar_t)) eps_hat)/sqrt(a_t) + sqrt(b_t) z,
// with the noise term dropped at t = 1.
Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_hat,
                    const Tensor& z, const NoiseSchedule& sched);

}  // namespace badiff
