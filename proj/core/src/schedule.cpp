#include "badiff/schedule.hpp"

#include <cmath>

#include "badiff/ops.hpp"

namespace badiff {

namespace {

void check_t(int t, const NoiseSchedule& s, const char* op) {
  if (t < 1 || t > s.T) {
    throw std::invalid_argument(std::string(op) + ": timestep out of range");
  }
}

std::vector<double> per_sample(const std::vector<int>& ts, const NoiseSchedule& s,
                               double (*f)(double)) {
  std::vector<double> out(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] < 1 || ts[i] > s.T) {
      throw std::invalid_argument("timestep out of range");
    }
    out[i] = f(s.alpha_bar[static_cast<size_t>(ts[i]) - 1]);
  }
  return out;
}

double sqrt_of(double x) { return std::sqrt(x); }
double sqrt_one_minus(double x) { return std::sqrt(1.0 - x); }

}  // namespace

double NoiseSchedule::beta_at(int t) const {
  check_t(t, *this, "beta_at");
  return beta[static_cast<size_t>(t) - 1];
}
double NoiseSchedule::alpha_at(int t) const {
  check_t(t, *this, "alpha_at");
  return alpha[static_cast<size_t>(t) - 1];
}
double NoiseSchedule::alpha_bar_at(int t) const {
  check_t(t, *this, "alpha_bar_at");
  return alpha_bar[static_cast<size_t>(t) - 1];
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument(
        "make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  s.alpha.resize(static_cast<size_t>(T));
  s.alpha_bar.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double b = T == 1 ? beta_start
                      : beta_start + (beta_end - beta_start) * i / (T - 1);
    s.beta[static_cast<size_t>(i)] = b;
    s.alpha[static_cast<size_t>(i)] = 1.0 - b;
    prod *= 1.0 - b;
    s.alpha_bar[static_cast<size_t>(i)] = prod;
  }
  return s;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  check_t(t, sched, "forward_diffuse");
  std::vector<int> ts(static_cast<size_t>(x0.dim(0)), t);
  return forward_diffuse(x0, ts, eps, sched);
}

Tensor forward_diffuse(const Tensor& x0, const std::vector<int>& t,
                       const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    throw std::invalid_argument("forward_diffuse: eps shape mismatch");
  }
  if (static_cast<int64_t>(t.size()) != x0.dim(0)) {
    throw std::invalid_argument("forward_diffuse: one timestep per sample required");
  }
  int n = x0.dim(0);
  Tensor a = Tensor::from_data({n}, per_sample(t, sched, sqrt_of));
  Tensor b = Tensor::from_data({n}, per_sample(t, sched, sqrt_one_minus));
  return ops::add(ops::scale_per_sample(x0, a), ops::scale_per_sample(eps, b));
}

Tensor reconstruct_x0(const Tensor& x_t, int t, const Tensor& eps_hat,
                      const NoiseSchedule& sched) {
  check_t(t, sched, "reconstruct_x0");
  std::vector<int> ts(static_cast<size_t>(x_t.dim(0)), t);
  return reconstruct_x0(x_t, ts, eps_hat, sched);
}

Tensor reconstruct_x0(const Tensor& x_t, const std::vector<int>& t,
                      const Tensor& eps_hat, const NoiseSchedule& sched) {
  if (x_t.shape() != eps_hat.shape()) {
    throw std::invalid_argument("reconstruct_x0: eps_hat shape mismatch");
  }
  if (static_cast<int64_t>(t.size()) != x_t.dim(0)) {
    throw std::invalid_argument("reconstruct_x0: one timestep per sample required");
  }
  int n = x_t.dim(0);
  std::vector<double> inv_sqrt_ab(t.size()), ratio(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 1 || t[i] > sched.T) {
      throw std::invalid_argument("reconstruct_x0: timestep out of range");
    }
    double ab = sched.alpha_bar[static_cast<size_t>(t[i]) - 1];
    if (ab <= 0.0) throw std::invalid_argument("reconstruct_x0: alpha_bar is zero");
    inv_sqrt_ab[i] = 1.0 / std::sqrt(ab);
    ratio[i] = std::sqrt(1.0 - ab) / std::sqrt(ab);
  }
  Tensor t_inv = Tensor::from_data({n}, std::move(inv_sqrt_ab));
  Tensor t_ratio = Tensor::from_data({n}, std::move(ratio));
  Tensor raw = ops::sub(ops::scale_per_sample(x_t, t_inv),
                        ops::scale_per_sample(eps_hat, t_ratio));
  return ops::clamp(raw, -1.0, 1.0);
}

Tensor reverse_step(const Tensor& x_t, int t, const Tensor& eps_hat,
                    const Tensor& z, const NoiseSchedule& sched) {
  check_t(t, sched, "reverse_step");
  if (x_t.shape() != eps_hat.shape()) {
    throw std::invalid_argument("reverse_step: eps_hat shape mismatch");
  }
  double a = sched.alpha_at(t);
  double ab = sched.alpha_bar_at(t);
  double coef = (1.0 - a) / std::sqrt(1.0 - ab);
  double inv_sqrt_a = 1.0 / std::sqrt(a);
  Tensor mean = ops::scale(ops::sub(x_t, ops::scale(eps_hat, coef)), inv_sqrt_a);
  if (t > 1) {
    if (!z.defined() || z.shape() != x_t.shape()) {
      throw std::invalid_argument("reverse_step: z required for t > 1");
    }
    double sigma = std::sqrt(sched.beta_at(t));
    return ops::add(mean, ops::scale(z, sigma));
  }
  return mean;
}

}  // namespace badiff
