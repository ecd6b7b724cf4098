#include "badiff/policy.hpp"
#include <limits>

#include <cmath>
#include <cstring>
#include <fstream>

#include "badiff/errors.hpp"
#include "badiff/ops.hpp"

namespace badiff {

Tensor pooled_feature(const Tensor& x) { return ops::mean_pool_spatial(x); }

namespace {

Tensor randn_like_image(const Model& model, RngStream& rng) {
  int size = model.config().image_size;
  return Tensor::randn({1, model.config().denoiser.in_channels, size, size}, rng);
}

}  // namespace

CostTrajectory record_trajectory(const Model& model, const EntropyBudget& budget,
                                 uint64_t seed, double beta, double gamma) {
  NoGradGuard ng;
  const NoiseSchedule& sched = model.schedule();
  int T = sched.T;
  RngStream rng(seed);
  RngStream init_rng = rng.fork(1);
  RngStream step_rng = rng.fork(2);

  Tensor x = randn_like_image(model, init_rng);
  std::vector<EntropyBudget> hs{budget};
  Tensor h = model.embed().forward(hs);

  CostTrajectory traj;
  traj.beta = beta;
  traj.gamma = gamma;
  traj.steps.reserve(static_cast<size_t>(T));
  std::vector<Tensor> recons;
  recons.reserve(static_cast<size_t>(T));
  std::vector<double> entropies;
  entropies.reserve(static_cast<size_t>(T));

  for (int t = T; t >= 1; --t) {
    std::vector<int> ts{t};
    auto out = model.denoiser().forward(x, ts, h);
    Tensor x0_hat = reconstruct_x0(x, t, out.eps, sched);
    recons.push_back(x0_hat);
    entropies.push_back(model.entropy().bpp(x0_hat).values()[0]);
    Tensor z = t > 1 ? Tensor::randn(x.shape(), step_rng) : Tensor();
    x = reverse_step(x, t, out.eps, z, sched);
  }

  const Tensor& x_ref = recons.back();
  for (int i = 0; i < T; ++i) {
    CostEntry e;
    e.t = T - i;
    e.entropy = entropies[static_cast<size_t>(i)];
    double mse = 0.0;
    const auto& a = recons[static_cast<size_t>(i)].values();
    const auto& b = x_ref.values();
    for (size_t j = 0; j < a.size(); ++j) {
      double d = a[j] - b[j];
      mse += d * d;
    }
    e.distortion = mse / static_cast<double>(a.size());
    e.compute = static_cast<double>(i + 1);
    e.total = e.entropy + beta * e.distortion + gamma * e.compute;
    traj.steps.push_back(e);
  }
  return traj;
}

StopLabels teacher_labels(const CostTrajectory& traj) {
  if (traj.steps.empty()) {
    throw std::invalid_argument("teacher_labels: empty trajectory");
  }
  size_t n = traj.steps.size();
  StopLabels labels;
  labels.y.assign(n, 0);
  double suffix_min = std::numeric_limits<double>::infinity();
  for (size_t i = n; i-- > 0;) {
    labels.y[i] = traj.steps[i].total <= suffix_min ? 1 : 0;
    suffix_min = std::min(suffix_min, traj.steps[i].total);
  }
  return labels;
}

Tensor stop_probability(const Model& model, const Denoiser::Output& denoised,
                        const std::vector<int>& t, const Tensor& h) {
  Tensor pooled = pooled_feature(denoised.mid);
  Tensor t_emb = embed_timestep(t, model.config().denoiser.time_embed_dim);
  return model.policy().forward(pooled, t_emb, h);
}

Tensor stop_loss(const std::vector<uint8_t>& y, const Tensor& p) {
  if (static_cast<size_t>(p.numel()) != y.size()) {
    throw std::invalid_argument("stop_loss: length mismatch");
  }
  std::vector<double> targets(y.size());
  for (size_t i = 0; i < y.size(); ++i) targets[i] = y[i] ? 1.0 : 0.0;
  return ops::bce_mean(p, targets);
}

SampleResult adaptive_sample(const Model& model, const EntropyBudget& budget,
                             uint64_t seed, double threshold) {
  NoGradGuard ng;
  const NoiseSchedule& sched = model.schedule();
  int T = sched.T;
  RngStream rng(seed);
  RngStream init_rng = rng.fork(1);
  RngStream step_rng = rng.fork(2);

  Tensor x = randn_like_image(model, init_rng);
  std::vector<EntropyBudget> hs{budget};
  Tensor h = model.embed().forward(hs);
  std::vector<int> ts{T};
  auto out = model.denoiser().forward(x, ts, h);

  SampleResult res;
  for (int t = T; t >= 1; --t) {
    Tensor z = t > 1 ? Tensor::randn(x.shape(), step_rng) : Tensor();
    x = reverse_step(x, t, out.eps, z, sched);
    if (t == 1) {
      res.image = ops::clamp(x, -1.0, 1.0);
      res.tau = 1;
      res.steps_executed = T;
      return res;
    }
    ts[0] = t - 1;
    out = model.denoiser().forward(x, ts, h);
    Tensor t_emb = embed_timestep(ts, model.config().denoiser.time_embed_dim);
    double p = model.policy()
                   .forward(pooled_feature(out.mid), t_emb, h)
                   .values()[0];
    if (p >= threshold) {
      res.image = reconstruct_x0(x, t - 1, out.eps, sched);
      res.tau = t;
      res.steps_executed = T - t + 1;
      res.stop_probability = p;
      return res;
    }
  }
  throw std::logic_error("adaptive_sample: unreachable");
}

EntropyBudget budget_for_image(uint32_t image_id, const BudgetRange& range) {
  int level = static_cast<int>(image_id % kLabelBudgetLevels);
  double frac = kLabelBudgetLevels == 1
                    ? 0.5
                    : static_cast<double>(level) / (kLabelBudgetLevels - 1);
  return EntropyBudget{range.lo + (range.hi - range.lo) * frac};
}

namespace {

template <typename T>
void put_raw(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw format_error("label cache truncated");
  return v;
}

}  // namespace

void write_label_cache(const std::string& path,
                       const std::vector<LabelRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot open for writing: " + path);
  out.write("BALB", 4);
  put_raw<uint32_t>(out, static_cast<uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.cost.size() != r.y.size()) {
      throw std::invalid_argument("label record: cost/label length mismatch");
    }
    put_raw<uint32_t>(out, r.image_id);
    put_raw<uint32_t>(out, static_cast<uint32_t>(r.cost.size()));
    for (size_t i = 0; i < r.cost.size(); ++i) {
      put_raw<double>(out, r.cost[i]);
      put_raw<uint8_t>(out, r.y[i]);
    }
  }
  if (!out) throw format_error("label cache write failed: " + path);
}

std::vector<LabelRecord> read_label_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open label cache: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BALB", 4) != 0) {
    throw format_error("label cache: bad magic");
  }
  uint32_t count = get_raw<uint32_t>(in);
  std::vector<LabelRecord> records(count);
  for (auto& r : records) {
    r.image_id = get_raw<uint32_t>(in);
    uint32_t steps = get_raw<uint32_t>(in);
    r.cost.resize(steps);
    r.y.resize(steps);
    for (uint32_t i = 0; i < steps; ++i) {
      r.cost[i] = get_raw<double>(in);
      r.y[i] = get_raw<uint8_t>(in);
    }
  }
  return records;
}

}  // namespace badiff
