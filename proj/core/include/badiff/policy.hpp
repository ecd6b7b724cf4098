#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "badiff/model.hpp"

namespace badiff {

// Costs recorded in sampling order (t = T down to 1). total must equal
// entropy + beta*distortion + gamma*compute at every entry.
struct CostEntry {
  int t = 0;
  double entropy = 0.0;     // H_phi of the step's x0 estimate, bpp
  double distortion = 0.0;  // MSE to the full-run output
  double compute = 0.0;     // 1-based executed-step count
  double total = 0.0;
};

struct CostTrajectory {
  double beta = 1.0;
  double gamma = 0.002;
  std::vector<CostEntry> steps;
};

struct StopLabels {
  std::vector<uint8_t> y;  // aligned with CostTrajectory::steps
};

// [N,C,H,W] -> [N,C] spatial mean of the latent feature.
Tensor pooled_feature(const Tensor& x);

// One full T-step sampling run at the given budget; every step records the
// entropy of the reconstruction, the distortion to the eventual full-run
// output, and the running compute count.
CostTrajectory record_trajectory(const Model& model, const EntropyBudget& budget,
                                 uint64_t seed, double beta, double gamma);

// y_i = 1 iff C(i) <= min over j >= i (later in sampling order) of C(j);
// a single reverse suffix-min pass. Labels are always a suffix of ones.
StopLabels teacher_labels(const CostTrajectory& traj);

// p_t for a batch of latents (training path; gradients flow into the policy,
// the embedding, and the denoiser features).
Tensor stop_probability(const Model& model, const Denoiser::Output& denoised,
                        const std::vector<int>& t, const Tensor& h);

// Mean binary cross-entropy in nats between teacher labels and p.
Tensor stop_loss(const std::vector<uint8_t>& y, const Tensor& p);

struct SampleResult {
  Tensor image;        // [1,1,H,W], in [-1,1]
  int tau = 0;         // timestep index of the last executed reverse step
  int steps_executed = 0;
  double stop_probability = 0.0;  // p at the stopping decision (0 if full run)
};

// Reverse diffusion from noise with on-the-fly stopping: after producing
// x_{t-1} the policy is evaluated at (x_{t-1}, t-1); at or above the
// threshold the x0 reconstruction at that step is returned.
SampleResult adaptive_sample(const Model& model, const EntropyBudget& budget,
                             uint64_t seed, double threshold = 0.5);

// Fixed budget level per image id used when caching teacher labels, cycling
// over kLabelBudgetLevels points of the training range.
inline constexpr int kLabelBudgetLevels = 8;
EntropyBudget budget_for_image(uint32_t image_id, const BudgetRange& range);

struct LabelRecord {
  uint32_t image_id = 0;
  std::vector<double> cost;  // C(t) in sampling order
  std::vector<uint8_t> y;
};

// Plain binary cache: magic "BALB", u32 record count, then per record
// u32 image id, u32 T, and T pairs (C as f64, y as u8). Little-endian.
void write_label_cache(const std::string& path, const std::vector<LabelRecord>& records);
std::vector<LabelRecord> read_label_cache(const std::string& path);

}  // namespace badiff
