#pragma once
#include <functional>
#include <string>
#include <vector>

#include "badiff/checkpoint.hpp"
#include "badiff/config.hpp"
#include "badiff/image.hpp"
#include "badiff/model.hpp"
#include "badiff/policy.hpp"

namespace badiff {

// Uniform budget draw over the training range.
EntropyBudget sample_budget(RngStream& rng, const BudgetRange& range);

// Adam with global-norm gradient clipping over the trainable parameters.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig cfg);

  // clips gradients to cfg.clip_norm, then applies one bias-corrected step
  void step(ParamSet& params);

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // checkpoint plumbing
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  const std::vector<std::vector<double>>& moments_m() const { return m_; }
  const std::vector<std::vector<double>>& moments_v() const { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // ParamSet registration order
};

struct TrainingBatch {
  Tensor x0;  // [N,1,H,W]
  std::vector<uint32_t> image_ids;
  std::vector<int> t;
  Tensor eps;
  std::vector<EntropyBudget> budgets;
};

struct LossBreakdown {
  double total = 0.0;
  double denoise = 0.0;
  double entropy = 0.0;
  double calibration = 0.0;
  double stop = 0.0;
  double mean_h_pred = 0.0;
  double mean_h_target = 0.0;
};

// The four-term objective. Terms with zero weight are skipped entirely, so
// with all weights zero this is exactly the plain denoising loss. Teacher
// labels are required only when lambda_stop > 0.
Tensor total_loss(const Model& model, const TrainingBatch& batch,
                  const LossWeights& weights,
                  const std::vector<LabelRecord>* labels,
                  const std::string& stop_budget, LossBreakdown* breakdown);

// Offline teacher labels for `count` image ids (full-length sampling run per
// id at its cycling budget).
std::vector<LabelRecord> build_label_records(const Model& model, int count,
                                             uint64_t label_seed, double beta,
                                             double gamma);

struct TrainHooks {
  // called after every iteration (metrics row already written)
  std::function<void(int64_t iter, const LossBreakdown&)> on_iteration;
};

// The training loop: compose batch, diffuse, predict, reconstruct, evaluate
// the four losses, clip + Adam. Deterministic given the checkpointed RNG
// streams; aborts with numeric_error on a non-finite loss.
void train(Model& model, AdamState& adam, TrainerRng& rng, int64_t& iteration,
           const TrainConfig& cfg, const PolicyRunConfig& policy_cfg,
           const std::vector<ImageU8>& dataset, std::vector<LabelRecord>& labels,
           const std::string& metrics_csv, const std::string& checkpoint_path,
           const std::string& config_text, const TrainHooks& hooks = {});

}  // namespace badiff
