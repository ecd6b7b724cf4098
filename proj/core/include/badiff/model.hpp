#pragma once
#include <memory>
#include <string>
#include <vector>

#include "badiff/denoiser.hpp"
#include "badiff/embeddings.hpp"
#include "badiff/entropy_model.hpp"
#include "badiff/schedule.hpp"
#include "badiff/tensor.hpp"

namespace badiff {

struct PolicyConfig {
  std::vector<int> hidden = {256, 128};

  void validate() const;
};

struct ModelConfig {
  DenoiserConfig denoiser;
  EntropyModelConfig entropy;
  PolicyConfig policy;
  int schedule_steps = kDefaultSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  BudgetRange budget{0.2, 2.0};
  int embed_hidden = 128;  // entropy embedding MLP width
  int image_size = 16;     // spatial size sampling runs at
  uint64_t init_seed = 1;

  void validate() const;
};

// Stop-probability head over [pooled mid feature | timestep | budget] with
// a zero-initialized output layer, so the untrained policy answers 0.5.
class PolicyNet {
 public:
  PolicyNet() = default;
  PolicyNet(ParamSet& params, const std::string& prefix, int feature_dim,
            int time_dim, int entropy_dim, const PolicyConfig& cfg,
            RngStream& rng);

  // pooled: [N,F], t_emb: [N,Td], h: [N,d] -> probabilities [N]
  Tensor forward(const Tensor& pooled, const Tensor& t_emb, const Tensor& h) const;

 private:
  std::vector<Tensor> ws_, bs_;
};

// Everything trainable plus the schedule, built deterministically from the
// config seed. Parameter registration order is the checkpoint order.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const Denoiser& denoiser() const { return denoiser_; }
  const EntropyEmbed& embed() const { return embed_; }
  const EntropyModel& entropy() const { return entropy_; }
  const PolicyNet& policy() const { return policy_; }

  // eps prediction with the entropy budget wired through every block
  Denoiser::Output denoise(const Tensor& x_t, const std::vector<int>& t,
                           const std::vector<EntropyBudget>& budgets) const;
  Tensor denoise_eps(const Tensor& x_t, int t, const EntropyBudget& budget) const;

  // p_t for a single latent state
  double stop_probability(const Tensor& x_t, int t, const EntropyBudget& budget) const;

  // gradient-check plumbing: the soft-bin path is a straight-through
  // estimator, so finite-difference suites turn it off
  void set_soft_bin_tau(double tau) { entropy_.set_soft_bin_tau(tau); }

 private:
  ModelConfig cfg_;
  ParamSet params_;
  NoiseSchedule sched_;
  Denoiser denoiser_;
  EntropyEmbed embed_;
  EntropyModel entropy_;
  PolicyNet policy_;
};

}  // namespace badiff
