#include "badiff/model.hpp"

#include "badiff/ops.hpp"

namespace badiff {

void PolicyConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("policy: need at least one hidden layer");
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("policy: hidden widths must be positive");
  }
}

void ModelConfig::validate() const {
  denoiser.validate();
  entropy.validate();
  policy.validate();
  if (schedule_steps < 1) throw std::invalid_argument("model: schedule_steps must be >= 1");
  if (!(budget.lo < budget.hi)) throw std::invalid_argument("model: budget range empty");
  if (embed_hidden <= 0) throw std::invalid_argument("model: embed_hidden must be positive");
}

PolicyNet::PolicyNet(ParamSet& params, const std::string& prefix, int feature_dim,
                     int time_dim, int entropy_dim, const PolicyConfig& cfg,
                     RngStream& rng) {
  cfg.validate();
  int in_dim = feature_dim + time_dim + entropy_dim;
  for (size_t i = 0; i < cfg.hidden.size(); ++i) {
    int out_dim = cfg.hidden[i];
    ws_.push_back(params.add(prefix + ".w" + std::to_string(i), {out_dim, in_dim},
                             rng, 1.0 / std::sqrt(static_cast<double>(in_dim))));
    bs_.push_back(params.add_zeros(prefix + ".b" + std::to_string(i), {out_dim}));
    in_dim = out_dim;
  }
  // zero head: the untrained policy is exactly 0.5 everywhere
  ws_.push_back(params.add_zeros(prefix + ".w_head", {1, in_dim}));
  bs_.push_back(params.add_zeros(prefix + ".b_head", {1}));
}

Tensor PolicyNet::forward(const Tensor& pooled, const Tensor& t_emb,
                          const Tensor& h) const {
  Tensor x = ops::concat_features({pooled, t_emb, h});
  for (size_t i = 0; i + 1 < ws_.size(); ++i) {
    x = ops::silu(ops::dense(x, ws_[i], bs_[i]));
  }
  Tensor logits = ops::dense(x, ws_.back(), bs_.back());
  return ops::sigmoid(logits.reshaped({pooled.dim(0)}));
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  sched_ = make_linear_schedule(cfg_.schedule_steps, cfg_.beta_start, cfg_.beta_end);
  RngStream rng(cfg_.init_seed);
  RngStream den_rng = rng.fork(1);
  RngStream emb_rng = rng.fork(2);
  RngStream ent_rng = rng.fork(3);
  RngStream pol_rng = rng.fork(4);
  denoiser_ = Denoiser(params_, "denoiser", cfg_.denoiser, den_rng);
  embed_ = EntropyEmbed(params_, "embed", cfg_.denoiser.entropy_embed_dim,
                        cfg_.embed_hidden, cfg_.budget, emb_rng);
  entropy_ = EntropyModel(params_, "entropy", cfg_.entropy, ent_rng);
  policy_ = PolicyNet(params_, "policy", denoiser_.mid_channels(),
                      cfg_.denoiser.time_embed_dim, cfg_.denoiser.entropy_embed_dim,
                      cfg_.policy, pol_rng);
}

Denoiser::Output Model::denoise(const Tensor& x_t, const std::vector<int>& t,
                                const std::vector<EntropyBudget>& budgets) const {
  Tensor h = embed_.forward(budgets);
  return denoiser_.forward(x_t, t, h);
}

Tensor Model::denoise_eps(const Tensor& x_t, int t, const EntropyBudget& budget) const {
  std::vector<int> ts(static_cast<size_t>(x_t.dim(0)), t);
  std::vector<EntropyBudget> hs(static_cast<size_t>(x_t.dim(0)), budget);
  return denoise(x_t, ts, hs).eps;
}

double Model::stop_probability(const Tensor& x_t, int t,
                               const EntropyBudget& budget) const {
  std::vector<int> ts(static_cast<size_t>(x_t.dim(0)), t);
  std::vector<EntropyBudget> hs(static_cast<size_t>(x_t.dim(0)), budget);
  Tensor h = embed_.forward(hs);
  auto out = denoiser_.forward(x_t, ts, h);
  Tensor pooled = ops::mean_pool_spatial(out.mid);
  Tensor t_emb = embed_timestep(ts, cfg_.denoiser.time_embed_dim);
  return policy_.forward(pooled, t_emb, h).values()[0];
}

}  // namespace badiff
