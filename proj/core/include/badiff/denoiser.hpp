#pragma once
#include <string>
#include <vector>

#include "badiff/embeddings.hpp"
#include "badiff/schedule.hpp"
#include "badiff/tensor.hpp"

namespace badiff {

struct DenoiserConfig {
  std::vector<int> levels = {32, 64};  // channel width per resolution level
  int blocks_per_level = 2;
  int time_embed_dim = 64;
  int entropy_embed_dim = 128;  // d
  int groups = 8;
  std::vector<bool> attention;  // per level; empty means none
  int in_channels = 1;

  void validate() const;
};

// g_l = g_t + W_l h added channel-wise ahead of the block's first conv.
// g_t: [N,C] (already projected to block width), h: [N,d], W_l: [C,d].
Tensor film_modulate(const Tensor& block_activation, const Tensor& g_t,
                     const Tensor& h, const Tensor& W_l);

// UNet noise predictor conditioned on timestep and entropy budget.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(ParamSet& params, const std::string& prefix, const DenoiserConfig& cfg,
           RngStream& rng);

  struct Output {
    Tensor eps;  // same shape as input
    Tensor mid;  // deepest encoder activation [N, C_deep, H', W']
  };

  // x_t: [N,C,H,W]; one timestep per sample; h: [N,d] entropy embedding.
  Output forward(const Tensor& x_t, const std::vector<int>& t,
                 const Tensor& h) const;

  const DenoiserConfig& config() const { return cfg_; }
  int mid_channels() const { return cfg_.levels.back(); }

 private:
  struct ResBlock {
    int channels = 0;
    Tensor gn1_g, gn1_b, conv1_w, conv1_b;
    Tensor gn2_g, gn2_b, conv2_w, conv2_b;
    Tensor tproj_w, tproj_b;  // time embedding -> block width
    Tensor film_w;            // W_l: [C,d]
  };
  struct AttnBlock {
    Tensor gn_g, gn_b, wq, wk, wv, proj_w, proj_b;
  };

  ResBlock make_block(ParamSet& params, const std::string& name, int channels,
                      RngStream& rng);
  AttnBlock make_attn(ParamSet& params, const std::string& name, int channels,
                      RngStream& rng);
  Tensor run_block(const ResBlock& blk, const Tensor& x, const Tensor& g_base,
                   const Tensor& h) const;
  Tensor run_attn(const AttnBlock& blk, const Tensor& x) const;

  DenoiserConfig cfg_;
  Tensor stem_w_, stem_b_;
  std::vector<std::vector<ResBlock>> enc_blocks_;
  std::vector<AttnBlock> enc_attn_;
  std::vector<char> enc_has_attn_;
  std::vector<Tensor> down_w_, down_b_;
  std::vector<Tensor> up_w_, up_b_, fuse_w_, fuse_b_;
  std::vector<std::vector<ResBlock>> dec_blocks_;
  std::vector<AttnBlock> dec_attn_;
  std::vector<char> dec_has_attn_;
  Tensor head_gn_g_, head_gn_b_, head_w_, head_b_;
};

}  // namespace badiff
