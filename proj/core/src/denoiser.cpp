#include "badiff/denoiser.hpp"

#include <cmath>

#include "badiff/ops.hpp"

namespace badiff {

namespace {
double conv_init_stddev(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }
}  // namespace

void DenoiserConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("denoiser: no levels configured");
  for (int w : levels) {
    if (w <= 0) throw std::invalid_argument("denoiser: level widths must be positive");
    if (w % groups != 0) {
      throw std::invalid_argument("denoiser: groups must divide every level width");
    }
  }
  if (blocks_per_level < 1) throw std::invalid_argument("denoiser: need >= 1 block per level");
  if (time_embed_dim <= 0 || time_embed_dim % 2 != 0) {
    throw std::invalid_argument("denoiser: time_embed_dim must be positive and even");
  }
  if (entropy_embed_dim <= 0) {
    throw std::invalid_argument("denoiser: entropy_embed_dim must be positive");
  }
  if (!attention.empty() && attention.size() != levels.size()) {
    throw std::invalid_argument("denoiser: attention flags must match level count");
  }
  if (in_channels <= 0) throw std::invalid_argument("denoiser: in_channels must be positive");
}

Tensor film_modulate(const Tensor& block_activation, const Tensor& g_t,
                     const Tensor& h, const Tensor& W_l) {
  if (W_l.ndim() != 2 || W_l.dim(0) != block_activation.dim(1) ||
      W_l.dim(1) != h.dim(-1)) {
    throw std::invalid_argument(
        "film_modulate: W_l must map the embedding to the block width");
  }
  Tensor g_l = ops::add(g_t, ops::dense(h, W_l, Tensor()));
  return ops::add_channel_vec(block_activation, g_l);
}

Denoiser::ResBlock Denoiser::make_block(ParamSet& params, const std::string& name,
                                        int channels, RngStream& rng) {
  ResBlock b;
  b.channels = channels;
  int fan = channels * 9;
  b.gn1_g = params.add_full(name + ".gn1.g", {channels}, 1.0);
  b.gn1_b = params.add_zeros(name + ".gn1.b", {channels});
  b.conv1_w = params.add(name + ".conv1.w", {channels, channels, 3, 3}, rng,
                         conv_init_stddev(fan));
  b.conv1_b = params.add_zeros(name + ".conv1.b", {channels});
  b.gn2_g = params.add_full(name + ".gn2.g", {channels}, 1.0);
  b.gn2_b = params.add_zeros(name + ".gn2.b", {channels});
  b.conv2_w = params.add(name + ".conv2.w", {channels, channels, 3, 3}, rng,
                         conv_init_stddev(fan));
  b.conv2_b = params.add_zeros(name + ".conv2.b", {channels});
  b.tproj_w = params.add(name + ".tproj.w", {channels, cfg_.time_embed_dim}, rng,
                         conv_init_stddev(cfg_.time_embed_dim));
  b.tproj_b = params.add_zeros(name + ".tproj.b", {channels});
  // budget conditioning starts neutral
  b.film_w = params.add_zeros(name + ".film.w", {channels, cfg_.entropy_embed_dim});
  return b;
}

Denoiser::AttnBlock Denoiser::make_attn(ParamSet& params, const std::string& name,
                                        int channels, RngStream& rng) {
  AttnBlock a;
  double s = conv_init_stddev(channels);
  a.gn_g = params.add_full(name + ".gn.g", {channels}, 1.0);
  a.gn_b = params.add_zeros(name + ".gn.b", {channels});
  a.wq = params.add(name + ".wq", {channels, channels}, rng, s);
  a.wk = params.add(name + ".wk", {channels, channels}, rng, s);
  a.wv = params.add(name + ".wv", {channels, channels}, rng, s);
  a.proj_w = params.add(name + ".proj.w", {channels, channels, 1, 1}, rng, s);
  a.proj_b = params.add_zeros(name + ".proj.b", {channels});
  return a;
}

Denoiser::Denoiser(ParamSet& params, const std::string& prefix,
                   const DenoiserConfig& cfg, RngStream& rng)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.attention.empty()) cfg_.attention.assign(cfg_.levels.size(), false);
  size_t L = cfg_.levels.size();

  stem_w_ = params.add(prefix + ".stem.w", {cfg_.levels[0], cfg_.in_channels, 3, 3},
                       rng, conv_init_stddev(cfg_.in_channels * 9));
  stem_b_ = params.add_zeros(prefix + ".stem.b", {cfg_.levels[0]});

  enc_blocks_.resize(L);
  enc_has_attn_.assign(L, 0);
  for (size_t l = 0; l < L; ++l) {
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      enc_blocks_[l].push_back(make_block(
          params, prefix + ".enc" + std::to_string(l) + ".block" + std::to_string(b),
          cfg_.levels[l], rng));
    }
    if (cfg_.attention[l]) {
      enc_has_attn_[l] = 1;
      enc_attn_.push_back(
          make_attn(params, prefix + ".enc" + std::to_string(l) + ".attn",
                    cfg_.levels[l], rng));
    }
    if (l + 1 < L) {
      down_w_.push_back(params.add(prefix + ".down" + std::to_string(l) + ".w",
                                   {cfg_.levels[l + 1], cfg_.levels[l], 3, 3}, rng,
                                   conv_init_stddev(cfg_.levels[l] * 9)));
      down_b_.push_back(
          params.add_zeros(prefix + ".down" + std::to_string(l) + ".b",
                           {cfg_.levels[l + 1]}));
    }
  }

  dec_blocks_.resize(L > 0 ? L - 1 : 0);
  dec_has_attn_.assign(L > 0 ? L - 1 : 0, 0);
  for (size_t l = L; l-- > 1;) {
    int cin = cfg_.levels[l];
    int cout = cfg_.levels[l - 1];
    std::string name = prefix + ".dec" + std::to_string(l - 1);
    up_w_.push_back(params.add(name + ".up.w", {cout, cin, 3, 3}, rng,
                               conv_init_stddev(cin * 9)));
    up_b_.push_back(params.add_zeros(name + ".up.b", {cout}));
    fuse_w_.push_back(params.add(name + ".fuse.w", {cout, 2 * cout, 3, 3}, rng,
                                 conv_init_stddev(2 * cout * 9)));
    fuse_b_.push_back(params.add_zeros(name + ".fuse.b", {cout}));
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      dec_blocks_[l - 1].push_back(
          make_block(params, name + ".block" + std::to_string(b), cout, rng));
    }
    if (cfg_.attention[l - 1]) {
      dec_has_attn_[l - 1] = 1;
      dec_attn_.push_back(make_attn(params, name + ".attn", cout, rng));
    }
  }

  head_gn_g_ = params.add_full(prefix + ".head.gn.g", {cfg_.levels[0]}, 1.0);
  head_gn_b_ = params.add_zeros(prefix + ".head.gn.b", {cfg_.levels[0]});
  // zero-initialized output projection: the untrained net predicts zero noise
  head_w_ = params.add_zeros(prefix + ".head.w",
                             {cfg_.in_channels, cfg_.levels[0], 3, 3});
  head_b_ = params.add_zeros(prefix + ".head.b", {cfg_.in_channels});
}

Tensor Denoiser::run_block(const ResBlock& blk, const Tensor& x,
                           const Tensor& g_base, const Tensor& h) const {
  Tensor g_t = ops::dense(g_base, blk.tproj_w, blk.tproj_b);
  Tensor a = film_modulate(x, g_t, h, blk.film_w);
  Tensor y = ops::conv2d(ops::silu(ops::group_norm(a, blk.gn1_g, blk.gn1_b, cfg_.groups)),
                         blk.conv1_w, blk.conv1_b, 1, 1);
  y = ops::conv2d(ops::silu(ops::group_norm(y, blk.gn2_g, blk.gn2_b, cfg_.groups)),
                  blk.conv2_w, blk.conv2_b, 1, 1);
  return ops::add(x, y);
}

Tensor Denoiser::run_attn(const AttnBlock& blk, const Tensor& x) const {
  Tensor n = ops::group_norm(x, blk.gn_g, blk.gn_b, cfg_.groups);
  Tensor att = ops::attention2d(n, blk.wq, blk.wk, blk.wv);
  return ops::add(x, ops::conv2d(att, blk.proj_w, blk.proj_b, 1, 0));
}

Denoiser::Output Denoiser::forward(const Tensor& x_t, const std::vector<int>& t,
                                   const Tensor& h) const {
  if (x_t.ndim() != 4 || x_t.dim(1) != cfg_.in_channels) {
    throw std::invalid_argument("denoiser: input must be [N,C,H,W] with configured C");
  }
  if (static_cast<int64_t>(t.size()) != x_t.dim(0)) {
    throw std::invalid_argument("denoiser: one timestep per sample required");
  }
  if (h.ndim() != 2 || h.dim(0) != x_t.dim(0) || h.dim(1) != cfg_.entropy_embed_dim) {
    throw std::invalid_argument("denoiser: entropy embedding must be [N,d]");
  }
  size_t L = cfg_.levels.size();
  Tensor g_base = embed_timestep(t, cfg_.time_embed_dim);
  Tensor x = ops::conv2d(x_t, stem_w_, stem_b_, 1, 1);

  std::vector<Tensor> skips(L);
  size_t enc_attn_idx = 0;
  for (size_t l = 0; l < L; ++l) {
    for (const auto& blk : enc_blocks_[l]) x = run_block(blk, x, g_base, h);
    if (enc_has_attn_[l]) x = run_attn(enc_attn_[enc_attn_idx++], x);
    skips[l] = x;
    if (l + 1 < L) x = ops::conv2d(x, down_w_[l], down_b_[l], 2, 1);
  }

  Output out;
  out.mid = x;

  size_t dec_attn_idx = 0;
  for (size_t i = 0; i < up_w_.size(); ++i) {
    size_t l = L - 1 - i;  // decoding into level l-1
    x = ops::conv2d(ops::upsample_nearest2(x), up_w_[i], up_b_[i], 1, 1);
    x = ops::concat_channels(x, skips[l - 1]);
    x = ops::conv2d(x, fuse_w_[i], fuse_b_[i], 1, 1);
    for (const auto& blk : dec_blocks_[l - 1]) x = run_block(blk, x, g_base, h);
    if (dec_has_attn_[l - 1]) x = run_attn(dec_attn_[dec_attn_idx++], x);
  }

  Tensor y = ops::silu(ops::group_norm(x, head_gn_g_, head_gn_b_, cfg_.groups));
  out.eps = ops::conv2d(y, head_w_, head_b_, 1, 1);
  return out;
}

}  // namespace badiff
