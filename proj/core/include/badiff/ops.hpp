#pragma once
#include "badiff/tensor.hpp"

namespace badiff {
namespace ops {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// max(0, x); the subgradient at 0 is taken as 0 (inactive side).
Tensor max0(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
// x: [N,C,H,W]; gamma/beta: [C]; groups must divide C.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int groups, double eps = 1e-5);
// [N,C,H,W] -> [N,C] spatial mean.
Tensor mean_pool_spatial(const Tensor& x);

// x: [N,in...] flattened to rows; weights: [out,in]; bias: [out].
Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias);

// x: [N,C,H,W]; kernel: [O,C,kh,kw] with odd kh,kw; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);

// Strictly causal conv: mask [kh,kw] must zero the center tap and every
// raster-order-future tap. Stride 1, same-size output.
Tensor masked_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     const Tensor& mask);
// 1 above the center row and left of center in the center row, else 0.
Tensor make_causal_mask(int kh, int kw);

Tensor upsample_nearest2(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Each input [N,Fi] -> [N, sum Fi].
Tensor concat_features(const std::vector<Tensor>& parts);
// x: [N,C,H,W] + v: [N,C] broadcast over spatial dims.
Tensor add_channel_vec(const Tensor& x, const Tensor& v);
// x: [N,...] scaled per sample by s: [N].
Tensor scale_per_sample(const Tensor& x, const Tensor& s);

// Mean binary cross-entropy in nats; p clipped to [1e-7, 1-1e-7].
// Targets are constants; gradient flows into p only.
Tensor bce_mean(const Tensor& p, const std::vector<double>& targets);

// Single-head self-attention over spatial positions. x: [N,C,H,W],
// wq/wk/wv: [C,C]. Returns attended features, no residual or projection.
Tensor attention2d(const Tensor& x, const Tensor& wq, const Tensor& wk,
                   const Tensor& wv);

}  // namespace ops
}  // namespace badiff
