#pragma once
#include <string>
#include <vector>

#include "badiff/logistic.hpp"
#include "badiff/schedule.hpp"
#include "badiff/tensor.hpp"

namespace badiff {

// Per-pixel discretized-logistic parameters in symbol units.
struct LogisticParams {
  Tensor mu;     // [N,1,H,W]
  Tensor sigma;  // [N,1,H,W], >= kSigmaFloor
};

struct EntropyModelConfig {
  int hyper_channels = 16;        // hyper encoder/decoder width
  int hyper_latent_channels = 8;  // transmitted latent depth
  int context_channels = 16;      // masked-conv branch width
  int fuse_channels = 32;         // 1x1 fusion width
  double soft_bin_tau = 0.05;     // bin-membership temperature, bin units

  void validate() const;
};

// Code-length predictor: a hyperprior branch (2x stride-2 convs down, two
// nearest-neighbor upsamples back) plus a strictly causal masked 5x5 context
// branch over the quantized image, fused by 1x1 convs into per-pixel
// (mu, sigma). The context branch only ever sees quantized-then-dequantized
// pixels so a decoder can reproduce it symbol by symbol.
class EntropyModel {
 public:
  EntropyModel() = default;
  EntropyModel(ParamSet& params, const std::string& prefix,
               const EntropyModelConfig& cfg, RngStream& rng);

  // Differentiable path. x: [N,1,H,W] in model range, H and W multiples of 4.
  LogisticParams predict_params(const Tensor& x) const;
  // H_phi(x) per sample in bits-per-pixel: [N].
  Tensor bpp(const Tensor& x) const;
  Tensor bpp(const Tensor& x, const LogisticParams& p) const;

  // Hyper branch pieces (shared by training and codec paths).
  Tensor hyper_encode(const Tensor& x) const;            // [N,cz,H/4,W/4]
  Tensor hyper_features(const Tensor& z) const;          // [N,cf,H,W]

  // Codec-side sequential evaluation: (mu, sigma) for pixel (px,py) from the
  // already-decoded symbols and precomputed hyper features. deq holds
  // dequantized values for every decoded position (raster order before
  // (px,py)); later entries are ignored.
  struct PixelParams {
    double mu;
    double sigma;
  };
  PixelParams predict_pixel(const std::vector<double>& deq, int width, int height,
                            int px, int py, const Tensor& hyper_feat,
                            int sample_index) const;

  const EntropyModelConfig& config() const { return cfg_; }
  // straight-through soft-bin knob; 0 disables the x-gradient path
  void set_soft_bin_tau(double tau) { cfg_.soft_bin_tau = tau; }

 private:
  Tensor context_features(const Tensor& deq_image) const;
  Tensor fuse(const Tensor& hyper_feat, const Tensor& ctx_feat) const;

  EntropyModelConfig cfg_;
  Tensor he1_w_, he1_b_, he2_w_, he2_b_;
  Tensor hd1_w_, hd1_b_, hd2_w_, hd2_b_;
  Tensor ctx_w_, ctx_b_;
  Tensor mask_;
  Tensor f1_w_, f1_b_, f2_w_, f2_b_;
};

// Differentiable bits-per-pixel of the true bins of x under (mu, sigma).
// The value always scores the hard bin; gradients to mu/sigma are the exact
// analytic PMF derivatives, and gradients to x flow through a logistic
// soft bin membership of temperature tau (disabled when tau <= 0).
Tensor entropy_bpp(const Tensor& x, const LogisticParams& params, double tau);

// max(0, H_pred - H_target) per sample; zero subgradient at equality.
Tensor hinge_loss(const Tensor& h_pred, const std::vector<double>& h_target);
Tensor hinge_loss(const Tensor& h_pred, const EntropyBudget& budget);

// Reference-codec stand-in: per-pixel discretized Laplacian targets centered
// on the causal mean of (left, up, up-left) with scale from the residual.
struct CalibrationTargets {
  int width = 0;
  int height = 0;
  int batch = 0;
  std::vector<double> q;  // [N][K][H*W]

  double at(int n, int k, int pix) const {
    return q[(static_cast<size_t>(n) * kBins + k) * width * height + pix];
  }
};
CalibrationTargets calibration_targets(const Tensor& x);

// Oracle code length of x's own symbols under the calibration targets, bpp.
std::vector<double> oracle_bpp(const Tensor& x);

// Mean cross-entropy (bits) between targets and the model PMF; differentiable
// in mu and sigma.
Tensor calibration_loss(const CalibrationTargets& q, const LogisticParams& params,
                        const SymbolGrid* grids = nullptr);

}  // namespace badiff
