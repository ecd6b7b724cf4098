#include "badiff/entropy_model.hpp"

#include <algorithm>
#include <cmath>

#include "badiff/ops.hpp"

namespace badiff {

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kSigmaBiasInit = 3.0;  // untrained sigma ~ 3 bins

double sigmoid_s(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus_s(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double silu_s(double x) { return x * sigmoid_s(x); }

double laplace_cdf(double t, double m, double b) {
  double z = (t - m) / b;
  return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

void check_image_shape(const Tensor& x, const char* op) {
  if (x.ndim() != 4 || x.dim(1) != 1) {
    throw std::invalid_argument(std::string(op) + ": expected [N,1,H,W]");
  }
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw std::invalid_argument(std::string(op) +
                                ": spatial size must be a multiple of 4");
  }
}

// split a [N,2,H,W] head into its two channels as [N,1,H,W] tensors
Tensor take_channel(const Tensor& head, int channel) {
  using detail::TensorNode;
  int n = head.dim(0), h = head.dim(2), w = head.dim(3);
  int hw = h * w;
  std::vector<double> out(static_cast<size_t>(n) * hw);
  for (int ni = 0; ni < n; ++ni) {
    const double* src = head.data() + (static_cast<size_t>(ni) * 2 + channel) * hw;
    std::copy(src, src + hw, out.data() + static_cast<size_t>(ni) * hw);
  }
  return Tensor::make_op(
      {n, 1, h, w}, std::move(out), {head},
      [n, hw, channel](TensorNode& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int ni = 0; ni < n; ++ni) {
          double* dst = p.grad.data() + (static_cast<size_t>(ni) * 2 + channel) * hw;
          const double* src = self.grad.data() + static_cast<size_t>(ni) * hw;
          for (int i = 0; i < hw; ++i) dst[i] += src[i];
        }
      },
      "take_channel");
}

}  // namespace

void EntropyModelConfig::validate() const {
  if (hyper_channels <= 0 || hyper_latent_channels <= 0 || context_channels <= 0 ||
      fuse_channels <= 0) {
    throw std::invalid_argument("entropy model: channel counts must be positive");
  }
}

EntropyModel::EntropyModel(ParamSet& params, const std::string& prefix,
                           const EntropyModelConfig& cfg, RngStream& rng)
    : cfg_(cfg) {
  cfg_.validate();
  int ch = cfg_.hyper_channels;
  int cz = cfg_.hyper_latent_channels;
  int cc = cfg_.context_channels;
  int cu = cfg_.fuse_channels;
  auto sd = [](int fan) { return 1.0 / std::sqrt(static_cast<double>(fan)); };

  he1_w_ = params.add(prefix + ".he1.w", {ch, 1, 3, 3}, rng, sd(9));
  he1_b_ = params.add_zeros(prefix + ".he1.b", {ch});
  he2_w_ = params.add(prefix + ".he2.w", {cz, ch, 3, 3}, rng, sd(ch * 9));
  he2_b_ = params.add_zeros(prefix + ".he2.b", {cz});
  hd1_w_ = params.add(prefix + ".hd1.w", {ch, cz, 3, 3}, rng, sd(cz * 9));
  hd1_b_ = params.add_zeros(prefix + ".hd1.b", {ch});
  hd2_w_ = params.add(prefix + ".hd2.w", {ch, ch, 3, 3}, rng, sd(ch * 9));
  hd2_b_ = params.add_zeros(prefix + ".hd2.b", {ch});
  ctx_w_ = params.add(prefix + ".ctx.w", {cc, 1, 5, 5}, rng, sd(25));
  ctx_b_ = params.add_zeros(prefix + ".ctx.b", {cc});
  mask_ = ops::make_causal_mask(5, 5);
  f1_w_ = params.add(prefix + ".f1.w", {cu, ch + cc, 1, 1}, rng, sd(ch + cc));
  f1_b_ = params.add_zeros(prefix + ".f1.b", {cu});
  f2_w_ = params.add(prefix + ".f2.w", {2, cu, 1, 1}, rng, 0.01 * sd(cu));
  f2_b_ = params.add_zeros(prefix + ".f2.b", {2});
  f2_b_.values()[1] = kSigmaBiasInit;
}

Tensor EntropyModel::hyper_encode(const Tensor& x) const {
  check_image_shape(x, "hyper_encode");
  Tensor h = ops::silu(ops::conv2d(x, he1_w_, he1_b_, 2, 1));
  return ops::conv2d(h, he2_w_, he2_b_, 2, 1);
}

Tensor EntropyModel::hyper_features(const Tensor& z) const {
  Tensor h = ops::silu(ops::conv2d(ops::upsample_nearest2(z), hd1_w_, hd1_b_, 1, 1));
  return ops::silu(ops::conv2d(ops::upsample_nearest2(h), hd2_w_, hd2_b_, 1, 1));
}

Tensor EntropyModel::context_features(const Tensor& deq_image) const {
  return ops::silu(ops::masked_conv2d(deq_image, ctx_w_, ctx_b_, mask_));
}

Tensor EntropyModel::fuse(const Tensor& hyper_feat, const Tensor& ctx_feat) const {
  Tensor cat = ops::concat_channels(hyper_feat, ctx_feat);
  return ops::conv2d(ops::silu(ops::conv2d(cat, f1_w_, f1_b_, 1, 0)), f2_w_, f2_b_,
                     1, 0);
}

LogisticParams EntropyModel::predict_params(const Tensor& x) const {
  check_image_shape(x, "predict_params");
  Tensor hyper = hyper_features(hyper_encode(x));

  // the context branch sees exactly what a decoder will see: quantized pixels
  int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor deq = Tensor::zeros({n, 1, h, w});
  {
    const double* src = x.data();
    double* dst = deq.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
      dst[i] = bin_center_x(quantize_symbol(src[i]));
    }
  }
  Tensor ctx = context_features(deq);

  Tensor head = fuse(hyper, ctx);
  LogisticParams p;
  p.mu = ops::scale(take_channel(head, 0), 0.5 * kBins);
  p.sigma = ops::add_scalar(ops::softplus(take_channel(head, 1)), kSigmaFloor);
  return p;
}

Tensor entropy_bpp(const Tensor& x, const LogisticParams& params, double tau) {
  using detail::TensorNode;
  if (x.shape() != params.mu.shape() || x.shape() != params.sigma.shape()) {
    throw std::invalid_argument("entropy_bpp: shape mismatch");
  }
  int n = x.dim(0);
  int64_t per = x.numel() / n;
  double inv = 1.0 / static_cast<double>(per);
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  const double* xv = x.data();
  const double* mv = params.mu.data();
  const double* sv = params.sigma.data();
  for (int ni = 0; ni < n; ++ni) {
    double acc = 0.0;
    for (int64_t i = 0; i < per; ++i) {
      size_t idx = static_cast<size_t>(ni) * per + i;
      int k = quantize_symbol(xv[idx]);
      acc += logistic_bits(k, mv[idx], sv[idx]).bits;
    }
    out[static_cast<size_t>(ni)] = acc * inv;
  }
  auto backward = [n, per, inv, tau](TensorNode& self) {
    auto& xp = *self.parents[0];
    auto& mp = *self.parents[1];
    auto& sp = *self.parents[2];
    xp.ensure_grad();
    mp.ensure_grad();
    sp.ensure_grad();
    for (int ni = 0; ni < n; ++ni) {
      double g = self.grad[static_cast<size_t>(ni)] * inv;
      if (g == 0.0) continue;
      for (int64_t i = 0; i < per; ++i) {
        size_t idx = static_cast<size_t>(ni) * per + i;
        double xval = xp.value[idx];
        double mu = mp.value[idx];
        double sigma = sp.value[idx];
        int k = quantize_symbol(xval);
        BitsAndGrad bg = logistic_bits(k, mu, sigma);
        mp.grad[idx] += g * bg.dbits_dmu;
        sp.grad[idx] += g * bg.dbits_dsigma;
        if (tau > 0.0) {
          // soft bin membership: only edges within a few tau of s matter
          double s = symbol_coord(xval);
          double dBds = 0.0;
          int lo = std::max(1, k - 1);
          int hi = std::min(kBins - 1, k + 2);
          for (int e = lo; e <= hi; ++e) {
            double z = (s - bin_lower_s(e)) / tau;
            if (std::abs(z) > 40.0) continue;
            double sz = sigmoid_s(z);
            double wgt = sz * (1.0 - sz) / tau;
            double bits_hi = logistic_bits(e, mu, sigma).bits;
            double bits_lo = logistic_bits(e - 1, mu, sigma).bits;
            dBds += wgt * (bits_hi - bits_lo);
          }
          xp.grad[idx] += g * dBds * 0.5 * kBins;
        }
      }
    }
  };
  return Tensor::make_op({n}, std::move(out), {x, params.mu, params.sigma},
                         std::move(backward), "entropy_bpp");
}

Tensor EntropyModel::bpp(const Tensor& x) const { return bpp(x, predict_params(x)); }

Tensor EntropyModel::bpp(const Tensor& x, const LogisticParams& p) const {
  return entropy_bpp(x, p, cfg_.soft_bin_tau);
}

Tensor hinge_loss(const Tensor& h_pred, const std::vector<double>& h_target) {
  if (static_cast<size_t>(h_pred.numel()) != h_target.size()) {
    throw std::invalid_argument("hinge_loss: length mismatch");
  }
  Tensor targets = Tensor::from_data(h_pred.shape(), h_target);
  return ops::max0(ops::sub(h_pred, targets));
}

Tensor hinge_loss(const Tensor& h_pred, const EntropyBudget& budget) {
  return hinge_loss(
      h_pred, std::vector<double>(static_cast<size_t>(h_pred.numel()), budget.bpp));
}

CalibrationTargets calibration_targets(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != 1) {
    throw std::invalid_argument("calibration_targets: expected [N,1,H,W]");
  }
  int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  CalibrationTargets ct;
  ct.batch = n;
  ct.width = w;
  ct.height = h;
  ct.q.assign(static_cast<size_t>(n) * kBins * h * w, 0.0);
  const double* xv = x.data();
  for (int ni = 0; ni < n; ++ni) {
    const double* img = xv + static_cast<size_t>(ni) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        int pix = y * w + xx;
        // causal prediction from quantized neighbors (decoder-visible state);
        // the origin has no context and is treated as known
        double own = bin_lower_s(quantize_symbol(img[pix])) + 0.5;
        double sum = 0.0;
        int cnt = 0;
        auto take = [&](int yy, int xx2) {
          sum += bin_lower_s(quantize_symbol(img[yy * w + xx2])) + 0.5;
          ++cnt;
        };
        if (xx > 0) take(y, xx - 1);
        if (y > 0) take(y - 1, xx);
        if (y > 0 && xx > 0) take(y - 1, xx - 1);
        double pred = cnt > 0 ? sum / cnt : own;
        double resid = own - pred;
        double scale = std::max(0.1, 0.5 * std::abs(resid));
        // discretized Laplace with absorbed tails; telescoping sum is 1
        double prev = 0.0;
        for (int k = 0; k < kBins; ++k) {
          double next =
              k == kBins - 1 ? 1.0 : laplace_cdf(bin_lower_s(k + 1), pred, scale);
          ct.q[(static_cast<size_t>(ni) * kBins + k) * h * w + pix] = next - prev;
          prev = next;
        }
      }
    }
  }
  return ct;
}

std::vector<double> oracle_bpp(const Tensor& x) {
  CalibrationTargets ct = calibration_targets(x);
  int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const double* xv = x.data();
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int ni = 0; ni < n; ++ni) {
    double acc = 0.0;
    for (int pix = 0; pix < h * w; ++pix) {
      int k = quantize_symbol(xv[static_cast<size_t>(ni) * h * w + pix]);
      double q = ct.at(ni, k, pix);
      acc += q > 0.0 ? -std::log2(q) : 1074.0;  // floor at the smallest denormal
    }
    out[static_cast<size_t>(ni)] = acc / (h * w);
  }
  return out;
}

Tensor calibration_loss(const CalibrationTargets& q, const LogisticParams& params,
                        const SymbolGrid* grids) {
  using detail::TensorNode;
  int n = params.mu.dim(0), h = params.mu.dim(2), w = params.mu.dim(3);
  if (q.batch != n || q.height != h || q.width != w) {
    throw std::invalid_argument("calibration_loss: target/param shape mismatch");
  }
  if (grids && (grids->width != w || grids->height != h)) {
    throw std::invalid_argument("calibration_loss: grid shape mismatch");
  }
  int hw = h * w;
  double inv = 1.0 / (static_cast<double>(n) * hw);

  // one pass over the shared edge CDF values gives every bin's cross-entropy
  // term and its (mu, sigma) gradient; underflowed bins take the stable path
  auto accumulate = [n, hw, q](const double* mv, const double* sv, int ni, int pix,
                               double* dmu, double* dsigma) {
    size_t idx = static_cast<size_t>(ni) * hw + pix;
    double mu = mv[idx];
    double sigma = sv[idx];
    double loss = 0.0, gmu = 0.0, gsigma = 0.0;
    if (sigma >= kSigmaUniform) {
      for (int k = 0; k < kBins; ++k) {
        loss += q.at(ni, k, pix) * std::log2(static_cast<double>(kBins));
      }
    } else {
      double z_prev = 0.0, sp_prev = 0.0, cdf_prev = 0.0;  // at -inf
      for (int k = 0; k < kBins; ++k) {
        double z_next = 0.0, cdf_next = 1.0, sp_next = 0.0;
        if (k < kBins - 1) {
          z_next = (bin_lower_s(k + 1) - mu) / sigma;
          cdf_next = sigmoid_s(z_next);
          sp_next = cdf_next * (1.0 - cdf_next);
        }
        double qk = q.at(ni, k, pix);
        if (qk > 0.0) {
          double pmf = cdf_next - cdf_prev;
          if (pmf > 1e-9) {
            double bits = -std::log2(pmf);
            double dpmf_dmu = -(sp_next - sp_prev) / sigma;
            double dpmf_dsigma = -(z_next * sp_next - z_prev * sp_prev) / sigma;
            double f = -1.0 / (pmf * kLn2);
            loss += qk * bits;
            gmu += qk * f * dpmf_dmu;
            gsigma += qk * f * dpmf_dsigma;
          } else {
            BitsAndGrad bg = logistic_bits(k, mu, sigma);
            loss += qk * bg.bits;
            gmu += qk * bg.dbits_dmu;
            gsigma += qk * bg.dbits_dsigma;
          }
        }
        z_prev = z_next;
        cdf_prev = cdf_next;
        sp_prev = sp_next;
      }
    }
    if (dmu) *dmu = gmu;
    if (dsigma) *dsigma = gsigma;
    return loss;
  };

  const double* mv = params.mu.data();
  const double* sv = params.sigma.data();
  double total = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    for (int pix = 0; pix < hw; ++pix) {
      total += accumulate(mv, sv, ni, pix, nullptr, nullptr);
    }
  }
  auto backward = [n, hw, inv, accumulate](TensorNode& self) {
    auto& mp = *self.parents[0];
    auto& sp = *self.parents[1];
    mp.ensure_grad();
    sp.ensure_grad();
    double g = self.grad[0] * inv;
    if (g == 0.0) return;
    for (int ni = 0; ni < n; ++ni) {
      for (int pix = 0; pix < hw; ++pix) {
        double dmu = 0.0, dsigma = 0.0;
        accumulate(mp.value.data(), sp.value.data(), ni, pix, &dmu, &dsigma);
        size_t idx = static_cast<size_t>(ni) * hw + pix;
        mp.grad[idx] += g * dmu;
        sp.grad[idx] += g * dsigma;
      }
    }
  };
  return Tensor::make_op({1}, {total * inv}, {params.mu, params.sigma},
                         std::move(backward), "calibration_loss");
}

EntropyModel::PixelParams EntropyModel::predict_pixel(
    const std::vector<double>& deq, int width, int height, int px, int py,
    const Tensor& hyper_feat, int sample_index) const {
  int cc = cfg_.context_channels;
  int ch = cfg_.hyper_channels;
  int cu = cfg_.fuse_channels;
  if (hyper_feat.dim(1) != ch || hyper_feat.dim(2) != height ||
      hyper_feat.dim(3) != width) {
    throw std::invalid_argument("predict_pixel: hyper feature shape mismatch");
  }
  const double* mask = mask_.data();
  const double* cw = ctx_w_.data();
  const double* cb = ctx_b_.data();

  std::vector<double> feat(static_cast<size_t>(ch + cc));
  const double* hfbase =
      hyper_feat.data() + static_cast<size_t>(sample_index) * ch * height * width;
  for (int c = 0; c < ch; ++c) {
    feat[static_cast<size_t>(c)] =
        hfbase[static_cast<size_t>(c) * height * width + py * width + px];
  }
  for (int oc = 0; oc < cc; ++oc) {
    double acc = 0.0;
    const double* taps = cw + static_cast<size_t>(oc) * 25;
    for (int ki = 0; ki < 5; ++ki) {
      int y = py + ki - 2;
      for (int kj = 0; kj < 5; ++kj) {
        double kval = taps[ki * 5 + kj] * mask[ki * 5 + kj];
        if (kval == 0.0) continue;
        int x = px + kj - 2;
        if (y < 0 || y >= height || x < 0 || x >= width) continue;
        acc += kval * deq[static_cast<size_t>(y) * width + x];
      }
    }
    feat[static_cast<size_t>(ch + oc)] = silu_s(acc + cb[oc]);
  }

  const double* f1w = f1_w_.data();
  const double* f1b = f1_b_.data();
  const double* f2w = f2_w_.data();
  const double* f2b = f2_b_.data();
  std::vector<double> fused(static_cast<size_t>(cu));
  for (int o = 0; o < cu; ++o) {
    double acc = 0.0;
    const double* row = f1w + static_cast<size_t>(o) * (ch + cc);
    for (int c = 0; c < ch + cc; ++c) acc += row[c] * feat[static_cast<size_t>(c)];
    fused[static_cast<size_t>(o)] = silu_s(acc + f1b[o]);
  }
  double mu_raw = 0.0, sigma_raw = 0.0;
  for (int c = 0; c < cu; ++c) {
    mu_raw += f2w[c] * fused[static_cast<size_t>(c)];
    sigma_raw += f2w[static_cast<size_t>(cu) + c] * fused[static_cast<size_t>(c)];
  }
  mu_raw += f2b[0];
  sigma_raw += f2b[1];
  PixelParams out;
  out.mu = 0.5 * kBins * mu_raw;
  out.sigma = softplus_s(sigma_raw) + kSigmaFloor;
  return out;
}

}  // namespace badiff
