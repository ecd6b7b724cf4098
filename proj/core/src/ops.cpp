#include "badiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace badiff {
namespace ops {

namespace {

using detail::TensorNode;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void require_4d(const Tensor& x, const char* op) {
  if (x.ndim() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected [N,C,H,W] tensor");
  }
}

double sigmoid_s(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// out[M,Nc] += A[M,K] * B[K,Nc], row-major, axpy inner loop.
void gemm_acc(int m, int k, int nc, const double* a, const double* b, double* out) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* orow = out + static_cast<size_t>(i) * nc;
    for (int kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(kk) * nc;
      for (int j = 0; j < nc; ++j) orow[j] += av * brow[j];
    }
  }
}

struct ConvDims {
  int n, c, h, w, o, kh, kw, oh, ow, stride, pad;
  int patch() const { return c * kh * kw; }
  int opix() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int pad,
                   const char* op) {
  require_4d(x, op);
  if (k.ndim() != 4) {
    throw std::invalid_argument(std::string(op) + ": kernel must be [O,C,kh,kw]");
  }
  if (stride <= 0) throw std::invalid_argument(std::string(op) + ": non-positive stride");
  ConvDims d;
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.o = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (k.dim(1) != d.c) {
    throw std::invalid_argument(std::string(op) + ": inconsistent channel counts");
  }
  if (d.kh % 2 == 0 || d.kw % 2 == 0) {
    throw std::invalid_argument(std::string(op) + ": kernel spatial size must be odd");
  }
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh <= 0 || d.ow <= 0) {
    throw std::invalid_argument(std::string(op) + ": output size is empty");
  }
  return d;
}

// col layout [patch, opix]: row per kernel tap, column per output position.
void im2col(const double* x, const ConvDims& d, double* col) {
  int idx = 0;
  for (int c = 0; c < d.c; ++c) {
    const double* xc = x + static_cast<size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj, ++idx) {
        double* crow = col + static_cast<size_t>(idx) * d.opix();
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride - d.pad + ki;
          double* dst = crow + static_cast<size_t>(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, 0.0);
            continue;
          }
          const double* src = xc + static_cast<size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride - d.pad + kj;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// colT layout [opix, patch]: row per output position.
void im2col_t(const double* x, const ConvDims& d, double* colt) {
  for (int oy = 0; oy < d.oh; ++oy) {
    for (int ox = 0; ox < d.ow; ++ox) {
      double* row = colt + (static_cast<size_t>(oy) * d.ow + ox) * d.patch();
      int idx = 0;
      for (int c = 0; c < d.c; ++c) {
        const double* xc = x + static_cast<size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
          int iy = oy * d.stride - d.pad + ki;
          for (int kj = 0; kj < d.kw; ++kj, ++idx) {
            int ix = ox * d.stride - d.pad + kj;
            row[idx] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                           ? xc[static_cast<size_t>(iy) * d.w + ix]
                           : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc_t(const double* dcolt, const ConvDims& d, double* dx) {
  for (int oy = 0; oy < d.oh; ++oy) {
    for (int ox = 0; ox < d.ow; ++ox) {
      const double* row = dcolt + (static_cast<size_t>(oy) * d.ow + ox) * d.patch();
      int idx = 0;
      for (int c = 0; c < d.c; ++c) {
        double* xc = dx + static_cast<size_t>(c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
          int iy = oy * d.stride - d.pad + ki;
          for (int kj = 0; kj < d.kw; ++kj, ++idx) {
            int ix = ox * d.stride - d.pad + kj;
            if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) {
              xc[static_cast<size_t>(iy) * d.w + ix] += row[idx];
            }
          }
        }
      }
    }
  }
}

// Shared conv forward/backward used by conv2d and masked_conv2d; the masked
// variant passes an effective (pre-masked) kernel and remasks kernel grads.
Tensor conv_core(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                 int stride, int pad, const std::vector<double>& eff_kernel,
                 const std::vector<double>& grad_mask, const char* opname,
                 std::vector<Tensor> parents) {
  ConvDims d = conv_dims(x, kernel, stride, pad, opname);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.o)) {
    throw std::invalid_argument(std::string(opname) + ": bias must be [O]");
  }
  const int patch = d.patch();
  const int opix = d.opix();
  std::vector<double> out(static_cast<size_t>(d.n) * d.o * opix, 0.0);
  std::vector<double> col(static_cast<size_t>(patch) * opix);
  const double* xv = x.data();
  const double* bv = bias.defined() ? bias.data() : nullptr;
  for (int n = 0; n < d.n; ++n) {
    im2col(xv + static_cast<size_t>(n) * d.c * d.h * d.w, d, col.data());
    double* on = out.data() + static_cast<size_t>(n) * d.o * opix;
    gemm_acc(d.o, patch, opix, eff_kernel.data(), col.data(), on);
    if (bv) {
      for (int o = 0; o < d.o; ++o) {
        double* orow = on + static_cast<size_t>(o) * opix;
        for (int j = 0; j < opix; ++j) orow[j] += bv[o];
      }
    }
  }

  bool has_bias = bias.defined();
  auto backward = [d, eff_kernel, grad_mask, has_bias](TensorNode& self) {
    auto& xp = *self.parents[0];
    auto& kp = *self.parents[1];
    TensorNode* bp = has_bias ? self.parents[2].get() : nullptr;
    xp.ensure_grad();
    kp.ensure_grad();
    if (bp) bp->ensure_grad();
    const int patch = d.patch();
    const int opix = d.opix();
    std::vector<double> colt(static_cast<size_t>(opix) * patch);
    std::vector<double> dcolt(static_cast<size_t>(opix) * patch);
    std::vector<double> dk(eff_kernel.size(), 0.0);
    for (int n = 0; n < d.n; ++n) {
      const double* dyn = self.grad.data() + static_cast<size_t>(n) * d.o * opix;
      im2col_t(xp.value.data() + static_cast<size_t>(n) * d.c * d.h * d.w, d,
               colt.data());
      // dW[o,:] += dy[o,j] * colT[j,:]
      for (int o = 0; o < d.o; ++o) {
        const double* dyrow = dyn + static_cast<size_t>(o) * opix;
        double* dkrow = dk.data() + static_cast<size_t>(o) * patch;
        for (int j = 0; j < opix; ++j) {
          double g = dyrow[j];
          if (g == 0.0) continue;
          const double* crow = colt.data() + static_cast<size_t>(j) * patch;
          for (int k = 0; k < patch; ++k) dkrow[k] += g * crow[k];
        }
        if (bp) {
          double s = 0.0;
          for (int j = 0; j < opix; ++j) s += dyrow[j];
          bp->grad[o] += s;
        }
      }
      // dcolT[j,:] += dy[o,j] * W[o,:]
      std::fill(dcolt.begin(), dcolt.end(), 0.0);
      for (int o = 0; o < d.o; ++o) {
        const double* dyrow = dyn + static_cast<size_t>(o) * opix;
        const double* wrow = eff_kernel.data() + static_cast<size_t>(o) * patch;
        for (int j = 0; j < opix; ++j) {
          double g = dyrow[j];
          if (g == 0.0) continue;
          double* drow = dcolt.data() + static_cast<size_t>(j) * patch;
          for (int k = 0; k < patch; ++k) drow[k] += g * wrow[k];
        }
      }
      col2im_acc_t(dcolt.data(), d,
                   xp.grad.data() + static_cast<size_t>(n) * d.c * d.h * d.w);
    }
    if (grad_mask.empty()) {
      for (size_t i = 0; i < dk.size(); ++i) kp.grad[i] += dk[i];
    } else {
      // kernel taps removed by the mask receive no gradient
      size_t taps = grad_mask.size();
      for (size_t i = 0; i < dk.size(); ++i) kp.grad[i] += dk[i] * grad_mask[i % taps];
    }
  };

  return Tensor::make_op({d.n, d.o, d.oh, d.ow}, std::move(out), std::move(parents),
                         std::move(backward), opname);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const double* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [](TensorNode& self) {
                           for (int p = 0; p < 2; ++p) {
                             auto& par = *self.parents[p];
                             par.ensure_grad();
                             for (size_t i = 0; i < self.grad.size(); ++i) {
                               par.grad[i] += self.grad[i];
                             }
                           }
                         },
                         "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.values());
  const double* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [](TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           pa.ensure_grad();
                           pb.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             pa.grad[i] += self.grad[i];
                             pb.grad[i] -= self.grad[i];
                           }
                         },
                         "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  const double* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b},
                         [](TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           pa.ensure_grad();
                           pb.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             pa.grad[i] += self.grad[i] * pb.value[i];
                             pb.grad[i] += self.grad[i] * pa.value[i];
                           }
                         },
                         "mul");
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= v;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             p.grad[i] += self.grad[i] * 2.0 * p.value[i];
                           }
                         },
                         "square");
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v *= c;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [c](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             p.grad[i] += self.grad[i] * c;
                           }
                         },
                         "scale");
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (double& v : out) v += c;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             p.grad[i] += self.grad[i];
                           }
                         },
                         "add_scalar");
}

Tensor max0(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
                           }
                         },
                         "max0");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  std::vector<double> out(a.values());
  for (double& v : out) v = std::min(hi, std::max(lo, v));
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [lo, hi](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             if (p.value[i] > lo && p.value[i] < hi) {
                               p.grad[i] += self.grad[i];
                             }
                           }
                         },
                         "clamp");
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_op({1}, {s}, {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           double g = self.grad[0];
                           for (double& gv : p.grad) gv += g;
                         },
                         "sum_all");
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  double inv = 1.0 / static_cast<double>(a.numel());
  return Tensor::make_op({1}, {s * inv}, {a},
                         [inv](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           double g = self.grad[0] * inv;
                           for (double& gv : p.grad) gv += g;
                         },
                         "mean_all");
}

Tensor silu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = v * sigmoid_s(v);
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             double s = sigmoid_s(p.value[i]);
                             p.grad[i] += self.grad[i] * s * (1.0 + p.value[i] * (1.0 - s));
                           }
                         },
                         "silu");
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) v = sigmoid_s(v);
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             double s = self.value[i];
                             p.grad[i] += self.grad[i] * s * (1.0 - s);
                           }
                         },
                         "sigmoid");
}

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.values());
  for (double& v : out) {
    v = v > 30.0 ? v : (v < -30.0 ? std::exp(v) : std::log1p(std::exp(v)));
  }
  return Tensor::make_op(a.shape(), std::move(out), {a},
                         [](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             p.grad[i] += self.grad[i] * sigmoid_s(p.value[i]);
                           }
                         },
                         "softplus");
}

Tensor softmax(const Tensor& a, int axis) {
  int nd = a.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw std::invalid_argument("softmax: bad axis");
  int axis_dim = a.shape()[static_cast<size_t>(axis)];
  int64_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= a.shape()[static_cast<size_t>(i)];
  int64_t outer = a.numel() / (axis_dim * inner);
  std::vector<double> out(a.values().size());
  const double* av = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const double* lane = av + o * axis_dim * inner + in;
      double* olane = out.data() + o * axis_dim * inner + in;
      double mx = lane[0];
      for (int k = 1; k < axis_dim; ++k) mx = std::max(mx, lane[k * inner]);
      double z = 0.0;
      for (int k = 0; k < axis_dim; ++k) {
        double e = std::exp(lane[k * inner] - mx);
        olane[k * inner] = e;
        z += e;
      }
      double invz = 1.0 / z;
      for (int k = 0; k < axis_dim; ++k) olane[k * inner] *= invz;
    }
  }
  return Tensor::make_op(
      a.shape(), std::move(out), {a},
      [axis_dim, inner, outer](TensorNode& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t in = 0; in < inner; ++in) {
            const double* s = self.value.data() + o * axis_dim * inner + in;
            const double* dy = self.grad.data() + o * axis_dim * inner + in;
            double* dx = p.grad.data() + o * axis_dim * inner + in;
            double dot = 0.0;
            for (int k = 0; k < axis_dim; ++k) dot += dy[k * inner] * s[k * inner];
            for (int k = 0; k < axis_dim; ++k) {
              dx[k * inner] += s[k * inner] * (dy[k * inner] - dot);
            }
          }
        }
      },
      "softmax");
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int groups, double eps) {
  require_4d(x, "group_norm");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (groups <= 0 || c % groups != 0) {
    throw std::invalid_argument("group_norm: groups must divide channel count");
  }
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument("group_norm: gamma/beta must be [C]");
  }
  int cpg = c / groups;
  int64_t gsize = static_cast<int64_t>(cpg) * h * w;
  std::vector<double> out(x.values().size());
  std::vector<double> means(static_cast<size_t>(n) * groups);
  std::vector<double> rstds(static_cast<size_t>(n) * groups);
  const double* xv = x.data();
  const double* gv = gamma.data();
  const double* bv = beta.data();
  for (int ni = 0; ni < n; ++ni) {
    for (int g = 0; g < groups; ++g) {
      const double* base = xv + (static_cast<size_t>(ni) * c + g * cpg) * h * w;
      double m = 0.0;
      for (int64_t i = 0; i < gsize; ++i) m += base[i];
      m /= static_cast<double>(gsize);
      double var = 0.0;
      for (int64_t i = 0; i < gsize; ++i) {
        double d = base[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      double rstd = 1.0 / std::sqrt(var + eps);
      means[static_cast<size_t>(ni) * groups + g] = m;
      rstds[static_cast<size_t>(ni) * groups + g] = rstd;
      double* obase = out.data() + (static_cast<size_t>(ni) * c + g * cpg) * h * w;
      for (int cc = 0; cc < cpg; ++cc) {
        int ch = g * cpg + cc;
        const double* src = base + static_cast<size_t>(cc) * h * w;
        double* dst = obase + static_cast<size_t>(cc) * h * w;
        for (int i = 0; i < h * w; ++i) {
          dst[i] = (src[i] - m) * rstd * gv[ch] + bv[ch];
        }
      }
    }
  }
  auto backward = [n, c, h, w, groups, cpg, gsize, means, rstds](TensorNode& self) {
    auto& xp = *self.parents[0];
    auto& gp = *self.parents[1];
    auto& bp = *self.parents[2];
    xp.ensure_grad();
    gp.ensure_grad();
    bp.ensure_grad();
    const double invm = 1.0 / static_cast<double>(gsize);
    for (int ni = 0; ni < n; ++ni) {
      for (int g = 0; g < groups; ++g) {
        double m = means[static_cast<size_t>(ni) * groups + g];
        double rstd = rstds[static_cast<size_t>(ni) * groups + g];
        size_t off = (static_cast<size_t>(ni) * c + g * cpg) * h * w;
        const double* xg = xp.value.data() + off;
        const double* dyg = self.grad.data() + off;
        // dxhat = dy * gamma; accumulate the two group-wide reductions
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          double gam = gp.value[static_cast<size_t>(g * cpg + cc)];
          const double* xs = xg + static_cast<size_t>(cc) * h * w;
          const double* dys = dyg + static_cast<size_t>(cc) * h * w;
          for (int i = 0; i < h * w; ++i) {
            double xhat = (xs[i] - m) * rstd;
            double dxhat = dys[i] * gam;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
        }
        for (int cc = 0; cc < cpg; ++cc) {
          int ch = g * cpg + cc;
          double gam = gp.value[static_cast<size_t>(ch)];
          const double* xs = xg + static_cast<size_t>(cc) * h * w;
          const double* dys = dyg + static_cast<size_t>(cc) * h * w;
          double* dxs = xp.grad.data() + off + static_cast<size_t>(cc) * h * w;
          double dgamma = 0.0, dbeta = 0.0;
          for (int i = 0; i < h * w; ++i) {
            double xhat = (xs[i] - m) * rstd;
            double dxhat = dys[i] * gam;
            dxs[i] += rstd * (dxhat - invm * (sum_dxhat + xhat * sum_dxhat_xhat));
            dgamma += dys[i] * xhat;
            dbeta += dys[i];
          }
          gp.grad[static_cast<size_t>(ch)] += dgamma;
          bp.grad[static_cast<size_t>(ch)] += dbeta;
        }
      }
    }
  };
  return Tensor::make_op(x.shape(), std::move(out), {x, gamma, beta},
                         std::move(backward), "group_norm");
}

Tensor mean_pool_spatial(const Tensor& x) {
  require_4d(x, "mean_pool_spatial");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int hw = h * w;
  double inv = 1.0 / static_cast<double>(hw);
  std::vector<double> out(static_cast<size_t>(n) * c, 0.0);
  const double* xv = x.data();
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const double* src = xv + (static_cast<size_t>(ni) * c + ci) * hw;
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += src[i];
      out[static_cast<size_t>(ni) * c + ci] = s * inv;
    }
  }
  return Tensor::make_op({n, c}, std::move(out), {x},
                         [n, c, hw, inv](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (int ni = 0; ni < n; ++ni) {
                             for (int ci = 0; ci < c; ++ci) {
                               double g = self.grad[static_cast<size_t>(ni) * c + ci] * inv;
                               double* dst = p.grad.data() +
                                             (static_cast<size_t>(ni) * c + ci) * hw;
                               for (int i = 0; i < hw; ++i) dst[i] += g;
                             }
                           }
                         },
                         "mean_pool_spatial");
}

Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (weights.ndim() != 2) {
    throw std::invalid_argument("dense: weights must be [out,in]");
  }
  int out_f = weights.dim(0);
  int in_f = weights.dim(1);
  if (x.ndim() < 1 || x.dim(-1) != in_f) {
    throw std::invalid_argument("dense: input last dimension does not match weights");
  }
  if (bias.defined() && bias.numel() != out_f) {
    throw std::invalid_argument("dense: bias size mismatch");
  }
  int64_t rows = x.numel() / in_f;
  std::vector<double> out(static_cast<size_t>(rows) * out_f, 0.0);
  const double* xv = x.data();
  const double* wv = weights.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * in_f;
    double* orow = out.data() + r * out_f;
    for (int i = 0; i < in_f; ++i) {
      double a = xr[i];
      if (a == 0.0) continue;
      const double* wcol = wv;  // weights[o, i] strided by in_f
      for (int o = 0; o < out_f; ++o) orow[o] += a * wcol[static_cast<size_t>(o) * in_f + i];
    }
    if (bias.defined()) {
      const double* bv = bias.data();
      for (int o = 0; o < out_f; ++o) orow[o] += bv[o];
    }
  }
  std::vector<int> out_shape(x.shape());
  out_shape.back() = out_f;
  bool has_bias = bias.defined();
  std::vector<Tensor> parents = has_bias ? std::vector<Tensor>{x, weights, bias}
                                         : std::vector<Tensor>{x, weights};
  auto backward = [rows, in_f, out_f, has_bias](TensorNode& self) {
    auto& xp = *self.parents[0];
    auto& wp = *self.parents[1];
    TensorNode* bp = has_bias ? self.parents[2].get() : nullptr;
    xp.ensure_grad();
    wp.ensure_grad();
    if (bp) bp->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* dy = self.grad.data() + r * out_f;
      const double* xr = xp.value.data() + r * in_f;
      double* dx = xp.grad.data() + r * in_f;
      for (int o = 0; o < out_f; ++o) {
        double g = dy[o];
        if (g == 0.0) continue;
        const double* wrow = wp.value.data() + static_cast<size_t>(o) * in_f;
        double* dwrow = wp.grad.data() + static_cast<size_t>(o) * in_f;
        for (int i = 0; i < in_f; ++i) {
          dx[i] += g * wrow[i];
          dwrow[i] += g * xr[i];
        }
        if (bp) bp->grad[o] += g;
      }
    }
  };
  return Tensor::make_op(std::move(out_shape), std::move(out), std::move(parents),
                         std::move(backward), "dense");
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
  std::vector<Tensor> parents =
      bias.defined() ? std::vector<Tensor>{x, kernel, bias}
                     : std::vector<Tensor>{x, kernel};
  return conv_core(x, kernel, bias, stride, pad, kernel.values(), {}, "conv2d",
                   std::move(parents));
}

Tensor make_causal_mask(int kh, int kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw std::invalid_argument("make_causal_mask: kernel size must be odd");
  }
  Tensor m = Tensor::zeros({kh, kw});
  int ch = kh / 2, cw = kw / 2;
  for (int i = 0; i < kh; ++i) {
    for (int j = 0; j < kw; ++j) {
      bool past = (i < ch) || (i == ch && j < cw);
      m.values()[static_cast<size_t>(i) * kw + j] = past ? 1.0 : 0.0;
    }
  }
  return m;
}

Tensor masked_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                     const Tensor& mask) {
  if (kernel.ndim() != 4) {
    throw std::invalid_argument("masked_conv2d: kernel must be [O,C,kh,kw]");
  }
  int kh = kernel.dim(2), kw = kernel.dim(3);
  if (mask.ndim() != 2 || mask.dim(0) != kh || mask.dim(1) != kw) {
    throw std::invalid_argument("masked_conv2d: mask must match kernel spatial size");
  }
  int ch = kh / 2, cw = kw / 2;
  const auto& mv = mask.values();
  for (int i = 0; i < kh; ++i) {
    for (int j = 0; j < kw; ++j) {
      bool future_or_center = (i > ch) || (i == ch && j >= cw);
      if (future_or_center && mv[static_cast<size_t>(i) * kw + j] != 0.0) {
        throw std::invalid_argument(
            "masked_conv2d: mask is not strictly causal (center or future tap set)");
      }
    }
  }
  int o = kernel.dim(0), c = kernel.dim(1);
  std::vector<double> eff(kernel.values());
  std::vector<double> gmask(static_cast<size_t>(kh) * kw);
  for (int i = 0; i < kh * kw; ++i) gmask[static_cast<size_t>(i)] = mv[static_cast<size_t>(i)];
  for (int oc = 0; oc < o * c; ++oc) {
    double* tap = eff.data() + static_cast<size_t>(oc) * kh * kw;
    for (int i = 0; i < kh * kw; ++i) tap[i] *= gmask[static_cast<size_t>(i)];
  }
  std::vector<Tensor> parents =
      bias.defined() ? std::vector<Tensor>{x, kernel, bias}
                     : std::vector<Tensor>{x, kernel};
  return conv_core(x, kernel, bias, 1, ch, eff, gmask, "masked_conv2d",
                   std::move(parents));
}

Tensor upsample_nearest2(const Tensor& x) {
  require_4d(x, "upsample_nearest2");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> out(static_cast<size_t>(n) * c * 2 * h * 2 * w);
  const double* xv = x.data();
  for (int nc = 0; nc < n * c; ++nc) {
    const double* src = xv + static_cast<size_t>(nc) * h * w;
    double* dst = out.data() + static_cast<size_t>(nc) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double v = src[static_cast<size_t>(y) * w + xx];
        size_t base = static_cast<size_t>(2 * y) * 2 * w + 2 * xx;
        dst[base] = v;
        dst[base + 1] = v;
        dst[base + 2 * w] = v;
        dst[base + 2 * w + 1] = v;
      }
    }
  }
  return Tensor::make_op({n, c, 2 * h, 2 * w}, std::move(out), {x},
                         [n, c, h, w](TensorNode& self) {
                           auto& p = *self.parents[0];
                           p.ensure_grad();
                           for (int nc = 0; nc < n * c; ++nc) {
                             const double* dy =
                                 self.grad.data() + static_cast<size_t>(nc) * 4 * h * w;
                             double* dx = p.grad.data() + static_cast<size_t>(nc) * h * w;
                             for (int y = 0; y < h; ++y) {
                               for (int xx = 0; xx < w; ++xx) {
                                 size_t base = static_cast<size_t>(2 * y) * 2 * w + 2 * xx;
                                 dx[static_cast<size_t>(y) * w + xx] +=
                                     dy[base] + dy[base + 1] + dy[base + 2 * w] +
                                     dy[base + 2 * w + 1];
                               }
                             }
                           }
                         },
                         "upsample_nearest2");
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_4d(a, "concat_channels");
  require_4d(b, "concat_channels");
  int n = a.dim(0), ca = a.dim(1), h = a.dim(2), w = a.dim(3);
  int cb = b.dim(1);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w) {
    throw std::invalid_argument("concat_channels: spatial/batch mismatch");
  }
  int hw = h * w;
  std::vector<double> out(static_cast<size_t>(n) * (ca + cb) * hw);
  for (int ni = 0; ni < n; ++ni) {
    std::memcpy(out.data() + static_cast<size_t>(ni) * (ca + cb) * hw,
                a.data() + static_cast<size_t>(ni) * ca * hw,
                sizeof(double) * ca * hw);
    std::memcpy(out.data() + (static_cast<size_t>(ni) * (ca + cb) + ca) * hw,
                b.data() + static_cast<size_t>(ni) * cb * hw,
                sizeof(double) * cb * hw);
  }
  return Tensor::make_op({n, ca + cb, h, w}, std::move(out), {a, b},
                         [n, ca, cb, hw](TensorNode& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           pa.ensure_grad();
                           pb.ensure_grad();
                           for (int ni = 0; ni < n; ++ni) {
                             const double* dy = self.grad.data() +
                                                static_cast<size_t>(ni) * (ca + cb) * hw;
                             double* da = pa.grad.data() + static_cast<size_t>(ni) * ca * hw;
                             double* db = pb.grad.data() + static_cast<size_t>(ni) * cb * hw;
                             for (int i = 0; i < ca * hw; ++i) da[i] += dy[i];
                             for (int i = 0; i < cb * hw; ++i) db[i] += dy[ca * hw + i];
                           }
                         },
                         "concat_channels");
}

Tensor concat_features(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_features: no inputs");
  int n = parts[0].dim(0);
  int total = 0;
  std::vector<int> widths;
  for (const Tensor& t : parts) {
    if (t.ndim() != 2 || t.dim(0) != n) {
      throw std::invalid_argument("concat_features: inputs must be [N,F] with same N");
    }
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(n) * total);
  int off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    int f = widths[pi];
    const double* src = parts[pi].data();
    for (int ni = 0; ni < n; ++ni) {
      std::memcpy(out.data() + static_cast<size_t>(ni) * total + off,
                  src + static_cast<size_t>(ni) * f, sizeof(double) * f);
    }
    off += f;
  }
  return Tensor::make_op({n, total}, std::move(out), parts,
                         [n, total, widths](TensorNode& self) {
                           int off = 0;
                           for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                             auto& p = *self.parents[pi];
                             p.ensure_grad();
                             int f = widths[pi];
                             for (int ni = 0; ni < n; ++ni) {
                               const double* dy =
                                   self.grad.data() + static_cast<size_t>(ni) * total + off;
                               double* dp = p.grad.data() + static_cast<size_t>(ni) * f;
                               for (int i = 0; i < f; ++i) dp[i] += dy[i];
                             }
                             off += f;
                           }
                         },
                         "concat_features");
}

Tensor add_channel_vec(const Tensor& x, const Tensor& v) {
  require_4d(x, "add_channel_vec");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (v.ndim() != 2 || v.dim(0) != n || v.dim(1) != c) {
    throw std::invalid_argument("add_channel_vec: vector must be [N,C]");
  }
  int hw = h * w;
  std::vector<double> out(x.values());
  const double* vv = v.data();
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      double bias = vv[static_cast<size_t>(ni) * c + ci];
      double* dst = out.data() + (static_cast<size_t>(ni) * c + ci) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += bias;
    }
  }
  return Tensor::make_op(x.shape(), std::move(out), {x, v},
                         [n, c, hw](TensorNode& self) {
                           auto& px = *self.parents[0];
                           auto& pv = *self.parents[1];
                           px.ensure_grad();
                           pv.ensure_grad();
                           for (size_t i = 0; i < self.grad.size(); ++i) {
                             px.grad[i] += self.grad[i];
                           }
                           for (int ni = 0; ni < n; ++ni) {
                             for (int ci = 0; ci < c; ++ci) {
                               const double* dy = self.grad.data() +
                                                  (static_cast<size_t>(ni) * c + ci) * hw;
                               double s = 0.0;
                               for (int i = 0; i < hw; ++i) s += dy[i];
                               pv.grad[static_cast<size_t>(ni) * c + ci] += s;
                             }
                           }
                         },
                         "add_channel_vec");
}

Tensor scale_per_sample(const Tensor& x, const Tensor& s) {
  if (x.ndim() < 1) throw std::invalid_argument("scale_per_sample: scalar input");
  int n = x.dim(0);
  if (s.numel() != n) {
    throw std::invalid_argument("scale_per_sample: scale must have one entry per sample");
  }
  int64_t per = x.numel() / n;
  std::vector<double> out(x.values());
  const double* sv = s.data();
  for (int ni = 0; ni < n; ++ni) {
    double f = sv[ni];
    double* dst = out.data() + static_cast<size_t>(ni) * per;
    for (int64_t i = 0; i < per; ++i) dst[i] *= f;
  }
  return Tensor::make_op(x.shape(), std::move(out), {x, s},
                         [n, per](TensorNode& self) {
                           auto& px = *self.parents[0];
                           auto& ps = *self.parents[1];
                           px.ensure_grad();
                           ps.ensure_grad();
                           for (int ni = 0; ni < n; ++ni) {
                             double f = ps.value[static_cast<size_t>(ni)];
                             const double* dy = self.grad.data() + static_cast<size_t>(ni) * per;
                             const double* xv = px.value.data() + static_cast<size_t>(ni) * per;
                             double* dx = px.grad.data() + static_cast<size_t>(ni) * per;
                             double ds = 0.0;
                             for (int64_t i = 0; i < per; ++i) {
                               dx[i] += dy[i] * f;
                               ds += dy[i] * xv[i];
                             }
                             ps.grad[static_cast<size_t>(ni)] += ds;
                           }
                         },
                         "scale_per_sample");
}

Tensor bce_mean(const Tensor& p, const std::vector<double>& targets) {
  if (static_cast<size_t>(p.numel()) != targets.size()) {
    throw std::invalid_argument("bce_mean: length mismatch");
  }
  constexpr double kClip = 1e-7;
  size_t m = targets.size();
  double loss = 0.0;
  for (size_t i = 0; i < m; ++i) {
    double pc = std::min(1.0 - kClip, std::max(kClip, p.data()[i]));
    loss += -targets[i] * std::log(pc) - (1.0 - targets[i]) * std::log(1.0 - pc);
  }
  loss /= static_cast<double>(m);
  return Tensor::make_op(
      {1}, {loss}, {p},
      [targets, m](TensorNode& self) {
        auto& pp = *self.parents[0];
        pp.ensure_grad();
        double g = self.grad[0] / static_cast<double>(m);
        for (size_t i = 0; i < m; ++i) {
          double pv = pp.value[i];
          if (pv <= kClip || pv >= 1.0 - kClip) continue;  // clipped: flat
          pp.grad[i] += g * (-targets[i] / pv + (1.0 - targets[i]) / (1.0 - pv));
        }
      },
      "bce_mean");
}

Tensor attention2d(const Tensor& x, const Tensor& wq, const Tensor& wk,
                   const Tensor& wv) {
  require_4d(x, "attention2d");
  int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (const Tensor* wt : {&wq, &wk, &wv}) {
    if (wt->ndim() != 2 || wt->dim(0) != c || wt->dim(1) != c) {
      throw std::invalid_argument("attention2d: projection weights must be [C,C]");
    }
  }
  int p = h * w;
  double scale = 1.0 / std::sqrt(static_cast<double>(c));

  // X viewed as [C,P] per sample; projections Q=Wq*X etc.
  auto project = [c, p](const double* wm, const double* xs, double* out) {
    std::fill(out, out + static_cast<size_t>(c) * p, 0.0);
    gemm_acc(c, c, p, wm, xs, out);
  };

  std::vector<double> out(x.values().size(), 0.0);
  std::vector<double> q(static_cast<size_t>(c) * p), k(q.size()), v(q.size());
  std::vector<double> attn(static_cast<size_t>(p) * p);
  auto run_attention = [&](const double* xs, double* ys) {
    project(wq.data(), xs, q.data());
    project(wk.data(), xs, k.data());
    project(wv.data(), xs, v.data());
    for (int pi = 0; pi < p; ++pi) {
      double* arow = attn.data() + static_cast<size_t>(pi) * p;
      double mx = -1e300;
      for (int pj = 0; pj < p; ++pj) {
        double s = 0.0;
        for (int ci = 0; ci < c; ++ci) {
          s += q[static_cast<size_t>(ci) * p + pi] * k[static_cast<size_t>(ci) * p + pj];
        }
        arow[pj] = s * scale;
        mx = std::max(mx, arow[pj]);
      }
      double z = 0.0;
      for (int pj = 0; pj < p; ++pj) {
        arow[pj] = std::exp(arow[pj] - mx);
        z += arow[pj];
      }
      for (int pj = 0; pj < p; ++pj) arow[pj] /= z;
    }
    for (int ci = 0; ci < c; ++ci) {
      for (int pi = 0; pi < p; ++pi) {
        double s = 0.0;
        const double* arow = attn.data() + static_cast<size_t>(pi) * p;
        const double* vrow = v.data() + static_cast<size_t>(ci) * p;
        for (int pj = 0; pj < p; ++pj) s += arow[pj] * vrow[pj];
        ys[static_cast<size_t>(ci) * p + pi] = s;
      }
    }
  };
  for (int ni = 0; ni < n; ++ni) {
    run_attention(x.data() + static_cast<size_t>(ni) * c * p,
                  out.data() + static_cast<size_t>(ni) * c * p);
  }

  auto backward = [n, c, p, scale](TensorNode& self) {
    auto& xp = *self.parents[0];
    auto& qp = *self.parents[1];
    auto& kp = *self.parents[2];
    auto& vp = *self.parents[3];
    xp.ensure_grad();
    qp.ensure_grad();
    kp.ensure_grad();
    vp.ensure_grad();
    std::vector<double> q(static_cast<size_t>(c) * p), k(q.size()), v(q.size());
    std::vector<double> attn(static_cast<size_t>(p) * p);
    std::vector<double> dq(q.size()), dk(q.size()), dv(q.size());
    std::vector<double> dattn(attn.size());
    for (int ni = 0; ni < n; ++ni) {
      const double* xs = xp.value.data() + static_cast<size_t>(ni) * c * p;
      const double* dys = self.grad.data() + static_cast<size_t>(ni) * c * p;
      // recompute forward intermediates
      std::fill(q.begin(), q.end(), 0.0);
      std::fill(k.begin(), k.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      gemm_acc(c, c, p, qp.value.data(), xs, q.data());
      gemm_acc(c, c, p, kp.value.data(), xs, k.data());
      gemm_acc(c, c, p, vp.value.data(), xs, v.data());
      for (int pi = 0; pi < p; ++pi) {
        double* arow = attn.data() + static_cast<size_t>(pi) * p;
        double mx = -1e300;
        for (int pj = 0; pj < p; ++pj) {
          double s = 0.0;
          for (int ci = 0; ci < c; ++ci) {
            s += q[static_cast<size_t>(ci) * p + pi] * k[static_cast<size_t>(ci) * p + pj];
          }
          arow[pj] = s * scale;
          mx = std::max(mx, arow[pj]);
        }
        double z = 0.0;
        for (int pj = 0; pj < p; ++pj) {
          arow[pj] = std::exp(arow[pj] - mx);
          z += arow[pj];
        }
        for (int pj = 0; pj < p; ++pj) arow[pj] /= z;
      }
      // dV and dAttn
      std::fill(dv.begin(), dv.end(), 0.0);
      for (int pi = 0; pi < p; ++pi) {
        double* darow = dattn.data() + static_cast<size_t>(pi) * p;
        const double* arow = attn.data() + static_cast<size_t>(pi) * p;
        for (int pj = 0; pj < p; ++pj) {
          double s = 0.0;
          for (int ci = 0; ci < c; ++ci) {
            s += dys[static_cast<size_t>(ci) * p + pi] * v[static_cast<size_t>(ci) * p + pj];
          }
          darow[pj] = s;
        }
        for (int ci = 0; ci < c; ++ci) {
          double g = dys[static_cast<size_t>(ci) * p + pi];
          double* dvrow = dv.data() + static_cast<size_t>(ci) * p;
          for (int pj = 0; pj < p; ++pj) dvrow[pj] += g * arow[pj];
        }
        // softmax backward on this row (in place on darow)
        double dot = 0.0;
        for (int pj = 0; pj < p; ++pj) dot += darow[pj] * arow[pj];
        for (int pj = 0; pj < p; ++pj) darow[pj] = arow[pj] * (darow[pj] - dot);
      }
      // dQ, dK from dScores (= dattn * scale)
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      for (int pi = 0; pi < p; ++pi) {
        const double* darow = dattn.data() + static_cast<size_t>(pi) * p;
        for (int pj = 0; pj < p; ++pj) {
          double g = darow[pj] * scale;
          if (g == 0.0) continue;
          for (int ci = 0; ci < c; ++ci) {
            dq[static_cast<size_t>(ci) * p + pi] += g * k[static_cast<size_t>(ci) * p + pj];
            dk[static_cast<size_t>(ci) * p + pj] += g * q[static_cast<size_t>(ci) * p + pi];
          }
        }
      }
      // dW* += dProj * X^T ; dX += W*^T * dProj
      double* dxs = xp.grad.data() + static_cast<size_t>(ni) * c * p;
      auto accumulate = [&](TensorNode& wnode, const std::vector<double>& dproj) {
        for (int co = 0; co < c; ++co) {
          const double* dprow = dproj.data() + static_cast<size_t>(co) * p;
          double* dwrow = wnode.grad.data() + static_cast<size_t>(co) * c;
          for (int ci = 0; ci < c; ++ci) {
            const double* xrow = xs + static_cast<size_t>(ci) * p;
            double s = 0.0;
            for (int pj = 0; pj < p; ++pj) s += dprow[pj] * xrow[pj];
            dwrow[ci] += s;
          }
          const double* wrow = wnode.value.data() + static_cast<size_t>(co) * c;
          for (int ci = 0; ci < c; ++ci) {
            double wcoef = wrow[ci];
            double* dxrow = dxs + static_cast<size_t>(ci) * p;
            for (int pj = 0; pj < p; ++pj) dxrow[pj] += wcoef * dprow[pj];
          }
        }
      };
      accumulate(qp, dq);
      accumulate(kp, dk);
      accumulate(vp, dv);
    }
  };
  return Tensor::make_op(x.shape(), std::move(out), {x, wq, wk, wv},
                         std::move(backward), "attention2d");
}

}  // namespace ops
}  // namespace badiff
