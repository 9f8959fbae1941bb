#pragma once

#include <algorithm>
#include <cmath>

#include "agi/tensor.hpp"

// Raw compute kernels behind the tape primitives. All kernels are pure
// functions over contiguous NCHW buffers with fixed loop order, so a
// given input always produces bitwise-identical output.
namespace agi::kern {

struct ConvDims {
  int n, cin, h, w;
  int cout, k, stride, pad, groups;
  int hout, wout;
  int cin_g, cout_g;  // channels per group
};

inline ConvDims conv_dims(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws,
                          int stride, int pad, int groups, bool per_sample) {
  check(xs.size() == 4, "conv2d input must be N x Cin x H x W, got " + shape_str(xs));
  const size_t wrank = per_sample ? 5 : 4;
  check(ws.size() == wrank, per_sample
                                ? "conv2d_per_sample kernel must be N x Cout x Cin x k x k, got " + shape_str(ws)
                                : "conv2d kernel must be Cout x Cin x k x k, got " + shape_str(ws));
  ConvDims d;
  d.n = int(xs[0]);
  d.cin = int(xs[1]);
  d.h = int(xs[2]);
  d.w = int(xs[3]);
  const size_t base = per_sample ? 1 : 0;
  if (per_sample) {
    check(ws[0] == xs[0], "conv2d_per_sample batch axis mismatch: x has N=" +
                              std::to_string(xs[0]) + ", kernels have N=" + std::to_string(ws[0]));
  }
  d.cout = int(ws[base + 0]);
  d.k = int(ws[base + 2]);
  check(ws[base + 2] == ws[base + 3], "conv2d kernel must be square, got " + shape_str(ws));
  check(d.k % 2 == 1, "conv2d kernel size must be odd, got k=" + std::to_string(d.k));
  d.stride = stride;
  d.pad = pad;
  d.groups = groups;
  check(stride >= 1, "conv2d stride must be >= 1");
  check(pad >= 0, "conv2d padding must be >= 0");
  check(groups >= 1 && d.cin % groups == 0 && d.cout % groups == 0,
        "conv2d groups=" + std::to_string(groups) + " must divide Cin=" + std::to_string(d.cin) +
            " and Cout=" + std::to_string(d.cout));
  d.cin_g = d.cin / groups;
  d.cout_g = d.cout / groups;
  check(ws[base + 1] == d.cin_g, "conv2d kernel Cin axis is " + std::to_string(ws[base + 1]) +
                                     " but input implies Cin/groups=" + std::to_string(d.cin_g));
  d.hout = (d.h + 2 * pad - d.k) / stride + 1;
  d.wout = (d.w + 2 * pad - d.k) / stride + 1;
  check(d.hout >= 1 && d.wout >= 1, "conv2d output would be empty for input " + shape_str(xs) +
                                        ", k=" + std::to_string(d.k));
  return d;
}

// Valid output ranges for a kernel tap offset t (= ky or kx), so that the
// source index oy*stride - pad + t stays inside [0, extent).
inline void tap_range(int t, int pad, int stride, int extent, int out_extent, int& lo, int& hi) {
  lo = std::max(0, ceil_div(pad - t, stride));
  hi = std::min(out_extent, floor_div(extent - 1 + pad - t, stride) + 1);
}

// One sample, one group block: accumulate x (cin_g planes) * w into y (cout_g planes).
template <typename T>
inline void conv_block_fwd(const T* __restrict x, const T* __restrict w, T* __restrict y, const ConvDims& d) {
  for (int oc = 0; oc < d.cout_g; ++oc) {
    T* yp = y + int64_t(oc) * d.hout * d.wout;
    for (int ic = 0; ic < d.cin_g; ++ic) {
      const T* xp = x + int64_t(ic) * d.h * d.w;
      for (int ky = 0; ky < d.k; ++ky) {
        int oy0, oy1;
        tap_range(ky, d.pad, d.stride, d.h, d.hout, oy0, oy1);
        for (int kx = 0; kx < d.k; ++kx) {
          const T wv = w[((int64_t(oc) * d.cin_g + ic) * d.k + ky) * d.k + kx];
          if (wv == T(0)) continue;
          int ox0, ox1;
          tap_range(kx, d.pad, d.stride, d.w, d.wout, ox0, ox1);
          for (int oy = oy0; oy < oy1; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            const T* xr = xp + int64_t(iy) * d.w + (ox0 * d.stride - d.pad + kx);
            T* yr = yp + int64_t(oy) * d.wout;
            if (d.stride == 1) {
              for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[ox - ox0];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[(ox - ox0) * d.stride];
            }
          }
        }
      }
    }
  }
}

template <typename T>
inline void conv_block_bwd_x(const T* __restrict w, const T* __restrict gy, T* __restrict gx, const ConvDims& d) {
  for (int oc = 0; oc < d.cout_g; ++oc) {
    const T* gyp = gy + int64_t(oc) * d.hout * d.wout;
    for (int ic = 0; ic < d.cin_g; ++ic) {
      T* gxp = gx + int64_t(ic) * d.h * d.w;
      for (int ky = 0; ky < d.k; ++ky) {
        int oy0, oy1;
        tap_range(ky, d.pad, d.stride, d.h, d.hout, oy0, oy1);
        for (int kx = 0; kx < d.k; ++kx) {
          const T wv = w[((int64_t(oc) * d.cin_g + ic) * d.k + ky) * d.k + kx];
          if (wv == T(0)) continue;
          int ox0, ox1;
          tap_range(kx, d.pad, d.stride, d.w, d.wout, ox0, ox1);
          for (int oy = oy0; oy < oy1; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            T* gxr = gxp + int64_t(iy) * d.w + (ox0 * d.stride - d.pad + kx);
            const T* gyr = gyp + int64_t(oy) * d.wout;
            if (d.stride == 1) {
              for (int ox = ox0; ox < ox1; ++ox) gxr[ox - ox0] += wv * gyr[ox];
            } else {
              for (int ox = ox0; ox < ox1; ++ox) gxr[(ox - ox0) * d.stride] += wv * gyr[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
inline void conv_block_bwd_w(const T* __restrict x, const T* __restrict gy, T* __restrict gw, const ConvDims& d) {
  for (int oc = 0; oc < d.cout_g; ++oc) {
    const T* gyp = gy + int64_t(oc) * d.hout * d.wout;
    for (int ic = 0; ic < d.cin_g; ++ic) {
      const T* xp = x + int64_t(ic) * d.h * d.w;
      for (int ky = 0; ky < d.k; ++ky) {
        int oy0, oy1;
        tap_range(ky, d.pad, d.stride, d.h, d.hout, oy0, oy1);
        for (int kx = 0; kx < d.k; ++kx) {
          int ox0, ox1;
          tap_range(kx, d.pad, d.stride, d.w, d.wout, ox0, ox1);
          // Eight fixed partial sums so the row reduction vectorizes
          // without reassociating the IEEE order run to run.
          T lanes[8] = {};
          T tail = 0;
          for (int oy = oy0; oy < oy1; ++oy) {
            const int iy = oy * d.stride - d.pad + ky;
            const T* xr = xp + int64_t(iy) * d.w + (ox0 * d.stride - d.pad + kx);
            const T* gyr = gyp + int64_t(oy) * d.wout + ox0;
            const int len = ox1 - ox0;
            if (d.stride == 1) {
              int i = 0;
              for (; i + 8 <= len; i += 8)
                for (int j = 0; j < 8; ++j) lanes[j] += xr[i + j] * gyr[i + j];
              for (; i < len; ++i) tail += xr[i] * gyr[i];
            } else {
              for (int i = 0; i < len; ++i) tail += xr[i * d.stride] * gyr[i];
            }
          }
          const T acc = (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))) +
                        tail;
          gw[((int64_t(oc) * d.cin_g + ic) * d.k + ky) * d.k + kx] += acc;
        }
      }
    }
  }
}

// w is either one kernel set (Cout x Cin/g x k x k) shared by the batch, or
// per-sample kernels (N x Cout x Cin x k x k) when per_sample is true.
template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                     int stride, int pad, int groups, bool per_sample) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad, groups, per_sample);
  check(bias.numel() == d.cout, "conv2d bias has " + std::to_string(bias.numel()) +
                                    " entries, expected Cout=" + std::to_string(d.cout));
  Tensor<T> y({d.n, d.cout, d.hout, d.wout});
  const int64_t wsz = int64_t(d.cout) * d.cin_g * d.k * d.k;
  for (int s = 0; s < d.n; ++s) {
    const T* ws = w.data() + (per_sample ? int64_t(s) * wsz : 0);
    for (int g = 0; g < d.groups; ++g) {
      conv_block_fwd(x.data() + (int64_t(s) * d.cin + int64_t(g) * d.cin_g) * d.h * d.w,
                     ws + int64_t(g) * d.cout_g * d.cin_g * d.k * d.k,
                     y.data() + (int64_t(s) * d.cout + int64_t(g) * d.cout_g) * d.hout * d.wout, d);
    }
  }
  for (int s = 0; s < d.n; ++s)
    for (int oc = 0; oc < d.cout; ++oc) {
      T* yp = y.data() + (int64_t(s) * d.cout + oc) * d.hout * d.wout;
      const T bv = bias[oc];
      for (int64_t i = 0; i < int64_t(d.hout) * d.wout; ++i) yp[i] += bv;
    }
  return y;
}

template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                int stride, int pad, int groups, bool per_sample,
                Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad, groups, per_sample);
  const int64_t wsz = int64_t(d.cout) * d.cin_g * d.k * d.k;
  for (int s = 0; s < d.n; ++s) {
    const T* ws = w.data() + (per_sample ? int64_t(s) * wsz : 0);
    T* gws = gw ? gw->data() + (per_sample ? int64_t(s) * wsz : 0) : nullptr;
    for (int g = 0; g < d.groups; ++g) {
      const int64_t xoff = (int64_t(s) * d.cin + int64_t(g) * d.cin_g) * d.h * d.w;
      const int64_t yoff = (int64_t(s) * d.cout + int64_t(g) * d.cout_g) * d.hout * d.wout;
      const int64_t woff = int64_t(g) * d.cout_g * d.cin_g * d.k * d.k;
      if (gx) conv_block_bwd_x(ws + woff, gy.data() + yoff, gx->data() + xoff, d);
      if (gws) conv_block_bwd_w(x.data() + xoff, gy.data() + yoff, gws + woff, d);
    }
  }
  if (gb) {
    for (int s = 0; s < d.n; ++s)
      for (int oc = 0; oc < d.cout; ++oc) {
        const T* gyp = gy.data() + (int64_t(s) * d.cout + oc) * d.hout * d.wout;
        T acc = 0;
        for (int64_t i = 0; i < int64_t(d.hout) * d.wout; ++i) acc += gyp[i];
        (*gb)[oc] += acc;
      }
  }
}

// Channel permutation for a shuffle with n groups: output channel l*n+i
// reads input channel i*(C/n)+l. Returns perm with out[c] = in[perm[c]].
inline std::vector<int> shuffle_perm(int c, int n) {
  check(n >= 1 && c % n == 0,
        "channel_shuffle: C=" + std::to_string(c) + " not divisible by n=" + std::to_string(n));
  const int m = c / n;
  std::vector<int> perm(static_cast<size_t>(c));
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < m; ++l) perm[size_t(l) * n + i] = i * m + l;
  return perm;
}

// Applies a channel permutation to an N x C x ... tensor: out[:,c,...] = x[:,perm[c],...].
template <typename T>
Tensor<T> permute_channels(const Tensor<T>& x, const std::vector<int>& perm) {
  check(x.rank() >= 2, "permute_channels needs rank >= 2, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1);
  check(int64_t(perm.size()) == c, "permutation length mismatch");
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<T> y(x.shape());
  for (int64_t s = 0; s < n; ++s)
    for (int64_t oc = 0; oc < c; ++oc) {
      const T* src = x.data() + (s * c + perm[size_t(oc)]) * inner;
      T* dst = y.data() + (s * c + oc) * inner;
      std::copy(src, src + inner, dst);
    }
  return y;
}

inline std::vector<int> invert_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[size_t(perm[i])] = int(i);
  return inv;
}

// Normalization over the channel axis at every (n, h, w) location.
template <typename T>
Tensor<T> layernorm_channels_fwd(const Tensor<T>& x, const Tensor<T>& gamma,
                                 const Tensor<T>& beta, T eps) {
  check(x.rank() == 4, "layernorm_channels input must be N x C x H x W, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  check(gamma.numel() == c && beta.numel() == c,
        "layernorm_channels gamma/beta must have C=" + std::to_string(c) + " entries");
  Tensor<T> y(x.shape());
  std::vector<T> mean(static_cast<size_t>(hw)), var(static_cast<size_t>(hw));
  for (int64_t s = 0; s < n; ++s) {
    const T* xs = x.data() + s * c * hw;
    T* ys = y.data() + s * c * hw;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      for (int64_t i = 0; i < hw; ++i) mean[size_t(i)] += xp[i];
    }
    const T inv_c = T(1) / T(c);
    for (int64_t i = 0; i < hw; ++i) mean[size_t(i)] *= inv_c;
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      for (int64_t i = 0; i < hw; ++i) {
        const T dv = xp[i] - mean[size_t(i)];
        var[size_t(i)] += dv * dv;
      }
    }
    for (int64_t i = 0; i < hw; ++i) var[size_t(i)] = T(1) / std::sqrt(var[size_t(i)] * inv_c + eps);
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      T* yp = ys + ch * hw;
      const T g = gamma[ch], b = beta[ch];
      for (int64_t i = 0; i < hw; ++i) yp[i] = g * (xp[i] - mean[size_t(i)]) * var[size_t(i)] + b;
    }
  }
  return y;
}

template <typename T>
void layernorm_channels_bwd(const Tensor<T>& x, const Tensor<T>& gamma, T eps,
                            const Tensor<T>& gy, Tensor<T>* gx, Tensor<T>* ggamma,
                            Tensor<T>* gbeta) {
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> mean(static_cast<size_t>(hw)), rstd(static_cast<size_t>(hw)), dot_g(static_cast<size_t>(hw)), dot_gx(static_cast<size_t>(hw));
  const T inv_c = T(1) / T(c);
  for (int64_t s = 0; s < n; ++s) {
    const T* xs = x.data() + s * c * hw;
    const T* gys = gy.data() + s * c * hw;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(rstd.begin(), rstd.end(), T(0));
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      for (int64_t i = 0; i < hw; ++i) mean[size_t(i)] += xp[i];
    }
    for (int64_t i = 0; i < hw; ++i) mean[size_t(i)] *= inv_c;
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      for (int64_t i = 0; i < hw; ++i) {
        const T dv = xp[i] - mean[size_t(i)];
        rstd[size_t(i)] += dv * dv;
      }
    }
    for (int64_t i = 0; i < hw; ++i) rstd[size_t(i)] = T(1) / std::sqrt(rstd[size_t(i)] * inv_c + eps);

    // Per-location sums of gamma*g and gamma*g*xhat across channels.
    std::fill(dot_g.begin(), dot_g.end(), T(0));
    std::fill(dot_gx.begin(), dot_gx.end(), T(0));
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      const T* gp = gys + ch * hw;
      const T g = gamma[ch];
      for (int64_t i = 0; i < hw; ++i) {
        const T xh = (xp[i] - mean[size_t(i)]) * rstd[size_t(i)];
        dot_g[size_t(i)] += g * gp[i];
        dot_gx[size_t(i)] += g * gp[i] * xh;
      }
    }
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = xs + ch * hw;
      const T* gp = gys + ch * hw;
      const T g = gamma[ch];
      T acc_gamma = 0, acc_beta = 0;
      T* gxp = gx ? gx->data() + (s * c + ch) * hw : nullptr;
      for (int64_t i = 0; i < hw; ++i) {
        const T xh = (xp[i] - mean[size_t(i)]) * rstd[size_t(i)];
        if (gxp)
          gxp[i] += rstd[size_t(i)] *
                    (g * gp[i] - inv_c * dot_g[size_t(i)] - xh * inv_c * dot_gx[size_t(i)]);
        acc_gamma += gp[i] * xh;
        acc_beta += gp[i];
      }
      if (ggamma) (*ggamma)[ch] += acc_gamma;
      if (gbeta) (*gbeta)[ch] += acc_beta;
    }
  }
}

template <typename T>
Tensor<T> global_avg_pool_fwd(const Tensor<T>& x) {
  check(x.rank() == 4, "global_avg_pool input must be N x C x H x W, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  check(hw >= 1, "global_avg_pool needs H,W >= 1");
  Tensor<T> y({n, c});
  const T inv = T(1) / T(hw);
  for (int64_t i = 0; i < n * c; ++i) {
    const T* xp = x.data() + i * hw;
    T acc = 0;
    for (int64_t j = 0; j < hw; ++j) acc += xp[j];
    y[i] = acc * inv;
  }
  return y;
}

template <typename T>
Tensor<T> linear_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check(x.rank() == 2, "linear input must be N x Din, got " + shape_str(x.shape()));
  check(w.rank() == 2, "linear weight must be Dout x Din, got " + shape_str(w.shape()));
  const int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  check(w.dim(1) == din, "linear Din mismatch: input has " + std::to_string(din) +
                             ", weight expects " + std::to_string(w.dim(1)));
  check(b.numel() == dout, "linear bias must have Dout=" + std::to_string(dout) + " entries");
  Tensor<T> y({n, dout});
  for (int64_t s = 0; s < n; ++s) {
    const T* xp = x.data() + s * din;
    for (int64_t o = 0; o < dout; ++o) {
      const T* wp = w.data() + o * din;
      T acc = b[o];
      for (int64_t i = 0; i < din; ++i) acc += wp[i] * xp[i];
      y[s * dout + o] = acc;
    }
  }
  return y;
}

template <typename T>
void linear_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  for (int64_t s = 0; s < n; ++s) {
    const T* xp = x.data() + s * din;
    const T* gyp = gy.data() + s * dout;
    for (int64_t o = 0; o < dout; ++o) {
      const T g = gyp[o];
      if (gw) {
        T* gwp = gw->data() + o * din;
        for (int64_t i = 0; i < din; ++i) gwp[i] += g * xp[i];
      }
      if (gx) {
        const T* wp = w.data() + o * din;
        T* gxp = gx->data() + s * din;
        for (int64_t i = 0; i < din; ++i) gxp[i] += g * wp[i];
      }
      if (gb) (*gb)[o] += g;
    }
  }
}

template <typename T>
Tensor<T> upsample_nearest2x_fwd(const Tensor<T>& x) {
  check(x.rank() == 4, "upsample_nearest2x input must be N x C x H x W");
  const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), h * 2, w * 2});
  for (int64_t p = 0; p < nc; ++p) {
    const T* xp = x.data() + p * h * w;
    T* yp = y.data() + p * h * w * 4;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const T v = xp[i * w + j];
        T* r0 = yp + (2 * i) * (2 * w) + 2 * j;
        r0[0] = v;
        r0[1] = v;
        r0[2 * w] = v;
        r0[2 * w + 1] = v;
      }
  }
  return y;
}

}  // namespace agi::kern
