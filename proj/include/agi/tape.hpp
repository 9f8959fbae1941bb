#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agi/kernels.hpp"
#include "agi/roll.hpp"
#include "agi/tensor.hpp"

namespace agi {

// Handle into a Tape. Plain index; cheap to copy, valid only for the tape
// that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Operations record their output value plus a backward
// closure at call time; backward() replays closures in reverse recording
// order, which fixes the gradient accumulation order and keeps runs
// bitwise reproducible. Every recorded value is checked for NaN/Inf so a
// diverging computation fails at the op that produced it.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool needs_grad = true, const char* name = "leaf") {
    return push(std::move(value), needs_grad, name, {});
  }

  const Tensor<T>& val(Var v) const { return node(v).value; }

  // Gradient of the last backward() target with respect to node v.
  const Tensor<T>& grad(Var v) const {
    const Node& nd = node(v);
    check(nd.needs_grad, std::string("tape: no gradient tracked for ") + nd.op + " node");
    check(ran_backward_, "tape: backward() has not run");
    return nd.grad;
  }

  bool tracks_grad(Var v) const { return node(v).needs_grad; }
  int size() const { return int(nodes_.size()); }

  void backward(Var loss) {
    Node& top = node(loss);
    check(top.value.numel() == 1, "tape: backward target must be scalar, got shape " +
                                      shape_str(top.value.shape()));
    check(top.needs_grad, "tape: backward target does not track gradients");
    for (Node& nd : nodes_)
      if (nd.needs_grad) nd.grad = Tensor<T>(nd.value.shape());
    top.grad[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& nd = nodes_[size_t(i)];
      if (nd.needs_grad && nd.backward) nd.backward();
    }
    ran_backward_ = true;
  }

  // ---- primitives ----

  Var conv2d(Var x, Var w, std::optional<Var> b, int stride, int pad, int groups) {
    return conv_common(x, w, b, stride, pad, groups, false, "conv2d");
  }

  // Per-sample kernels: w is N x Cout x Cin x k x k, one kernel set per sample.
  Var conv2d_per_sample(Var x, Var w, std::optional<Var> b, int stride, int pad) {
    return conv_common(x, w, b, stride, pad, 1, true, "conv2d_per_sample");
  }

  // Rolls each input-channel group of a shared kernel by per-sample fractional
  // offsets and scales it by a per-sample factor, producing per-sample kernels.
  // offsets is N x 2n laid out (ox_0, oy_0, ox_1, oy_1, ...); scales is N x n.
  Var group_roll_scale(Var w, Var offsets, Var scales, int n) {
    const Tensor<T>& wv = val(w);
    const Tensor<T>& ov = val(offsets);
    const Tensor<T>& sv = val(scales);
    check(wv.rank() == 4, "group_roll_scale: kernel must be Cout x Cin x k x k, got " +
                              shape_str(wv.shape()));
    const int64_t cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
    check(wv.dim(3) == k, "group_roll_scale: kernel must be square");
    check(n >= 1 && cin % n == 0, "group_roll_scale: Cin=" + std::to_string(cin) +
                                      " not divisible by n=" + std::to_string(n));
    check(ov.rank() == 2 && sv.rank() == 2 && ov.dim(0) == sv.dim(0),
          "group_roll_scale: offsets and scales must be N x 2n and N x n");
    check(ov.dim(1) == 2 * n && sv.dim(1) == n,
          "group_roll_scale: expected N x " + std::to_string(2 * n) + " offsets and N x " +
              std::to_string(n) + " scales, got " + shape_str(ov.shape()) + " and " +
              shape_str(sv.shape()));
    const int64_t ns = ov.dim(0), cg = cin / n;
    const int64_t slice = cg * k * k;

    Tensor<T> y({ns, cout, cin, k, k});
    for (int64_t s = 0; s < ns; ++s)
      for (int i = 0; i < n; ++i) {
        const roll::FracShift<T> fs(int(k), double(ov[s * 2 * n + 2 * i]),
                                    double(ov[s * 2 * n + 2 * i + 1]));
        const T lam = sv[s * n + i];
        for (int64_t oc = 0; oc < cout; ++oc) {
          const int64_t off = (oc * cin + i * cg) * k * k;
          const T* src = wv.data() + off;
          T* dst = y.data() + s * cout * cin * k * k + off;
          for (int64_t j = 0; j < cg; ++j) fs.apply(src + j * k * k, dst + j * k * k);
          if (lam != T(1))
            for (int64_t j = 0; j < slice; ++j) dst[j] *= lam;
        }
      }

    const bool nw = tracks_grad(w), no = tracks_grad(offsets), ns_g = tracks_grad(scales);
    Var out = push(std::move(y), nw || no || ns_g, "group_roll_scale", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, w, offsets, scales, out, n, nw, no, ns_g] {
        const Tensor<T>& wv = val(w);
        const Tensor<T>& ov = val(offsets);
        const Tensor<T>& sv = val(scales);
        const Tensor<T>& gy = node(out).grad;
        const int64_t cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
        const int64_t nsamp = ov.dim(0), cg = cin / n, slice = cg * k * k;
        std::vector<T> fwd_buf(static_cast<size_t>(slice));
        for (int64_t s = 0; s < nsamp; ++s)
          for (int i = 0; i < n; ++i) {
            const roll::FracShift<T> fs(int(k), double(ov[s * 2 * n + 2 * i]),
                                        double(ov[s * 2 * n + 2 * i + 1]));
            const T lam = sv[s * n + i];
            T gox = 0, goy = 0, glam = 0;
            for (int64_t oc = 0; oc < cout; ++oc) {
              const int64_t off = (oc * cin + i * cg) * k * k;
              const T* src = wv.data() + off;
              const T* gslice = gy.data() + s * cout * cin * k * k + off;
              if (nw || ns_g) {
                for (int64_t j = 0; j < cg; ++j) fs.apply(src + j * k * k, fwd_buf.data() + j * k * k);
              }
              if (ns_g)
                for (int64_t j = 0; j < slice; ++j) glam += gslice[j] * fwd_buf[size_t(j)];
              if (nw) {
                // d/dw of lam * FloatRoll(w): scale the incoming grad, then
                // scatter through the roll adjoint.
                T* gw = node(w).grad.data() + off;
                if (lam == T(1)) {
                  for (int64_t j = 0; j < cg; ++j)
                    fs.apply_adjoint(gslice + j * k * k, gw + j * k * k);
                } else {
                  for (int64_t j = 0; j < slice; ++j) fwd_buf[size_t(j)] = lam * gslice[j];
                  for (int64_t j = 0; j < cg; ++j)
                    fs.apply_adjoint(fwd_buf.data() + j * k * k, gw + j * k * k);
                }
              }
              if (no)
                for (int64_t j = 0; j < cg; ++j)
                  fs.offset_grads(src + j * k * k, gslice + j * k * k, gox, goy);
            }
            if (no) {
              node(offsets).grad[s * 2 * n + 2 * i] += lam * gox;
              node(offsets).grad[s * 2 * n + 2 * i + 1] += lam * goy;
            }
            if (ns_g) node(scales).grad[s * n + i] += glam;
          }
      };
    }
    return out;
  }

  Var channel_shuffle(Var x, int n) {
    const Tensor<T>& xv = val(x);
    check(xv.rank() >= 2, "channel_shuffle needs rank >= 2, got " + shape_str(xv.shape()));
    auto perm = kern::shuffle_perm(int(xv.dim(1)), n);
    Tensor<T> y = kern::permute_channels(xv, perm);
    Var out = push(std::move(y), tracks_grad(x), "channel_shuffle", {});
    if (node(out).needs_grad) {
      auto inv = kern::invert_perm(perm);
      node(out).backward = [this, x, out, inv = std::move(inv)] {
        accumulate(x, kern::permute_channels(node(out).grad, inv));
      };
    }
    return out;
  }

  Var relu(Var x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
    return unary(x, std::move(y), "relu", [](T xi, T, T g) { return xi > T(0) ? g : T(0); });
  }

  Var sigmoid(Var x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = T(1) / (T(1) + std::exp(-xv[i]));
    return unary(x, std::move(y), "sigmoid", [](T, T yi, T g) { return g * yi * (T(1) - yi); });
  }

  // tanh-form approximation; the backward differentiates the approximation
  // itself, not the exact Gauss error function.
  Var gelu(Var x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
      const T v = xv[i];
      y[i] = T(0.5) * v * (T(1) + std::tanh(gelu_c0() * (v + gelu_c1() * v * v * v)));
    }
    return unary(x, std::move(y), "gelu", [](T xi, T, T g) {
      const T u = gelu_c0() * (xi + gelu_c1() * xi * xi * xi);
      const T t = std::tanh(u);
      const T du = gelu_c0() * (T(1) + T(3) * gelu_c1() * xi * xi);
      return g * (T(0.5) * (T(1) + t) + T(0.5) * xi * (T(1) - t * t) * du);
    });
  }

  Var abs(Var x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = std::fabs(xv[i]);
    // Subgradient 0 at the kink.
    return unary(x, std::move(y), "abs",
                 [](T xi, T, T g) { return xi > T(0) ? g : (xi < T(0) ? -g : T(0)); });
  }

  Var add(Var a, Var b) {
    return binary_same_shape(a, b, "add", [](T av, T bv) { return av + bv; },
                             [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
  }

  Var sub(Var a, Var b) {
    return binary_same_shape(a, b, "sub", [](T av, T bv) { return av - bv; },
                             [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
  }

  Var mul(Var a, Var b) {
    return binary_same_shape(a, b, "mul", [](T av, T bv) { return av * bv; },
                             [](T, T bv, T g) { return g * bv; },
                             [](T av, T, T g) { return g * av; });
  }

  Var scale(Var x, T c) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = c * xv[i];
    return unary(x, std::move(y), "scale", [c](T, T, T g) { return c * g; });
  }

  // x is N x C x H x W, gain is N x C. Broadcast multiply over each plane.
  Var mul_channels(Var x, Var gain) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& av = val(gain);
    check(xv.rank() == 4 && av.rank() == 2 && xv.dim(0) == av.dim(0) && xv.dim(1) == av.dim(1),
          "mul_channels: expected N x C x H x W and matching N x C, got " +
              shape_str(xv.shape()) + " and " + shape_str(av.shape()));
    const int64_t nc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor<T> y(xv.shape());
    for (int64_t p = 0; p < nc; ++p) {
      const T g = av[p];
      const T* xp = xv.data() + p * hw;
      T* yp = y.data() + p * hw;
      for (int64_t i = 0; i < hw; ++i) yp[i] = g * xp[i];
    }
    const bool nx = tracks_grad(x), na = tracks_grad(gain);
    Var out = push(std::move(y), nx || na, "mul_channels", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, gain, out, nx, na] {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& av = val(gain);
        const Tensor<T>& gy = node(out).grad;
        const int64_t nc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
        for (int64_t p = 0; p < nc; ++p) {
          const T* gp = gy.data() + p * hw;
          if (nx) {
            const T g = av[p];
            T* gxp = node(x).grad.data() + p * hw;
            for (int64_t i = 0; i < hw; ++i) gxp[i] += g * gp[i];
          }
          if (na) {
            const T* xp = xv.data() + p * hw;
            T acc = 0;
            for (int64_t i = 0; i < hw; ++i) acc += gp[i] * xp[i];
            node(gain).grad[p] += acc;
          }
        }
      };
    }
    return out;
  }

  // Per-group affine over the concatenated pair (z_i, zs_i). z and zs are
  // N x C; w is n x C/n x 2C/n with the first C/n input slots reading z_i
  // and the rest reading zs_i; b is n x C/n. Output is N x C.
  Var group_pair_linear(Var z, Var zs, Var w, Var b, int n) {
    const Tensor<T>& zv = val(z);
    const Tensor<T>& zsv = val(zs);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    check(zv.rank() == 2 && zsv.same_shape(zv),
          "group_pair_linear: z and zs must both be N x C, got " + shape_str(zv.shape()) +
              " and " + shape_str(zsv.shape()));
    const int64_t ns = zv.dim(0), c = zv.dim(1);
    check(n >= 1 && c % n == 0,
          "group_pair_linear: C=" + std::to_string(c) + " not divisible by n=" + std::to_string(n));
    const int64_t cg = c / n;
    check(wv.rank() == 3 && wv.dim(0) == n && wv.dim(1) == cg && wv.dim(2) == 2 * cg,
          "group_pair_linear: weight must be n x C/n x 2C/n, got " + shape_str(wv.shape()));
    check(bv.rank() == 2 && bv.dim(0) == n && bv.dim(1) == cg,
          "group_pair_linear: bias must be n x C/n, got " + shape_str(bv.shape()));
    Tensor<T> y({ns, c});
    for (int64_t s = 0; s < ns; ++s)
      for (int i = 0; i < n; ++i) {
        const T* zp = zv.data() + s * c + i * cg;
        const T* zsp = zsv.data() + s * c + i * cg;
        T* yp = y.data() + s * c + i * cg;
        for (int64_t r = 0; r < cg; ++r) {
          const T* wp = wv.data() + (int64_t(i) * cg + r) * 2 * cg;
          T acc = bv[int64_t(i) * cg + r];
          for (int64_t q = 0; q < cg; ++q) acc += wp[q] * zp[q] + wp[cg + q] * zsp[q];
          yp[r] = acc;
        }
      }
    const bool nz = tracks_grad(z), nzs = tracks_grad(zs), nw = tracks_grad(w),
               nb = tracks_grad(b);
    Var out = push(std::move(y), nz || nzs || nw || nb, "group_pair_linear", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, z, zs, w, b, out, n, nz, nzs, nw, nb] {
        const Tensor<T>& zv = val(z);
        const Tensor<T>& zsv = val(zs);
        const Tensor<T>& wv = val(w);
        const Tensor<T>& gy = node(out).grad;
        const int64_t ns = zv.dim(0), c = zv.dim(1), cg = c / n;
        for (int64_t s = 0; s < ns; ++s)
          for (int i = 0; i < n; ++i) {
            const T* zp = zv.data() + s * c + i * cg;
            const T* zsp = zsv.data() + s * c + i * cg;
            const T* gp = gy.data() + s * c + i * cg;
            for (int64_t r = 0; r < cg; ++r) {
              const T g = gp[r];
              const T* wp = wv.data() + (int64_t(i) * cg + r) * 2 * cg;
              if (nz) {
                T* gzp = node(z).grad.data() + s * c + i * cg;
                for (int64_t q = 0; q < cg; ++q) gzp[q] += g * wp[q];
              }
              if (nzs) {
                T* gzsp = node(zs).grad.data() + s * c + i * cg;
                for (int64_t q = 0; q < cg; ++q) gzsp[q] += g * wp[cg + q];
              }
              if (nw) {
                T* gwp = node(w).grad.data() + (int64_t(i) * cg + r) * 2 * cg;
                for (int64_t q = 0; q < cg; ++q) {
                  gwp[q] += g * zp[q];
                  gwp[cg + q] += g * zsp[q];
                }
              }
              if (nb) node(b).grad[int64_t(i) * cg + r] += g;
            }
          }
      };
    }
    return out;
  }

  Var layernorm_channels(Var x, Var gamma, Var beta, T eps) {
    Tensor<T> y = kern::layernorm_channels_fwd(val(x), val(gamma), val(beta), eps);
    const bool nx = tracks_grad(x), ng = tracks_grad(gamma), nb = tracks_grad(beta);
    Var out = push(std::move(y), nx || ng || nb, "layernorm_channels", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, gamma, beta, out, eps, nx, ng, nb] {
        kern::layernorm_channels_bwd(val(x), val(gamma), eps, node(out).grad,
                                     nx ? &node(x).grad : nullptr, ng ? &node(gamma).grad : nullptr,
                                     nb ? &node(beta).grad : nullptr);
      };
    }
    return out;
  }

  Var global_avg_pool(Var x) {
    Tensor<T> y = kern::global_avg_pool_fwd(val(x));
    Var out = push(std::move(y), tracks_grad(x), "global_avg_pool", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, out] {
        const Tensor<T>& gy = node(out).grad;
        Tensor<T>& gx = node(x).grad;
        const int64_t nc = gx.dim(0) * gx.dim(1), hw = gx.dim(2) * gx.dim(3);
        const T inv = T(1) / T(hw);
        for (int64_t p = 0; p < nc; ++p) {
          const T g = gy[p] * inv;
          T* gxp = gx.data() + p * hw;
          for (int64_t i = 0; i < hw; ++i) gxp[i] += g;
        }
      };
    }
    return out;
  }

  Var linear(Var x, Var w, std::optional<Var> b) {
    const Tensor<T>& wv = val(w);
    Tensor<T> zero_bias({wv.dim(0)});
    Tensor<T> y = kern::linear_fwd(val(x), wv, b ? val(*b) : zero_bias);
    const bool nx = tracks_grad(x), nw = tracks_grad(w), nb = b && tracks_grad(*b);
    Var out = push(std::move(y), nx || nw || nb, "linear", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, w, b, out, nx, nw, nb] {
        kern::linear_bwd(val(x), val(w), node(out).grad, nx ? &node(x).grad : nullptr,
                         nw ? &node(w).grad : nullptr, nb ? &node(*b).grad : nullptr);
      };
    }
    return out;
  }

  Var concat_channels(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) &&
              av.dim(3) == bv.dim(3),
          "concat_channels: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
              " differ outside the channel axis");
    const int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), hw = av.dim(2) * av.dim(3);
    Tensor<T> y({n, ca + cb, av.dim(2), av.dim(3)});
    for (int64_t s = 0; s < n; ++s) {
      std::copy(av.data() + s * ca * hw, av.data() + (s + 1) * ca * hw,
                y.data() + s * (ca + cb) * hw);
      std::copy(bv.data() + s * cb * hw, bv.data() + (s + 1) * cb * hw,
                y.data() + s * (ca + cb) * hw + ca * hw);
    }
    const bool na = tracks_grad(a), nb = tracks_grad(b);
    Var out = push(std::move(y), na || nb, "concat_channels", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, a, b, out, n, ca, cb, hw, na, nb] {
        const Tensor<T>& gy = node(out).grad;
        for (int64_t s = 0; s < n; ++s) {
          const T* gp = gy.data() + s * (ca + cb) * hw;
          if (na) {
            T* ga = node(a).grad.data() + s * ca * hw;
            for (int64_t i = 0; i < ca * hw; ++i) ga[i] += gp[i];
          }
          if (nb) {
            T* gb = node(b).grad.data() + s * cb * hw;
            for (int64_t i = 0; i < cb * hw; ++i) gb[i] += gp[ca * hw + i];
          }
        }
      };
    }
    return out;
  }

  Var upsample_nearest2x(Var x) {
    Tensor<T> y = kern::upsample_nearest2x_fwd(val(x));
    Var out = push(std::move(y), tracks_grad(x), "upsample_nearest2x", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, out] {
        const Tensor<T>& gy = node(out).grad;
        Tensor<T>& gx = node(x).grad;
        const int64_t nc = gx.dim(0) * gx.dim(1), h = gx.dim(2), w = gx.dim(3);
        for (int64_t p = 0; p < nc; ++p) {
          const T* gp = gy.data() + p * h * w * 4;
          T* gxp = gx.data() + p * h * w;
          for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
              const T* r0 = gp + (2 * i) * (2 * w) + 2 * j;
              gxp[i * w + j] += r0[0] + r0[1] + r0[2 * w] + r0[2 * w + 1];
            }
        }
      };
    }
    return out;
  }

  Var mean_all(Var x) {
    const Tensor<T>& xv = val(x);
    check(xv.numel() >= 1, "mean_all of empty tensor");
    T acc = 0;
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    Tensor<T> y({1});
    y[0] = acc / T(xv.numel());
    Var out = push(std::move(y), tracks_grad(x), "mean_all", {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, out] {
        const T g = node(out).grad[0] / T(node(x).grad.numel());
        Tensor<T>& gx = node(x).grad;
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
      };
    }
    return out;
  }

  static constexpr T gelu_c0() { return T(0.7978845608028654); }
  static constexpr T gelu_c1() { return T(0.044715); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> backward;
    bool needs_grad = false;
    const char* op = "";
  };

  Node& node(Var v) {
    check(v.id >= 0 && v.id < int(nodes_.size()), "tape: invalid var id");
    return nodes_[size_t(v.id)];
  }
  const Node& node(Var v) const {
    check(v.id >= 0 && v.id < int(nodes_.size()), "tape: invalid var id");
    return nodes_[size_t(v.id)];
  }

  Var push(Tensor<T> value, bool needs_grad, const char* op, std::function<void()> bwd) {
    if (!value.all_finite())
      throw NumericError(std::string("non-finite value produced by ") + op + " (node " +
                         std::to_string(nodes_.size()) + ")");
    nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(bwd), needs_grad, op});
    return Var{int(nodes_.size()) - 1};
  }

  void accumulate(Var v, const Tensor<T>& g) {
    Tensor<T>& dst = node(v).grad;
    check(dst.same_shape(g), "tape: gradient shape mismatch");
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += g[i];
  }

  template <typename BwdF>
  Var unary(Var x, Tensor<T> y, const char* op, BwdF df) {
    Var out = push(std::move(y), tracks_grad(x), op, {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, out, df] {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& yv = node(out).value;
        const Tensor<T>& gy = node(out).grad;
        Tensor<T>& gx = node(x).grad;
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += df(xv[i], yv[i], gy[i]);
      };
    }
    return out;
  }

  template <typename FwdF, typename DaF, typename DbF>
  Var binary_same_shape(Var a, Var b, const char* op, FwdF f, DaF da, DbF db) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    check(av.same_shape(bv), std::string(op) + ": shape mismatch " + shape_str(av.shape()) +
                                 " vs " + shape_str(bv.shape()));
    Tensor<T> y(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) y[i] = f(av[i], bv[i]);
    const bool na = tracks_grad(a), nb = tracks_grad(b);
    Var out = push(std::move(y), na || nb, op, {});
    if (node(out).needs_grad) {
      node(out).backward = [this, a, b, out, da, db, na, nb] {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        const Tensor<T>& gy = node(out).grad;
        for (int64_t i = 0; i < gy.numel(); ++i) {
          if (na) node(a).grad[i] += da(av[i], bv[i], gy[i]);
          if (nb) node(b).grad[i] += db(av[i], bv[i], gy[i]);
        }
      };
    }
    return out;
  }

  Var conv_common(Var x, Var w, std::optional<Var> b, int stride, int pad, int groups,
                  bool per_sample, const char* op) {
    const Tensor<T>& wv = val(w);
    const int64_t cout = wv.dim(per_sample ? 1 : 0);
    Tensor<T> zero_bias({cout});
    Tensor<T> y = kern::conv2d_fwd(val(x), wv, b ? val(*b) : zero_bias, stride, pad, groups,
                                   per_sample);
    const bool nx = tracks_grad(x), nw = tracks_grad(w), nb = b && tracks_grad(*b);
    Var out = push(std::move(y), nx || nw || nb, op, {});
    if (node(out).needs_grad) {
      node(out).backward = [this, x, w, b, out, stride, pad, groups, per_sample, nx, nw, nb] {
        kern::conv2d_bwd(val(x), val(w), node(out).grad, stride, pad, groups, per_sample,
                         nx ? &node(x).grad : nullptr, nw ? &node(w).grad : nullptr,
                         nb ? &node(*b).grad : nullptr);
      };
    }
    return out;
  }

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace agi
