#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "agi/tensor.hpp"

// Circular kernel rolling. Convention, fixed across the library:
// the last two axes of a kernel slice are (y, x) = (rows, columns);
// a roll by integer (sx, sy) produces
//     out[..., u, v] = w[..., (u - sy) mod k, (v - sx) mod k]
// i.e. sy shifts rows downward, sx shifts columns rightward. Offsets are
// unbounded reals; rolling is periodic with period k in both axes.
namespace agi::roll {

struct IntShift {
  int sx = 0;
  int sy = 0;
};

namespace detail {

template <typename T>
inline int64_t tail_check(const Tensor<T>& w) {
  check(w.rank() >= 2, "roll: kernel slice must have rank >= 2, got " + shape_str(w.shape()));
  const int64_t k = w.dim(w.rank() - 1);
  check(w.dim(w.rank() - 2) == k,
        "roll: last two axes must be square, got " + shape_str(w.shape()));
  check(k >= 1, "roll: kernel size must be >= 1");
  return k;
}

// Row/column source maps for one integer shift pair.
inline void fill_maps(int k, int sx, int sy, int* rows, int* cols) {
  for (int u = 0; u < k; ++u) rows[u] = mod_pos(u - sy, k);
  for (int v = 0; v < k; ++v) cols[v] = mod_pos(v - sx, k);
}

}  // namespace detail

// Rolls the last two axes of every leading sub-kernel by the same shift.
template <typename T>
Tensor<T> roll_int(const Tensor<T>& w, int sx, int sy) {
  const int k = int(detail::tail_check(w));
  const int64_t m = w.numel() / (int64_t(k) * k);
  Tensor<T> out(w.shape());
  for (int64_t s = 0; s < m; ++s) {
    const T* src = w.data() + s * k * k;
    T* dst = out.data() + s * k * k;
    for (int u = 0; u < k; ++u)
      for (int v = 0; v < k; ++v)
        dst[u * k + v] = src[mod_pos(u - sy, k) * k + mod_pos(v - sx, k)];
  }
  return out;
}

// One pass over a stack of slices, each with its own shift. Semantics are
// identical to looping roll_int over the leading axis; this variant builds
// the source maps once per slice and reuses them for every sub-kernel.
template <typename T>
Tensor<T> roll_int_batched(const Tensor<T>& w, std::span<const IntShift> shifts) {
  const int k = int(detail::tail_check(w));
  check(w.rank() >= 3, "roll_int_batched: need a leading slice axis, got " + shape_str(w.shape()));
  const int64_t s_count = w.dim(0);
  check(int64_t(shifts.size()) == s_count,
        "roll_int_batched: " + std::to_string(shifts.size()) + " shifts for " +
            std::to_string(s_count) + " slices");
  const int64_t slice_sz = w.numel() / s_count;
  const int64_t m = slice_sz / (int64_t(k) * k);
  Tensor<T> out(w.shape());
  std::vector<int> rows(static_cast<size_t>(k)), cols(static_cast<size_t>(k));
  for (int64_t s = 0; s < s_count; ++s) {
    detail::fill_maps(k, shifts[size_t(s)].sx, shifts[size_t(s)].sy, rows.data(), cols.data());
    const T* src0 = w.data() + s * slice_sz;
    T* dst0 = out.data() + s * slice_sz;
    for (int64_t j = 0; j < m; ++j) {
      const T* src = src0 + j * k * k;
      T* dst = dst0 + j * k * k;
      for (int u = 0; u < k; ++u) {
        const T* sr = src + rows[size_t(u)] * k;
        T* dr = dst + u * k;
        for (int v = 0; v < k; ++v) dr[v] = sr[cols[size_t(v)]];
      }
    }
  }
  return out;
}

// Precomputed interpolation structure for one fractional shift: two row
// maps, two column maps, and the four bilinear coefficients. The ceil in
// the interpolation is realized as floor+1 throughout, which agrees with
// ceil wherever they differ in effect and gives a consistent one-sided
// derivative at integer offsets.
template <typename T>
struct FracShift {
  int k = 0;
  T fx = 0, fy = 0;
  T c00 = 1, c10 = 0, c01 = 0, c11 = 0;  // (1-fx)(1-fy), fx(1-fy), (1-fx)fy, fx fy
  std::vector<int> r0, r1, col0, col1;

  FracShift(int k_, double ox, double oy) : k(k_) {
    const double fox = std::floor(ox), foy = std::floor(oy);
    fx = T(ox - fox);
    fy = T(oy - foy);
    const int sx = mod_pos(int(mod_pos64(int64_t(fox), k)), k);
    const int sy = mod_pos(int(mod_pos64(int64_t(foy), k)), k);
    r0.resize(static_cast<size_t>(k));
    r1.resize(static_cast<size_t>(k));
    col0.resize(static_cast<size_t>(k));
    col1.resize(static_cast<size_t>(k));
    for (int u = 0; u < k; ++u) {
      r0[size_t(u)] = mod_pos(u - sy, k);
      r1[size_t(u)] = mod_pos(u - sy - 1, k);
    }
    for (int v = 0; v < k; ++v) {
      col0[size_t(v)] = mod_pos(v - sx, k);
      col1[size_t(v)] = mod_pos(v - sx - 1, k);
    }
    c00 = (T(1) - fx) * (T(1) - fy);
    c10 = fx * (T(1) - fy);
    c01 = (T(1) - fx) * fy;
    c11 = fx * fy;
  }

  bool integer() const { return fx == T(0) && fy == T(0); }

  // out = interpolated roll of one k*k sub-kernel.
  void apply(const T* src, T* dst) const {
    if (integer()) {
      for (int u = 0; u < k; ++u) {
        const T* sr = src + r0[size_t(u)] * k;
        T* dr = dst + u * k;
        for (int v = 0; v < k; ++v) dr[v] = sr[col0[size_t(v)]];
      }
      return;
    }
    for (int u = 0; u < k; ++u) {
      const T* sa = src + r0[size_t(u)] * k;
      const T* sb = src + r1[size_t(u)] * k;
      T* dr = dst + u * k;
      for (int v = 0; v < k; ++v)
        dr[v] = c00 * sa[col0[size_t(v)]] + c10 * sa[col1[size_t(v)]] +
                c01 * sb[col0[size_t(v)]] + c11 * sb[col1[size_t(v)]];
    }
  }

  // Adjoint scatter: grad_w += transpose-roll of one sub-kernel's grad_out.
  void apply_adjoint(const T* gy, T* gw) const {
    for (int u = 0; u < k; ++u) {
      const T* gr = gy + u * k;
      T* ga = gw + r0[size_t(u)] * k;
      T* gb = gw + r1[size_t(u)] * k;
      for (int v = 0; v < k; ++v) {
        ga[col0[size_t(v)]] += c00 * gr[v];
        ga[col1[size_t(v)]] += c10 * gr[v];
        gb[col0[size_t(v)]] += c01 * gr[v];
        gb[col1[size_t(v)]] += c11 * gr[v];
      }
    }
  }

  // Accumulates the offset derivatives of <gy, FloatRoll(w)> for one
  // sub-kernel. floor() is treated as locally constant; at exact integer
  // offsets this yields the right-hand derivative.
  void offset_grads(const T* src, const T* gy, T& gox, T& goy) const {
    for (int u = 0; u < k; ++u) {
      const T* sa = src + r0[size_t(u)] * k;
      const T* sb = src + r1[size_t(u)] * k;
      const T* gr = gy + u * k;
      for (int v = 0; v < k; ++v) {
        const T w00 = sa[col0[size_t(v)]], w10 = sa[col1[size_t(v)]];
        const T w01 = sb[col0[size_t(v)]], w11 = sb[col1[size_t(v)]];
        gox += gr[v] * ((T(1) - fy) * (w10 - w00) + fy * (w11 - w01));
        goy += gr[v] * ((T(1) - fx) * (w01 - w00) + fx * (w11 - w10));
      }
    }
  }
};

// Bilinear interpolation of four integer rolls at a fractional offset.
template <typename T>
Tensor<T> float_roll(const Tensor<T>& w, double ox, double oy) {
  const int k = int(detail::tail_check(w));
  const int64_t m = w.numel() / (int64_t(k) * k);
  const FracShift<T> fs(k, ox, oy);
  Tensor<T> out(w.shape());
  for (int64_t s = 0; s < m; ++s) fs.apply(w.data() + s * k * k, out.data() + s * k * k);
  return out;
}

template <typename T>
struct FloatRollGrads {
  Tensor<T> grad_w;
  T grad_ox = 0;
  T grad_oy = 0;
};

// Adjoints of float_roll for weights and both offsets.
template <typename T>
FloatRollGrads<T> float_roll_backward(const Tensor<T>& grad_out, const Tensor<T>& w,
                                      double ox, double oy) {
  check(grad_out.same_shape(w), "float_roll_backward: grad shape " + shape_str(grad_out.shape()) +
                                    " does not match kernel " + shape_str(w.shape()));
  const int k = int(detail::tail_check(w));
  const int64_t m = w.numel() / (int64_t(k) * k);
  const FracShift<T> fs(k, ox, oy);
  FloatRollGrads<T> g;
  g.grad_w = Tensor<T>(w.shape());
  for (int64_t s = 0; s < m; ++s) {
    const int64_t off = s * k * k;
    fs.apply_adjoint(grad_out.data() + off, g.grad_w.data() + off);
    fs.offset_grads(w.data() + off, grad_out.data() + off, g.grad_ox, g.grad_oy);
  }
  return g;
}

// Scales each already-rolled group slice by its factor and concatenates
// along the input-channel axis. Slices are Cout x Cin/n x k x k; output is
// Cout x Cin x k x k, so the learnable kernel count stays Cout*Cin*k*k.
template <typename T>
Tensor<T> assemble_rolled_kernel(std::span<const Tensor<T>> slices, std::span<const T> lambdas) {
  check(!slices.empty(), "assemble_rolled_kernel: no group slices");
  check(slices.size() == lambdas.size(), "assemble_rolled_kernel: " +
                                             std::to_string(slices.size()) + " slices vs " +
                                             std::to_string(lambdas.size()) + " scale factors");
  const auto& s0 = slices[0].shape();
  check(s0.size() == 4, "assemble_rolled_kernel: slices must be Cout x Cin/n x k x k");
  const int64_t cout = s0[0], cg = s0[1], k = s0[2];
  for (const auto& s : slices)
    check(s.shape() == s0, "assemble_rolled_kernel: group slice shape mismatch " +
                               shape_str(s.shape()) + " vs " + shape_str(s0));
  const int64_t n = int64_t(slices.size());
  Tensor<T> out({cout, cg * n, k, k});
  for (int64_t oc = 0; oc < cout; ++oc)
    for (int64_t i = 0; i < n; ++i) {
      const T lam = lambdas[size_t(i)];
      const T* src = slices[size_t(i)].data() + oc * cg * k * k;
      T* dst = out.data() + (oc * cg * n + i * cg) * k * k;
      for (int64_t j = 0; j < cg * k * k; ++j) dst[j] = lam * src[j];
    }
  return out;
}

// float_roll per group followed by assembly, for one kernel set.
template <typename T>
struct GroupShift {
  T ox = 0;
  T oy = 0;
};

template <typename T>
Tensor<T> roll_and_assemble(const Tensor<T>& w, int n, std::span<const GroupShift<T>> shifts,
                            std::span<const T> lambdas) {
  check(w.rank() == 4, "roll_and_assemble: kernel must be Cout x Cin x k x k");
  const int64_t cin = w.dim(1);
  check(n >= 1 && cin % n == 0,
        "roll_and_assemble: Cin=" + std::to_string(cin) + " not divisible by n=" + std::to_string(n));
  check(int64_t(shifts.size()) == n && int64_t(lambdas.size()) == n,
        "roll_and_assemble: expected " + std::to_string(n) + " shifts and scale factors");
  const int64_t cout = w.dim(0), cg = cin / n, k = w.dim(2);
  Tensor<T> out(w.shape());
  std::vector<T> buf(size_t(cg * k * k));
  for (int i = 0; i < n; ++i) {
    const FracShift<T> fs(int(k), double(shifts[size_t(i)].ox), double(shifts[size_t(i)].oy));
    const T lam = lambdas[size_t(i)];
    for (int64_t oc = 0; oc < cout; ++oc) {
      const T* src = w.data() + (oc * cin + int64_t(i) * cg) * k * k;
      T* dst = out.data() + (oc * cin + int64_t(i) * cg) * k * k;
      for (int64_t j = 0; j < cg; ++j) fs.apply(src + j * k * k, buf.data() + j * k * k);
      for (int64_t j = 0; j < cg * k * k; ++j) dst[j] = lam * buf[j];
    }
  }
  return out;
}

}  // namespace agi::roll
