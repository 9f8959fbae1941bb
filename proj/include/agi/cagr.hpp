#pragma once

#include <string>

#include "agi/params.hpp"

// Attention-gated, offset-routed grouped convolution layer. The layer
// keeps one shared kernel bank; per input it predicts a fractional roll
// and a scale for each channel group, applies them to the kernel, and
// convolves with the result. Degenerate switches reduce it to a plain
// convolution for equivalence testing.
namespace agi {

inline constexpr double kLayerNormEps = 1e-5;

struct CagrConfig {
  int cin = 0;
  int cout = 0;
  int k = 3;
  int n = 4;       // channel groups for attention and rolling
  int stride = 1;
  bool bypass_attention = false;  // input passes to the conv untouched
  bool identity_roll = false;     // shared un-rolled, un-scaled kernel

  int pad() const { return k / 2; }

  void validate() const {
    check(cin >= 1 && cout >= 1, "cagr: cin and cout must be >= 1");
    check(k >= 1 && k % 2 == 1, "cagr: kernel size must be odd, got " + std::to_string(k));
    check(n >= 1 && cin % n == 0, "cagr: n=" + std::to_string(n) +
                                      " must divide cin=" + std::to_string(cin));
    check(stride >= 1, "cagr: stride must be >= 1");
  }
};

// Parameter layout under one prefix. Zero/one choices pin the documented
// start state: attention gates open at 0.5, offsets at 0, scales at
// sigmoid(1).
//   w, b                     main kernel bank and bias
//   attn.w, attn.b           per-group gate affine (zeros)
//   route.conv.w/b           grouped 3x3 feature conv
//   route.ln.gamma/beta      channel layernorm (ones / zeros)
//   route.off.w/b            offset head, cin -> 2n (zeros)
//   route.scale.w/b          scale head, cin -> n (zero weight, unit bias)
template <typename T>
void register_cagr_params(ParamStore<T>& ps, const std::string& prefix, const CagrConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  const int64_t cin = cfg.cin, cout = cfg.cout, k = cfg.k, n = cfg.n, cg = cin / n;
  ps.add(prefix + ".w", he_uniform<T>({cout, cin, k, k}, cin * k * k, rng));
  ps.add(prefix + ".b", Tensor<T>({cout}));
  ps.add(prefix + ".attn.w", Tensor<T>({n, cg, 2 * cg}));
  ps.add(prefix + ".attn.b", Tensor<T>({n, cg}));
  ps.add(prefix + ".route.conv.w", he_uniform<T>({cin, cg, 3, 3}, cg * 9, rng));
  ps.add(prefix + ".route.conv.b", Tensor<T>({cin}));
  ps.add(prefix + ".route.ln.gamma", Tensor<T>::full({cin}, T(1)));
  ps.add(prefix + ".route.ln.beta", Tensor<T>({cin}));
  ps.add(prefix + ".route.off.w", Tensor<T>({2 * n, cin}));
  ps.add(prefix + ".route.off.b", Tensor<T>({2 * n}));
  ps.add(prefix + ".route.scale.w", Tensor<T>({n, cin}));
  ps.add(prefix + ".route.scale.b", Tensor<T>::full({n}, T(1)));
}

// Gate vector A in (0,1)^(N x C): pooled descriptor, its shuffled copy,
// then a per-group affine over the concatenated pair and a sigmoid. Each
// group sees its own slice plus one representative channel from every
// group, which is what lets gates react to cross-group context.
template <typename T>
Var cross_group_attention_gate(FwdCtx<T>& ctx, const std::string& prefix, int n, Var x) {
  Var z = ctx.tape.global_avg_pool(x);
  Var zs = ctx.tape.channel_shuffle(z, n);
  Var pre = ctx.tape.group_pair_linear(z, zs, ctx.param(prefix + ".attn.w"),
                                       ctx.param(prefix + ".attn.b"), n);
  return ctx.tape.sigmoid(pre);
}

// Gated input x~ = x (.) A, broadcast over spatial positions.
template <typename T>
Var cross_group_attention(FwdCtx<T>& ctx, const std::string& prefix, int n, Var x) {
  return ctx.tape.mul_channels(x, cross_group_attention_gate(ctx, prefix, n, x));
}

struct RoutingOut {
  Var offsets;  // N x 2n, (ox, oy) per group, unbounded
  Var scales;   // N x n, in (0,1)
};

template <typename T>
void cagr_check_input(FwdCtx<T>& ctx, Var x, const CagrConfig& cfg) {
  const auto& xs = ctx.tape.val(x).shape();
  check(xs.size() == 4 && xs[1] == cfg.cin,
        "cagr: input " + shape_str(xs) + " does not carry cin=" + std::to_string(cfg.cin));
}

// Shared routing trunk feeding two heads. Offsets come out of a bare
// linear layer so they can grow past one kernel period; scales squash
// through a sigmoid.
template <typename T>
RoutingOut routing_forward(FwdCtx<T>& ctx, const std::string& prefix, const CagrConfig& cfg,
                           Var xt) {
  cagr_check_input(ctx, xt, cfg);
  Var r = ctx.tape.conv2d(xt, ctx.param(prefix + ".route.conv.w"),
                          ctx.param(prefix + ".route.conv.b"), 1, 1, cfg.n);
  r = ctx.tape.layernorm_channels(r, ctx.param(prefix + ".route.ln.gamma"),
                                  ctx.param(prefix + ".route.ln.beta"), T(kLayerNormEps));
  r = ctx.tape.gelu(r);
  Var p = ctx.tape.global_avg_pool(r);
  Var offsets = ctx.tape.linear(p, ctx.param(prefix + ".route.off.w"),
                                ctx.param(prefix + ".route.off.b"));
  Var scales = ctx.tape.sigmoid(ctx.tape.linear(p, ctx.param(prefix + ".route.scale.w"),
                                                ctx.param(prefix + ".route.scale.b")));
  return {offsets, scales};
}

template <typename T>
Var cagr_forward(FwdCtx<T>& ctx, const std::string& prefix, const CagrConfig& cfg, Var x) {
  cfg.validate();
  cagr_check_input(ctx, x, cfg);
  Var xt = cfg.bypass_attention ? x : cross_group_attention(ctx, prefix, cfg.n, x);
  Var w = ctx.param(prefix + ".w");
  Var b = ctx.param(prefix + ".b");
  RoutingOut route;
  if (cfg.identity_roll) {
    // Forced degenerate routing: zero offsets, unit scales. The roll and
    // per-sample conv still run, so this pins their collapse to a plain
    // convolution rather than skipping them.
    const int64_t num = ctx.tape.val(x).dim(0);
    route.offsets = ctx.tape.leaf(Tensor<T>({num, 2 * cfg.n}), false);
    route.scales = ctx.tape.leaf(Tensor<T>::full({num, cfg.n}, T(1)), false);
  } else {
    route = routing_forward(ctx, prefix, cfg, xt);
  }
  Var kernels = ctx.tape.group_roll_scale(w, route.offsets, route.scales, cfg.n);
  return ctx.tape.conv2d_per_sample(xt, kernels, b, cfg.stride, cfg.pad());
}

}  // namespace agi
