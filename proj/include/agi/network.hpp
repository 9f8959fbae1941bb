#pragma once

#include <array>
#include <string>
#include <vector>

#include "agi/cagr.hpp"
#include "agi/params.hpp"

// Encoder-decoder restoration net with three 2x down stages, a body, and
// three mirrored up stages. Each stage runs two residual blocks; in the
// attention-routed variant the first conv of a block is swapped for the
// rolling-kernel layer on a per-stage mask. Both variants share the same
// skeleton and parameter names, so parameter deltas isolate the swapped
// layers.
namespace agi {

enum class Arch { resunet, agi };

inline Arch arch_from_string(const std::string& s) {
  if (s == "resunet") return Arch::resunet;
  if (s == "agi") return Arch::agi;
  throw ConfigError("unknown arch '" + s + "' (expected resunet or agi)");
}

inline const char* arch_name(Arch a) { return a == Arch::agi ? "agi" : "resunet"; }

// Stage order for the replacement mask:
//   0 down1, 1 down2, 2 down3, 3 body, 4 up1, 5 up2, 6 up3
struct ModelConfig {
  Arch arch = Arch::agi;
  int in_ch = 2;
  std::vector<int> widths = {32, 64, 128, 256};  // w0 at full res, w3 at 1/8
  int groups = 4;
  std::vector<int> replace_mask = {1, 1, 1, 1, 1, 0, 0};
  uint64_t seed = 0;

  void validate() const {
    check(in_ch >= 1, "model: in_ch must be >= 1");
    check(widths.size() == 4, "model: widths must list 4 stage widths");
    for (int wd : widths) check(wd >= 1, "model: widths must be positive");
    check(groups >= 1, "model: groups must be >= 1");
    check(replace_mask.size() == 7, "model: replace_mask must have 7 stage flags");
    for (int m : replace_mask)
      check(m == 0 || m == 1, "model: replace_mask entries must be 0 or 1");
  }
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const int w0 = cfg_.widths[0], w1 = cfg_.widths[1], w2 = cfg_.widths[2], w3 = cfg_.widths[3];
    reg_conv("stem", cfg_.in_ch, w0, 3, rng);
    reg_stage("down1", 0, w0, w1, rng);
    reg_stage("down2", 1, w1, w2, rng);
    reg_stage("down3", 2, w2, w3, rng);
    reg_blocks("body", 3, w3, rng);
    reg_stage("up1", 4, 2 * w3, w2, rng);
    reg_stage("up2", 5, 2 * w2, w1, rng);
    reg_stage("up3", 6, 2 * w1, w0, rng);
    reg_conv("head", w0, 1, 1, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  int64_t count_params() const { return params_.total_params(); }

  bool replaced(int stage) const {
    return cfg_.arch == Arch::agi && cfg_.replace_mask[size_t(stage)] == 1;
  }

  // x is N x in_ch x H x W with H, W divisible by 8. Returns N x 1 x H x W.
  Var forward(FwdCtx<T>& ctx, Var x) const {
    const auto& xs = ctx.tape.val(x).shape();
    check(xs.size() == 4 && xs[1] == cfg_.in_ch,
          "model: input must be N x " + std::to_string(cfg_.in_ch) + " x H x W, got " +
              shape_str(xs));
    check(xs[2] % 8 == 0 && xs[3] % 8 == 0,
          "model: H and W must be divisible by 8, got " + shape_str(xs));
    Var h = ctx.tape.relu(conv(ctx, "stem", x, 1, 1));
    Var d1 = stage(ctx, "down1", 0, h, {});
    Var d2 = stage(ctx, "down2", 1, d1, {});
    Var d3 = stage(ctx, "down3", 2, d2, {});
    Var body = blocks(ctx, "body", 3, d3);
    Var u1 = stage(ctx, "up1", 4, body, d3);
    Var u2 = stage(ctx, "up2", 5, u1, d2);
    Var u3 = stage(ctx, "up3", 6, u2, d1);
    return conv(ctx, "head", u3, 1, 0);
  }

  // Convolution and dense multiply-accumulates only, two flops per MAC,
  // for one sample at the given input size.
  int64_t count_flops(int h, int w) const {
    check(h % 8 == 0 && w % 8 == 0, "model: H and W must be divisible by 8");
    int64_t total = 0;
    auto conv_f = [&](int64_t cout, int64_t cin_g, int64_t k, int64_t oh, int64_t ow) {
      total += 2 * cout * cin_g * k * k * oh * ow;
    };
    auto dense_f = [&](int64_t dout, int64_t din) { total += 2 * dout * din; };
    auto block_f = [&](int stage_i, int64_t ch, int64_t sh, int64_t sw) {
      for (int b = 0; b < 2; ++b) {
        if (replaced(stage_i)) {
          const int64_t n = cfg_.groups, cg = ch / n;
          dense_f(ch, 2 * cg);            // gate affine: n groups of cg x 2cg
          conv_f(ch, cg, 3, sh, sw);      // routing conv
          dense_f(2 * n, ch);             // offset head
          dense_f(n, ch);                 // scale head
          conv_f(ch, ch, 3, sh, sw);      // rolled main conv
        } else {
          conv_f(ch, ch, 3, sh, sw);
        }
        conv_f(ch, ch, 3, sh, sw);  // second block conv
      }
    };
    const int64_t w0 = cfg_.widths[0], w1 = cfg_.widths[1], w2 = cfg_.widths[2],
                  w3 = cfg_.widths[3];
    conv_f(w0, cfg_.in_ch, 3, h, w);  // stem
    conv_f(w1, w0, 3, h / 2, w / 2);  // down entries
    block_f(0, w1, h / 2, w / 2);
    conv_f(w2, w1, 3, h / 4, w / 4);
    block_f(1, w2, h / 4, w / 4);
    conv_f(w3, w2, 3, h / 8, w / 8);
    block_f(2, w3, h / 8, w / 8);
    block_f(3, w3, h / 8, w / 8);  // body
    conv_f(w2, 2 * w3, 3, h / 4, w / 4);  // up entries after 2x upsample
    block_f(4, w2, h / 4, w / 4);
    conv_f(w1, 2 * w2, 3, h / 2, w / 2);
    block_f(5, w1, h / 2, w / 2);
    conv_f(w0, 2 * w1, 3, h, w);
    block_f(6, w0, h, w);
    conv_f(1, w0, 1, h, w);  // head
    return total;
  }

 private:
  void reg_conv(const std::string& name, int cin, int cout, int k, Rng& rng) {
    params_.add(name + ".w", he_uniform<T>({cout, cin, k, k}, int64_t(cin) * k * k, rng));
    params_.add(name + ".b", Tensor<T>({cout}));
  }

  // Second block convs start at zero: every residual block is the
  // identity at init, so both variants produce identical outputs until
  // training moves them, and activations cannot compound stage by stage.
  void reg_zero_conv(const std::string& name, int cin, int cout, int k) {
    params_.add(name + ".w", Tensor<T>({cout, cin, k, k}));
    params_.add(name + ".b", Tensor<T>({cout}));
  }

  void reg_blocks(const std::string& prefix, int stage_i, int ch, Rng& rng) {
    for (int b = 0; b < 2; ++b) {
      const std::string rb = prefix + ".rb" + std::to_string(b);
      if (replaced(stage_i)) {
        CagrConfig cc = cagr_config(ch);
        register_cagr_params(params_, rb + ".c1", cc, rng);
      } else {
        reg_conv(rb + ".c1", ch, ch, 3, rng);
      }
      reg_zero_conv(rb + ".c2", ch, ch, 3);
    }
  }

  // Down stages: strided entry conv then blocks. Up stages: the caller
  // concatenates the skip first, so the entry conv halves the channel
  // count after a 2x upsample.
  void reg_stage(const std::string& prefix, int stage_i, int cin, int cout, Rng& rng) {
    reg_conv(prefix + ".in", cin, cout, 3, rng);
    reg_blocks(prefix, stage_i, cout, rng);
  }

  CagrConfig cagr_config(int ch) const {
    CagrConfig cc;
    cc.cin = ch;
    cc.cout = ch;
    cc.k = 3;
    cc.n = cfg_.groups;
    cc.stride = 1;
    return cc;
  }

  Var conv(FwdCtx<T>& ctx, const std::string& name, Var x, int stride, int pad) const {
    return ctx.tape.conv2d(x, ctx.param(name + ".w"), ctx.param(name + ".b"), stride, pad, 1);
  }

  Var res_block(FwdCtx<T>& ctx, const std::string& rb, int stage_i, int ch, Var z) const {
    Var h;
    if (replaced(stage_i)) {
      h = cagr_forward(ctx, rb + ".c1", cagr_config(ch), z);
    } else {
      h = ctx.tape.conv2d(z, ctx.param(rb + ".c1.w"), ctx.param(rb + ".c1.b"), 1, 1, 1);
    }
    h = ctx.tape.relu(h);
    h = ctx.tape.conv2d(h, ctx.param(rb + ".c2.w"), ctx.param(rb + ".c2.b"), 1, 1, 1);
    return ctx.tape.add(z, h);
  }

  Var blocks(FwdCtx<T>& ctx, const std::string& prefix, int stage_i, Var z) const {
    const int ch = int(ctx.tape.val(z).shape()[1]);
    for (int b = 0; b < 2; ++b) z = res_block(ctx, prefix + ".rb" + std::to_string(b), stage_i, ch, z);
    return z;
  }

  // skip.valid() marks an up stage: concat the skip, upsample, then the
  // entry conv; down stages stride instead. Entry convs carry a relu so
  // activation variance stays level across stages.
  Var stage(FwdCtx<T>& ctx, const std::string& prefix, int stage_i, Var x, Var skip) const {
    Var h;
    if (skip.valid()) {
      h = ctx.tape.concat_channels(x, skip);
      h = ctx.tape.upsample_nearest2x(h);
      h = conv(ctx, prefix + ".in", h, 1, 1);
    } else {
      h = conv(ctx, prefix + ".in", x, 2, 1);
    }
    h = ctx.tape.relu(h);
    return blocks(ctx, prefix, stage_i, h);
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
};

}  // namespace agi
