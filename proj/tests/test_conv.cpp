#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "agi/kernels.hpp"
#include "agi/rng.hpp"
#include "agi/tensor.hpp"

using agi::Rng;
using agi::ShapeError;
using agi::Tensor;

namespace {

// Direct six-loop convolution, written independently of the library kernels.
Tensor<double> conv_ref(const Tensor<double>& x, const Tensor<double>& w,
                        const Tensor<double>& bias, int stride, int pad, int groups,
                        bool per_sample) {
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int base = per_sample ? 1 : 0;
  const int64_t cout = w.dim(base + 0), k = w.dim(base + 2);
  const int64_t cin_g = cin / groups, cout_g = cout / groups;
  const int64_t hout = (h + 2 * pad - k) / stride + 1;
  const int64_t wout = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, cout, hout, wout});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t oc = 0; oc < cout; ++oc) {
      const int64_t g = oc / cout_g;
      for (int64_t oy = 0; oy < hout; ++oy)
        for (int64_t ox = 0; ox < wout; ++ox) {
          double acc = bias[oc];
          for (int64_t ic = 0; ic < cin_g; ++ic)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * stride - pad + ky;
                const int64_t ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                const double xv = x.at(s, g * cin_g + ic, iy, ix);
                const double wv = per_sample ? w.at(s, oc, ic, ky, kx) : w.at(oc, ic, ky, kx);
                acc += wv * xv;
              }
          y.at(s, oc, oy, ox) = acc;
        }
    }
  return y;
}

struct ConvCase {
  int n, groups, cin_g, cout_g, k, stride, pad, h, w;
  bool per_sample;
};

}  // namespace

TEST(Conv, MatchesNaiveOracleAcrossConfigs) {
  Rng rng(101);
  for (int t = 0; t < 30; ++t) {
    ConvCase c;
    c.n = 1 + int(rng.next_below(3));
    c.groups = 1 << int(rng.next_below(3));
    c.cin_g = 1 + int(rng.next_below(3));
    c.cout_g = 1 + int(rng.next_below(3));
    c.k = 2 * int(rng.next_below(3)) + 1;
    c.stride = 1 + int(rng.next_below(2));
    c.pad = int(rng.next_below(3));
    c.h = c.k + int(rng.next_below(5));
    c.w = c.k + int(rng.next_below(5));
    c.per_sample = rng.next_below(2) == 1;
    const int cin = c.groups * c.cin_g, cout = c.groups * c.cout_g;
    std::vector<int64_t> ws = {cout, c.cin_g, c.k, c.k};
    if (c.per_sample) ws.insert(ws.begin(), c.n);
    const auto x = agi::rand_uniform<double>(rng, {c.n, cin, c.h, c.w}, -1.0, 1.0);
    const auto w = agi::rand_uniform<double>(rng, ws, -1.0, 1.0);
    const auto b = agi::rand_uniform<double>(rng, {cout}, -0.5, 0.5);
    const auto got = agi::kern::conv2d_fwd(x, w, b, c.stride, c.pad, c.groups, c.per_sample);
    const auto ref = conv_ref(x, w, b, c.stride, c.pad, c.groups, c.per_sample);
    EXPECT_LE(agi::max_abs_diff(got, ref), 1e-12)
        << "case " << t << ": n=" << c.n << " g=" << c.groups << " k=" << c.k
        << " stride=" << c.stride << " pad=" << c.pad << " per_sample=" << c.per_sample;
  }
}

TEST(Conv, HandCountedPadding) {
  // All-ones input and all-ones 3x3 kernel with pad 1: each output counts the
  // in-bounds taps, so corners read 4, edges 6, interior 9.
  const auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  const auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  const Tensor<double> b({1});
  const auto y = agi::kern::conv2d_fwd(x, w, b, 1, 1, 1, false);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 1), 6.0);
  EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 2, 2), 4.0);
}

TEST(Conv, PerSampleMatchesLoopOverSamples) {
  Rng rng(202);
  const int n = 3, cout = 4, cin = 4, k = 3;
  const auto x = agi::rand_uniform<double>(rng, {n, cin, 6, 5}, -1.0, 1.0);
  const auto w = agi::rand_uniform<double>(rng, {n, cout, cin, k, k}, -1.0, 1.0);
  const auto b = agi::rand_uniform<double>(rng, {cout}, -0.5, 0.5);
  const auto batched = agi::kern::conv2d_fwd(x, w, b, 1, 1, 1, true);
  for (int s = 0; s < n; ++s) {
    Tensor<double> xs({1, cin, 6, 5});
    std::copy(x.data() + s * x.numel() / n, x.data() + (s + 1) * x.numel() / n, xs.data());
    Tensor<double> wsl({cout, cin, k, k});
    std::copy(w.data() + s * wsl.numel(), w.data() + (s + 1) * wsl.numel(), wsl.data());
    const auto ys = agi::kern::conv2d_fwd(xs, wsl, b, 1, 1, 1, false);
    for (int64_t i = 0; i < ys.numel(); ++i)
      EXPECT_EQ(ys[i], batched[s * ys.numel() + i]) << "sample " << s << " element " << i;
  }
}

TEST(Conv, GroupedEqualsBlockDiagonalDense) {
  Rng rng(303);
  const int groups = 4, cin = 8, cout = 8, k = 3;
  const auto x = agi::rand_uniform<double>(rng, {2, cin, 5, 5}, -1.0, 1.0);
  const auto wg = agi::rand_uniform<double>(rng, {cout, cin / groups, k, k}, -1.0, 1.0);
  const auto b = agi::rand_uniform<double>(rng, {cout}, -0.5, 0.5);
  Tensor<double> wd({cout, cin, k, k});
  for (int oc = 0; oc < cout; ++oc) {
    const int g = oc / (cout / groups);
    for (int ic = 0; ic < cin / groups; ++ic)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          wd.at(oc, g * (cin / groups) + ic, ky, kx) = wg.at(oc, ic, ky, kx);
  }
  const auto yg = agi::kern::conv2d_fwd(x, wg, b, 1, 1, groups, false);
  const auto yd = agi::kern::conv2d_fwd(x, wd, b, 1, 1, 1, false);
  EXPECT_LE(agi::max_abs_diff(yg, yd), 1e-12);
}

TEST(Conv, BackwardSatisfiesAdjointIdentities) {
  // With zero bias, <gy, conv(x, w)> must equal <gx, x> and <gw, w>.
  Rng rng(404);
  for (const bool per_sample : {false, true}) {
    const int n = 2, cout = 4, cin = 6, k = 3, groups = 2, stride = 2, pad = 1;
    std::vector<int64_t> ws = {cout, cin / groups, k, k};
    if (per_sample) ws.insert(ws.begin(), n);
    const auto x = agi::rand_uniform<double>(rng, {n, cin, 7, 6}, -1.0, 1.0);
    const auto w = agi::rand_uniform<double>(rng, ws, -1.0, 1.0);
    const Tensor<double> b({cout});
    const auto y = agi::kern::conv2d_fwd(x, w, b, stride, pad, groups, per_sample);
    const auto gy = agi::rand_uniform<double>(rng, y.shape(), -1.0, 1.0);
    Tensor<double> gx(x.shape()), gw(w.shape()), gb({cout});
    agi::kern::conv2d_bwd(x, w, gy, stride, pad, groups, per_sample, &gx, &gw, &gb);
    double yy = 0, xx = 0, ww = 0, bb = 0;
    for (int64_t i = 0; i < y.numel(); ++i) yy += gy[i] * y[i];
    for (int64_t i = 0; i < x.numel(); ++i) xx += gx[i] * x[i];
    for (int64_t i = 0; i < w.numel(); ++i) ww += gw[i] * w[i];
    for (int64_t i = 0; i < gy.numel(); ++i) bb += gy[i];
    double gbsum = 0;
    for (int64_t i = 0; i < gb.numel(); ++i) gbsum += gb[i];
    EXPECT_NEAR(yy, xx, 1e-9 * std::max(1.0, std::abs(yy)));
    EXPECT_NEAR(yy, ww, 1e-9 * std::max(1.0, std::abs(yy)));
    EXPECT_NEAR(gbsum, bb, 1e-9 * std::max(1.0, std::abs(bb)));
  }
}

TEST(Conv, RejectsBadGeometry) {
  const Tensor<double> x({1, 4, 5, 5});
  const Tensor<double> b({4});
  EXPECT_THROW(agi::kern::conv2d_fwd(x, Tensor<double>({4, 4, 2, 2}), b, 1, 0, 1, false),
               ShapeError);  // even kernel
  EXPECT_THROW(agi::kern::conv2d_fwd(x, Tensor<double>({4, 4, 3, 3}), b, 1, 0, 3, false),
               ShapeError);  // groups do not divide channels
  EXPECT_THROW(agi::kern::conv2d_fwd(x, Tensor<double>({4, 2, 3, 3}), b, 1, 0, 1, false),
               ShapeError);  // kernel Cin mismatch
  EXPECT_THROW(agi::kern::conv2d_fwd(x, Tensor<double>({4, 4, 7, 7}), b, 1, 0, 1, false),
               ShapeError);  // empty output
}

TEST(Shuffle, PermMatchesTransposeRule) {
  // For C=6, n=2 the shuffle reads output channel l*n+i from input i*(C/n)+l.
  const auto perm = agi::kern::shuffle_perm(6, 2);
  const std::vector<int> want = {0, 3, 1, 4, 2, 5};
  EXPECT_EQ(perm, want);
  const auto inv = agi::kern::invert_perm(perm);
  for (size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(inv[size_t(perm[i])], int(i));
}

TEST(Shuffle, PermuteRoundTripsThroughInverse) {
  Rng rng(505);
  const auto x = agi::rand_uniform<double>(rng, {2, 12, 3, 3}, -1.0, 1.0);
  const auto perm = agi::kern::shuffle_perm(12, 4);
  const auto y = agi::kern::permute_channels(x, perm);
  const auto back = agi::kern::permute_channels(y, agi::kern::invert_perm(perm));
  EXPECT_TRUE(agi::bitwise_equal(x, back));
  // Channel blocks move wholesale: spot-check one mapped channel.
  for (int i = 0; i < 9; ++i) EXPECT_EQ(y.at(1, 1, i / 3, i % 3), x.at(1, perm[1], i / 3, i % 3));
}

TEST(Shuffle, RejectsIndivisibleGroups) {
  EXPECT_THROW(agi::kern::shuffle_perm(6, 4), ShapeError);
}

TEST(Layernorm, NormalizesAcrossChannels) {
  Rng rng(606);
  const int64_t n = 2, c = 16, h = 3, w = 4;
  const auto x = agi::rand_uniform<double>(rng, {n, c, h, w}, -2.0, 3.0);
  const auto gamma = Tensor<double>::full({c}, 1.0);
  const Tensor<double> beta({c});
  const auto y = agi::kern::layernorm_channels_fwd(x, gamma, beta, 1e-5);
  for (int64_t s = 0; s < n; ++s)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double mean = 0, var = 0;
        for (int64_t ch = 0; ch < c; ++ch) mean += y.at(s, ch, i, j);
        mean /= double(c);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double d = y.at(s, ch, i, j) - mean;
          var += d * d;
        }
        var /= double(c);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-3);  // eps keeps the variance slightly below one
        EXPECT_LE(var, 1.0 + 1e-12);
      }
}

TEST(Layernorm, AppliesAffineParams) {
  Rng rng(707);
  const auto x = agi::rand_uniform<double>(rng, {1, 8, 2, 2}, -1.0, 1.0);
  const auto gamma = agi::rand_uniform<double>(rng, {8}, 0.5, 1.5);
  const auto beta = agi::rand_uniform<double>(rng, {8}, -0.5, 0.5);
  const auto unit_g = Tensor<double>::full({8}, 1.0);
  const Tensor<double> zero_b({8});
  const auto base = agi::kern::layernorm_channels_fwd(x, unit_g, zero_b, 1e-5);
  const auto y = agi::kern::layernorm_channels_fwd(x, gamma, beta, 1e-5);
  for (int64_t ch = 0; ch < 8; ++ch)
    for (int64_t i = 0; i < 4; ++i) {
      const double want = gamma[ch] * base.at(0, ch, i / 2, i % 2) + beta[ch];
      EXPECT_NEAR(y.at(0, ch, i / 2, i % 2), want, 1e-12);
    }
}

TEST(Pooling, GlobalAvgEqualsMean) {
  Rng rng(808);
  const auto x = agi::rand_uniform<double>(rng, {3, 5, 4, 6}, -1.0, 1.0);
  const auto y = agi::kern::global_avg_pool_fwd(x);
  EXPECT_EQ(y.rank(), 2);
  EXPECT_EQ(y.dim(0), 3);
  EXPECT_EQ(y.dim(1), 5);
  for (int64_t s = 0; s < 3; ++s)
    for (int64_t ch = 0; ch < 5; ++ch) {
      double acc = 0;
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 6; ++j) acc += x.at(s, ch, i, j);
      EXPECT_NEAR(y.at(s, ch), acc / 24.0, 1e-13);
    }
}

TEST(Linear, MatchesManualProduct) {
  Rng rng(909);
  const auto x = agi::rand_uniform<double>(rng, {3, 5}, -1.0, 1.0);
  const auto w = agi::rand_uniform<double>(rng, {4, 5}, -1.0, 1.0);
  const auto b = agi::rand_uniform<double>(rng, {4}, -0.5, 0.5);
  const auto y = agi::kern::linear_fwd(x, w, b);
  for (int64_t s = 0; s < 3; ++s)
    for (int64_t o = 0; o < 4; ++o) {
      double acc = b[o];
      for (int64_t i = 0; i < 5; ++i) acc += w.at(o, i) * x.at(s, i);
      EXPECT_NEAR(y.at(s, o), acc, 1e-13);
    }
}

TEST(Linear, BackwardSatisfiesAdjointIdentities) {
  Rng rng(111);
  const auto x = agi::rand_uniform<double>(rng, {3, 5}, -1.0, 1.0);
  const auto w = agi::rand_uniform<double>(rng, {4, 5}, -1.0, 1.0);
  const Tensor<double> b({4});
  const auto y = agi::kern::linear_fwd(x, w, b);
  const auto gy = agi::rand_uniform<double>(rng, y.shape(), -1.0, 1.0);
  Tensor<double> gx(x.shape()), gw(w.shape()), gb({4});
  agi::kern::linear_bwd(x, w, gy, &gx, &gw, &gb);
  double yy = 0, xx = 0, ww = 0;
  for (int64_t i = 0; i < y.numel(); ++i) yy += gy[i] * y[i];
  for (int64_t i = 0; i < x.numel(); ++i) xx += gx[i] * x[i];
  for (int64_t i = 0; i < w.numel(); ++i) ww += gw[i] * w[i];
  EXPECT_NEAR(yy, xx, 1e-10);
  EXPECT_NEAR(yy, ww, 1e-10);
}

TEST(Upsample, Nearest2xReplicatesEachPixel) {
  Rng rng(121);
  const auto x = agi::rand_uniform<double>(rng, {2, 3, 4, 5}, -1.0, 1.0);
  const auto y = agi::kern::upsample_nearest2x_fwd(x);
  EXPECT_EQ(y.dim(2), 8);
  EXPECT_EQ(y.dim(3), 10);
  for (int64_t s = 0; s < 2; ++s)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 8; ++i)
        for (int64_t j = 0; j < 10; ++j)
          EXPECT_EQ(y.at(s, c, i, j), x.at(s, c, i / 2, j / 2));
}
