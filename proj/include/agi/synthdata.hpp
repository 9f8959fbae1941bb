#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "agi/rng.hpp"
#include "agi/tensor.hpp"

// Two-modality synthetic scenes. Each sample is a latent field t in [0,1]
// (soft-edged ellipses and boxes over a dark background) observed through
// two contrast maps:
//   modality A: tent map 1 - |2t - 1|, aligned, two-to-one over the
//               shape intensity range, so A alone cannot pin t down
//   modality B: sqrt(t), monotone, rendered from a scene whose shape
//               centers are shifted by a subpixel offset
//   target:     t itself, aligned and noise-free
// Recovering the target therefore needs B, and B is the misaligned one,
// which is what makes misalignment robustness measurable. Shifts are
// realized by moving the analytic shapes before rasterizing, so there is
// no resampling blur, and a zero shift reproduces modality A's geometry
// bit for bit.
namespace agi::synth {

struct GenConfig {
  int count = 512;
  int eval_count = 64;
  int h = 64;
  int w = 64;
  uint64_t seed = 42;
  double shift_max = 2.0;  // per-axis bound on modality B's offset, pixels
  double noise = 0.01;     // additive Gaussian sigma on both modalities
  int min_shapes = 3;
  int max_shapes = 6;

  void validate() const {
    check(count >= 1 && eval_count >= 1, "gen: counts must be >= 1");
    check(h >= 16 && w >= 16, "gen: images must be at least 16 x 16");
    check(shift_max >= 0, "gen: shift_max must be >= 0");
    check(noise >= 0, "gen: noise must be >= 0");
    check(min_shapes >= 1 && max_shapes >= min_shapes, "gen: bad shape count range");
  }
};

struct Shape {
  bool ellipse = true;
  double cx = 0, cy = 0;  // center, pixels
  double rx = 1, ry = 1;  // semi-axes / half-extents, pixels
  double t = 0.5;         // latent intensity painted inside
};

struct Scene {
  double bg = 0.05;
  std::vector<Shape> shapes;
};

// Substream tags; each draw category gets its own stream so changing one
// knob (say noise) cannot disturb another (geometry).
inline constexpr uint64_t kStreamGeom = 1;
inline constexpr uint64_t kStreamShift = 2;
inline constexpr uint64_t kStreamNoiseA = 3;
inline constexpr uint64_t kStreamNoiseB = 4;

inline Scene sample_scene(Rng& rng, const GenConfig& cfg) {
  Scene sc;
  sc.bg = rng.uniform(0.02, 0.08);
  const int count =
      cfg.min_shapes + int(rng.next_below(uint64_t(cfg.max_shapes - cfg.min_shapes + 1)));
  const double ref = double(std::min(cfg.h, cfg.w));
  sc.shapes.resize(size_t(count));
  for (Shape& s : sc.shapes) {
    s.ellipse = rng.uniform() < 0.5;
    s.cx = rng.uniform(0.15, 0.85) * cfg.w;
    s.cy = rng.uniform(0.15, 0.85) * cfg.h;
    s.rx = rng.uniform(0.08, 0.28) * ref;
    s.ry = rng.uniform(0.08, 0.28) * ref;
    // Intensities stay below 1 - bg_max: the tent map sends t and 1 - t to
    // the same value, so a shape near 1 - bg would vanish in modality A.
    s.t = rng.uniform(0.25, 0.85);
  }
  return sc;
}

namespace detail {

// Signed distance, negative inside. The ellipse distance is the usual
// normalized-gradient approximation; exact for circles, close enough for
// a one-pixel antialiasing band.
inline double shape_sdf(const Shape& s, double x, double y) {
  if (s.ellipse) {
    const double qx = (x - s.cx) / s.rx, qy = (y - s.cy) / s.ry;
    const double q = std::sqrt(qx * qx + qy * qy);
    if (q == 0) return -std::min(s.rx, s.ry);
    const double gx = qx / s.rx, gy = qy / s.ry;
    return q * (q - 1.0) / std::sqrt(gx * gx + gy * gy);
  }
  const double dx = std::fabs(x - s.cx) - s.rx, dy = std::fabs(y - s.cy) - s.ry;
  const double ox = std::max(dx, 0.0), oy = std::max(dy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dx, dy), 0.0);
}

inline double coverage(double sdf) {
  const double c = 0.5 - sdf;  // one-pixel linear edge band
  return c < 0 ? 0 : (c > 1 ? 1 : c);
}

}  // namespace detail

// Rasterizes the latent field with every shape center displaced by
// (dx, dy). Painter's order: later shapes cover earlier ones.
inline Tensor<float> render_latent(const Scene& sc, int h, int w, double dx, double dy) {
  Tensor<float> img({int64_t(h), int64_t(w)});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double t = sc.bg;
      const double px = x + 0.5, py = y + 0.5;
      for (const Shape& s : sc.shapes) {
        Shape moved = s;
        moved.cx += dx;
        moved.cy += dy;
        const double c = detail::coverage(detail::shape_sdf(moved, px, py));
        t = t + c * (s.t - t);
      }
      img[int64_t(y) * w + x] = float(t);
    }
  return img;
}

inline double contrast_a(double t) { return 1.0 - std::fabs(2.0 * t - 1.0); }
inline double contrast_b(double t) { return std::sqrt(t < 0 ? 0 : t); }

struct SampleTriple {
  Tensor<float> a, b, target;  // each H x W
  double dx = 0, dy = 0;       // modality B's latent shift
};

// index selects the sample; pass eval_index() values for held-out data so
// evaluation geometry never overlaps training geometry.
inline uint64_t eval_index(int64_t i) { return (uint64_t(1) << 32) + uint64_t(i); }

inline SampleTriple gen_sample(const GenConfig& cfg, uint64_t index) {
  const uint64_t sample_seed = Rng::mix(cfg.seed, index);
  Rng geom(Rng::mix(sample_seed, kStreamGeom));
  Rng shift(Rng::mix(sample_seed, kStreamShift));
  Rng noise_a(Rng::mix(sample_seed, kStreamNoiseA));
  Rng noise_b(Rng::mix(sample_seed, kStreamNoiseB));

  const Scene sc = sample_scene(geom, cfg);
  SampleTriple s;
  s.dx = shift.uniform(-cfg.shift_max, cfg.shift_max);
  s.dy = shift.uniform(-cfg.shift_max, cfg.shift_max);

  const Tensor<float> latent = render_latent(sc, cfg.h, cfg.w, 0, 0);
  const Tensor<float> latent_b = render_latent(sc, cfg.h, cfg.w, s.dx, s.dy);
  s.a = Tensor<float>(latent.shape());
  s.b = Tensor<float>(latent.shape());
  s.target = latent;
  for (int64_t i = 0; i < latent.numel(); ++i) {
    const double av = contrast_a(double(latent[i])) + noise_a.normal() * cfg.noise;
    const double bv = contrast_b(double(latent_b[i])) + noise_b.normal() * cfg.noise;
    s.a[i] = float(std::clamp(av, 0.0, 1.0));
    s.b[i] = float(std::clamp(bv, 0.0, 1.0));
  }
  return s;
}

// Stacked dataset: inputs N x 2 x H x W (modality A then B), targets
// N x 1 x H x W, shifts N x 2 as (dx, dy).
struct Dataset {
  Tensor<float> inputs;
  Tensor<float> targets;
  Tensor<float> shifts;

  int64_t size() const { return inputs.numel() ? inputs.dim(0) : 0; }
};

inline Dataset build_dataset(const GenConfig& cfg, int count, bool eval_split) {
  cfg.validate();
  const int64_t h = cfg.h, w = cfg.w;
  Dataset ds;
  ds.inputs = Tensor<float>({count, 2, h, w});
  ds.targets = Tensor<float>({count, 1, h, w});
  ds.shifts = Tensor<float>({count, 2});
  for (int64_t i = 0; i < count; ++i) {
    const uint64_t idx = eval_split ? eval_index(i) : uint64_t(i);
    const SampleTriple s = gen_sample(cfg, idx);
    std::copy(s.a.data(), s.a.data() + h * w, ds.inputs.data() + (i * 2 + 0) * h * w);
    std::copy(s.b.data(), s.b.data() + h * w, ds.inputs.data() + (i * 2 + 1) * h * w);
    std::copy(s.target.data(), s.target.data() + h * w, ds.targets.data() + i * h * w);
    ds.shifts[i * 2 + 0] = float(s.dx);
    ds.shifts[i * 2 + 1] = float(s.dy);
  }
  return ds;
}

namespace detail {

// Bilinear gather with edge-clamped source indices. When both offsets are
// whole pixels the copy is a pure index shift, so zero offsets reproduce
// the input bit for bit.
template <typename T>
void shift_plane(const T* src, T* dst, int64_t h, int64_t w, double dx, double dy) {
  const double fx0 = std::floor(dx), fy0 = std::floor(dy);
  const double fx = dx - fx0, fy = dy - fy0;
  auto cx = [w](int64_t x) { return x < 0 ? 0 : (x >= w ? w - 1 : x); };
  auto cy = [h](int64_t y) { return y < 0 ? 0 : (y >= h ? h - 1 : y); };
  if (fx == 0 && fy == 0) {
    const int64_t ix = int64_t(fx0), iy = int64_t(fy0);
    for (int64_t y = 0; y < h; ++y) {
      const T* sr = src + cy(y - iy) * w;
      for (int64_t x = 0; x < w; ++x) dst[y * w + x] = sr[cx(x - ix)];
    }
    return;
  }
  // Source position x - dx sits between floor taps x - fx0 - 1 and x - fx0
  // with weights fx and 1 - fx.
  const int64_t ix = int64_t(fx0) + 1, iy = int64_t(fy0) + 1;
  const T wx1 = T(fx), wx0 = T(1) - wx1, wy1 = T(fy), wy0 = T(1) - wy1;
  for (int64_t y = 0; y < h; ++y) {
    const T* r0 = src + cy(y - iy) * w;
    const T* r1 = src + cy(y - iy + 1) * w;
    for (int64_t x = 0; x < w; ++x) {
      const int64_t x0 = cx(x - ix), x1 = cx(x - ix + 1);
      const T top = wx1 * r0[x0] + wx0 * r0[x1];
      const T bot = wx1 * r1[x0] + wx0 * r1[x1];
      dst[y * w + x] = wy1 * top + wy0 * bot;
    }
  }
}

}  // namespace detail

// Translates image content by (dx, dy) pixels, bilinear with edge clamp.
// Accepts H x W or 1 x H x W.
template <typename T>
Tensor<T> subpixel_shift(const Tensor<T>& img, double dx, double dy) {
  check(img.rank() == 2 || (img.rank() == 3 && img.dim(0) == 1),
        "subpixel_shift expects H x W or 1 x H x W, got " + shape_str(img.shape()));
  check(std::fabs(dx) <= 8 && std::fabs(dy) <= 8, "subpixel_shift: offsets limited to 8 pixels");
  const int64_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  Tensor<T> out(img.shape());
  detail::shift_plane(img.data(), out.data(), h, w, dx, dy);
  return out;
}

}  // namespace agi::synth
