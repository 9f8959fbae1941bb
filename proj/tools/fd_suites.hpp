#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "agi/cagr.hpp"
#include "agi/gradcheck.hpp"

// Finite-difference suites behind the `gradcheck` subcommand. Every suite
// builds a small double-precision graph, backprops a fixed projection
// loss, and compares coordinates against central differences. A coordinate
// cap keeps the default run quick; --full probes every coordinate.
namespace agi::tools {

struct SuiteResult {
  std::string name;
  GradCheckReport rep;
};

using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline SuiteResult check_graph(const std::string& name, std::vector<Tensor<double>*> inputs,
                               const BuildFn& build, int64_t max_coords) {
  auto forward = [&](Tape<double>& t, bool track) {
    std::vector<Var> vs;
    vs.reserve(inputs.size());
    for (Tensor<double>* in : inputs) vs.push_back(t.leaf(*in, track));
    Var y = build(t, vs);
    Rng pr(55);
    Tensor<double> proj = rand_uniform<double>(pr, t.val(y).shape(), -1.0, 1.0);
    Var loss = t.mean_all(t.mul(y, t.leaf(proj, false)));
    return std::pair(vs, loss);
  };
  auto loss_fn = [&]() {
    Tape<double> t;
    return t.val(forward(t, false).second)[0];
  };

  Tape<double> t;
  auto [vs, loss] = forward(t, true);
  t.backward(loss);
  std::vector<Tensor<double>> grads;
  grads.reserve(inputs.size());
  for (Var v : vs) grads.push_back(t.grad(v));
  std::vector<GradCheckEntry<double>> entries;
  for (size_t i = 0; i < inputs.size(); ++i)
    entries.push_back({name + "/in" + std::to_string(i), inputs[i], &grads[i]});

  GradCheckConfig gc;
  gc.step = 1e-6;
  gc.max_coords_per_tensor = max_coords;
  return {name, grad_check(loss_fn, entries, gc)};
}

// Random values bounded away from zero, so kinked ops (relu, abs) never
// see a probe crossing their kink.
inline Tensor<double> rand_off_zero(Rng& rng, const std::vector<int64_t>& shape) {
  Tensor<double> t = rand_uniform<double>(rng, shape, 0.2, 1.2);
  for (int64_t i = 0; i < t.numel(); ++i)
    if (rng.uniform() < 0.5) t[i] = -t[i];
  return t;
}

inline std::vector<SuiteResult> run_op_suites(int64_t max_coords) {
  std::vector<SuiteResult> out;
  Rng r(17);
  {
    Tensor<double> x = rand_uniform<double>(r, {2, 3, 5, 5}, -1., 1.);
    Tensor<double> w = rand_uniform<double>(r, {4, 3, 3, 3}, -1., 1.);
    Tensor<double> b = rand_uniform<double>(r, {4}, -1., 1.);
    out.push_back(check_graph("conv_s1", {&x, &w, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.conv2d(v[0], v[1], v[2], 1, 1, 1);
                              },
                              max_coords));
    out.push_back(check_graph("conv_s2", {&x, &w, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.conv2d(v[0], v[1], v[2], 2, 1, 1);
                              },
                              max_coords));
  }
  {
    Tensor<double> x = rand_uniform<double>(r, {2, 4, 5, 5}, -1., 1.);
    Tensor<double> w = rand_uniform<double>(r, {6, 2, 3, 3}, -1., 1.);
    Tensor<double> b = rand_uniform<double>(r, {6}, -1., 1.);
    out.push_back(check_graph("conv_groups2", {&x, &w, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.conv2d(v[0], v[1], v[2], 1, 1, 2);
                              },
                              max_coords));
  }
  {
    Tensor<double> x = rand_uniform<double>(r, {2, 3, 4, 4}, -1., 1.);
    Tensor<double> w = rand_uniform<double>(r, {2, 4, 3, 3, 3}, -1., 1.);
    Tensor<double> b = rand_uniform<double>(r, {4}, -1., 1.);
    out.push_back(check_graph("conv_per_sample", {&x, &w, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.conv2d_per_sample(v[0], v[1], v[2], 1, 1);
                              },
                              max_coords));
  }
  {
    Tensor<double> x = rand_uniform<double>(r, {2, 6, 4, 4}, -1., 1.);
    Tensor<double> gm = rand_uniform<double>(r, {6}, 0.5, 1.5);
    Tensor<double> bt = rand_uniform<double>(r, {6}, -0.5, 0.5);
    Tensor<double> gate = rand_uniform<double>(r, {2, 6}, -1., 1.);
    out.push_back(check_graph("channel_shuffle", {&x},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.channel_shuffle(v[0], 2);
                              },
                              max_coords));
    out.push_back(check_graph("mul_channels", {&x, &gate},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.mul_channels(v[0], v[1]);
                              },
                              max_coords));
    out.push_back(check_graph("layernorm_channels", {&x, &gm, &bt},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.layernorm_channels(v[0], v[1], v[2], 1e-5);
                              },
                              max_coords));
    out.push_back(check_graph("gelu", {&x},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.gelu(v[0]);
                              },
                              max_coords));
    out.push_back(check_graph("sigmoid", {&x},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.sigmoid(v[0]);
                              },
                              max_coords));
    out.push_back(check_graph("global_avg_pool", {&x},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.global_avg_pool(v[0]);
                              },
                              max_coords));
    out.push_back(check_graph("upsample_nearest2x", {&x},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.upsample_nearest2x(v[0]);
                              },
                              max_coords));
  }
  {
    Tensor<double> a = rand_off_zero(r, {2, 3, 4, 4});
    Tensor<double> b = rand_off_zero(r, {2, 3, 4, 4});
    out.push_back(check_graph("relu_abs_arith", {&a, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                Var s = t.add(t.relu(v[0]), t.scale(t.abs(v[1]), 0.5));
                                return t.sub(s, t.mul(v[0], v[1]));
                              },
                              max_coords));
    out.push_back(check_graph("concat_channels", {&a, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.concat_channels(v[0], v[1]);
                              },
                              max_coords));
  }
  {
    Tensor<double> z = rand_uniform<double>(r, {2, 6}, -1., 1.);
    Tensor<double> zs = rand_uniform<double>(r, {2, 6}, -1., 1.);
    Tensor<double> w = rand_uniform<double>(r, {2, 3, 6}, -1., 1.);
    Tensor<double> b = rand_uniform<double>(r, {2, 3}, -1., 1.);
    out.push_back(check_graph("group_pair_linear", {&z, &zs, &w, &b},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.group_pair_linear(v[0], v[1], v[2], v[3], 2);
                              },
                              max_coords));
    Tensor<double> lw = rand_uniform<double>(r, {4, 6}, -1., 1.);
    Tensor<double> lb = rand_uniform<double>(r, {4}, -1., 1.);
    out.push_back(check_graph("linear", {&z, &lw, &lb},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.linear(v[0], v[1], v[2]);
                              },
                              max_coords));
  }
  {
    Tensor<double> w = rand_uniform<double>(r, {3, 8, 3, 3}, -1., 1.);
    Tensor<double> off = rand_uniform<double>(r, {2, 8}, -2., 2.);
    Tensor<double> sc = rand_uniform<double>(r, {2, 4}, 0.2, 0.9);
    // Offsets pushed off integers; FD across the floor seam would mix the
    // two one-sided derivatives.
    for (int64_t i = 0; i < off.numel(); ++i) {
      const double f = off[i] - std::floor(off[i]);
      if (f < 0.05) off[i] += 0.07;
      if (f > 0.95) off[i] -= 0.07;
    }
    out.push_back(check_graph("group_roll_scale", {&w, &off, &sc},
                              [](Tape<double>& t, const std::vector<Var>& v) {
                                return t.group_roll_scale(v[0], v[1], v[2], 4);
                              },
                              max_coords));
  }
  return out;
}

// Full layer at a generic point: heads nudged off their zero init, input
// included as a differentiable entry.
inline SuiteResult run_layer_suite(int64_t max_coords) {
  CagrConfig cc;
  cc.cin = 8;
  cc.cout = 6;
  cc.n = 4;
  ParamStore<double> ps;
  Rng rr(21);
  register_cagr_params(ps, "l", cc, rr);
  Rng pr(77);
  for (const char* nm : {"l.attn.w", "l.attn.b", "l.route.off.w", "l.route.off.b",
                         "l.route.scale.w", "l.route.scale.b"}) {
    Tensor<double>& t = ps.get(nm);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] += pr.uniform(-0.3, 0.3);
  }
  Rng xr(5);
  Tensor<double> x = rand_uniform<double>(xr, {2, 8, 6, 6}, -1.0, 1.0);
  Tensor<double> tgt = rand_uniform<double>(xr, {2, 6, 6, 6}, -1.0, 1.0);

  auto forward = [&](Tape<double>& tape, bool track) {
    FwdCtx<double> ctx(tape, ps, track);
    Var xv = tape.leaf(x, track);
    Var y = cagr_forward(ctx, "l", cc, xv);
    Var loss = tape.mean_all(tape.abs(tape.sub(y, tape.leaf(tgt, false))));
    return std::pair(xv, loss);
  };
  auto loss_fn = [&]() {
    Tape<double> tape;
    return tape.val(forward(tape, false).second)[0];
  };

  Tape<double> tape;
  FwdCtx<double> ctx(tape, ps, true);
  Var xv = tape.leaf(x, true);
  Var y = cagr_forward(ctx, "l", cc, xv);
  Var loss = tape.mean_all(tape.abs(tape.sub(y, tape.leaf(tgt, false))));
  tape.backward(loss);

  std::vector<Tensor<double>> grads;
  std::vector<GradCheckEntry<double>> entries;
  for (int64_t i = 0; i < ps.size(); ++i) grads.push_back(ctx.grad(ps.name(i)));
  grads.push_back(tape.grad(xv));
  for (int64_t i = 0; i < ps.size(); ++i)
    entries.push_back({ps.name(i), &ps.tensor(i), &grads[size_t(i)]});
  entries.push_back({"input", &x, &grads.back()});

  GradCheckConfig gc;
  gc.step = 1e-6;
  gc.max_coords_per_tensor = max_coords;
  return {"cagr_layer", grad_check(loss_fn, entries, gc)};
}

// At the documented init the offsets are zero, yet their head must still
// receive gradient through the interpolation's one-sided derivative.
inline double offset_head_grad_at_init() {
  CagrConfig cc;
  cc.cin = 8;
  cc.cout = 6;
  cc.n = 4;
  ParamStore<double> ps;
  Rng rr(31);
  register_cagr_params(ps, "l", cc, rr);
  Rng xr(5);
  const Tensor<double> x = rand_uniform<double>(xr, {2, 8, 6, 6}, -1.0, 1.0);
  const Tensor<double> tgt = rand_uniform<double>(xr, {2, 6, 6, 6}, -1.0, 1.0);
  Tape<double> tape;
  FwdCtx<double> ctx(tape, ps, true);
  Var y = cagr_forward(ctx, "l", cc, tape.leaf(x, false));
  Var loss = tape.mean_all(tape.abs(tape.sub(y, tape.leaf(tgt, false))));
  tape.backward(loss);
  const Tensor<double>& g = ctx.grad("l.route.off.w");
  double mx = 0;
  for (int64_t i = 0; i < g.numel(); ++i) mx = std::max(mx, std::fabs(g[i]));
  return mx;
}

}  // namespace agi::tools
