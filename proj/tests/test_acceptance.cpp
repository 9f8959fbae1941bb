#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "agi/bench.hpp"
#include "agi/cagr.hpp"
#include "agi/gradcheck.hpp"
#include "agi/kernels.hpp"
#include "agi/metrics.hpp"
#include "agi/network.hpp"
#include "agi/roll.hpp"
#include "agi/train.hpp"

namespace fs = std::filesystem;
using agi::CagrConfig;
using agi::FwdCtx;
using agi::Model;
using agi::ModelConfig;
using agi::ParamStore;
using agi::Rng;
using agi::Tape;
using agi::Tensor;
using agi::TrainConfig;
using agi::Var;
namespace synth = agi::synth;

namespace {

// Emits the per-criterion verdict even when an EXPECT/ASSERT bails out early.
struct Banner {
  int n;
  explicit Banner(int num) : n(num) {}
  ~Banner() {
    std::cout << "[criterion " << n << "] "
              << (::testing::Test::HasFailure() ? "FAIL" : "PASS") << std::endl;
  }
};

int64_t pmod(int64_t a, int64_t m) {
  const int64_t r = a % m;
  return r < 0 ? r + m : r;
}

// out[u, v] = w[(u - sy) mod k, (v - sx) mod k], by direct index arithmetic.
Tensor<double> roll_ref(const Tensor<double>& w, int64_t sx, int64_t sy) {
  const int64_t k = w.dim(w.rank() - 1);
  const int64_t m = w.numel() / (k * k);
  Tensor<double> out(w.shape());
  for (int64_t s = 0; s < m; ++s)
    for (int64_t u = 0; u < k; ++u)
      for (int64_t v = 0; v < k; ++v)
        out[s * k * k + u * k + v] = w[s * k * k + pmod(u - sy, k) * k + pmod(v - sx, k)];
  return out;
}

// Bilinear mixture of the four integer rolls around (ox, oy), term by term.
Tensor<double> float_roll_ref(const Tensor<double>& w, double ox, double oy) {
  const int64_t k = w.dim(w.rank() - 1);
  const int64_t m = w.numel() / (k * k);
  const int64_t sx0 = int64_t(std::floor(ox)), sy0 = int64_t(std::floor(oy));
  const double fx = ox - std::floor(ox), fy = oy - std::floor(oy);
  Tensor<double> out(w.shape());
  for (int64_t s = 0; s < m; ++s) {
    const double* src = w.data() + s * k * k;
    double* dst = out.data() + s * k * k;
    for (int64_t u = 0; u < k; ++u)
      for (int64_t v = 0; v < k; ++v) {
        const auto tap = [&](int64_t sy, int64_t sx) {
          return src[pmod(u - sy, k) * k + pmod(v - sx, k)];
        };
        dst[u * k + v] = (1 - fx) * (1 - fy) * tap(sy0, sx0) + fx * (1 - fy) * tap(sy0, sx0 + 1) +
                         (1 - fx) * fy * tap(sy0 + 1, sx0) + fx * fy * tap(sy0 + 1, sx0 + 1);
      }
  }
  return out;
}

template <typename T>
ParamStore<T> cagr_params(const CagrConfig& cfg, uint64_t seed) {
  ParamStore<T> ps;
  Rng rng(seed);
  agi::register_cagr_params(ps, "l", cfg, rng);
  return ps;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// The desk misalignment experiment shared by criteria 8, 9 and 11: the
// default generator recipe (64 x 64, 512 train / 64 eval, modality B shifted
// by up to 2 px) and two 500-step trainings that differ only in architecture.
struct DeskRuns {
  fs::path dir;
  synth::Dataset train_ds, eval_ds;
  TrainConfig agi_cfg, res_cfg;
  std::optional<Model<float>> agi_model, res_model;
  agi::metrics::MetricReport agi_rep, res_rep;
};

TrainConfig desk_cfg(const std::string& arch) {
  TrainConfig cfg;
  cfg.arch = arch;
  cfg.groups = 8;
  // Adam moves a weight by at most ~lr per step, so 500 steps at the default
  // lr of 1e-4 cap every parameter within ~0.05 of its init. The zero-started
  // offset heads stay frozen at that budget and the rolling pathway never
  // participates. 1e-3 is the largest rate at which both nets still train
  // stably here (the plain net collapses at 2e-3), so the desk comparison
  // runs at 1e-3 for both.
  cfg.adam.lr = 1e-3;
  return cfg;  // widths {8,16,32,64}, 500 steps, batch 8, seed 42
}

Model<float> load_trained(const TrainConfig& cfg, const fs::path& ckpt) {
  Model<float> m(cfg.model_config());
  const auto tf = agi::io::TensorFile::load(ckpt.string());
  (void)agi::load_checkpoint_into(tf, m, static_cast<agi::AdamState<float>*>(nullptr));
  return m;
}

DeskRuns build_desk() {
  DeskRuns d;
  d.dir = fs::temp_directory_path() / "agi_acceptance";
  fs::remove_all(d.dir);
  const synth::GenConfig g;
  d.train_ds = synth::build_dataset(g, g.count, false);
  d.eval_ds = synth::build_dataset(g, g.eval_count, true);
  d.agi_cfg = desk_cfg("agi");
  d.res_cfg = desk_cfg("resunet");
  fs::create_directories(d.dir / "agi1");
  (void)agi::train_model(d.agi_cfg, d.train_ds, (d.dir / "agi1").string());
  fs::create_directories(d.dir / "res1");
  (void)agi::train_model(d.res_cfg, d.train_ds, (d.dir / "res1").string());
  d.agi_model = load_trained(d.agi_cfg, d.dir / "agi1" / "ckpt_final.tnsr");
  d.res_model = load_trained(d.res_cfg, d.dir / "res1" / "ckpt_final.tnsr");
  d.agi_rep = agi::evaluate_model(*d.agi_model, d.eval_ds, d.agi_cfg.batch);
  d.res_rep = agi::evaluate_model(*d.res_model, d.eval_ds, d.res_cfg.batch);
  return d;
}

const DeskRuns& desk() {
  static const DeskRuns d = build_desk();
  return d;
}

}  // namespace

TEST(Acceptance, C1RollOperatorsMatchBruteForceOracles) {
  Banner banner(1);
  try {
    Rng rng(101);
    for (int t = 0; t < 100; ++t) {
      const int k = 1 + int(rng.next_below(5));
      const int s = 1 + int(rng.next_below(6));
      const auto w = agi::rand_uniform<double>(rng, {s, k, k}, -1.0, 1.0);
      std::vector<agi::roll::IntShift> shifts(static_cast<size_t>(s));
      Tensor<double> want(w.shape());
      for (int64_t i = 0; i < s; ++i) {
        shifts[size_t(i)].sx = int(rng.next_below(31)) - 15;
        shifts[size_t(i)].sy = int(rng.next_below(31)) - 15;
        Tensor<double> slice({k, k});
        std::copy(w.data() + i * k * k, w.data() + (i + 1) * k * k, slice.data());
        const auto r = roll_ref(slice, shifts[size_t(i)].sx, shifts[size_t(i)].sy);
        std::copy(r.data(), r.data() + k * k, want.data() + i * k * k);
      }
      const auto got = agi::roll::roll_int_batched(w, shifts);
      EXPECT_LE(agi::max_abs_diff(got, want), 1e-12) << "case " << t;
    }
    for (int t = 0; t < 100; ++t) {
      const int k = 1 + int(rng.next_below(5));
      const int lead = 1 + int(rng.next_below(4));
      const double ox = rng.uniform(-9.0, 9.0), oy = rng.uniform(-9.0, 9.0);
      const auto w = agi::rand_uniform<double>(rng, {lead, k, k}, -1.0, 1.0);
      EXPECT_LE(agi::max_abs_diff(agi::roll::float_roll(w, ox, oy), float_roll_ref(w, ox, oy)),
                1e-12)
          << "case " << t << " ox=" << ox << " oy=" << oy;
    }
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C2IntegerCollapseAndPeriodicity) {
  Banner banner(2);
  try {
    Rng rng(202);
    for (int t = 0; t < 40; ++t) {
      const int k = 1 + int(rng.next_below(5));
      const auto w = agi::rand_uniform<double>(rng, {2, k, k}, -1.0, 1.0);
      const int sx = int(rng.next_below(21)) - 10, sy = int(rng.next_below(21)) - 10;
      // Integer-valued real offsets must reproduce the pure permutation bitwise.
      EXPECT_TRUE(agi::bitwise_equal(agi::roll::float_roll(w, double(sx), double(sy)),
                                     agi::roll::roll_int(w, sx, sy)));
      const double ox = rng.uniform(-3.0, 3.0), oy = rng.uniform(-3.0, 3.0);
      const auto base = agi::roll::float_roll(w, ox, oy);
      for (int mx = -2; mx <= 2; ++mx)
        for (int my = -2; my <= 2; ++my)
          EXPECT_LE(
              agi::max_abs_diff(agi::roll::float_roll(w, ox + mx * k, oy + my * k), base),
              1e-12)
              << "k=" << k << " mx=" << mx << " my=" << my;
    }
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C3FullLayerGradientsMatchFiniteDifferences) {
  Banner banner(3);
  try {
    CagrConfig cfg;
    cfg.cin = 8;
    cfg.cout = 6;
    cfg.n = 4;
    auto ps = cagr_params<double>(cfg, 33);
    // Offsets and gates are moved off their kinks; the exact-init case is
    // covered separately below via the one-sided derivative.
    Rng pr(77);
    for (const char* nm :
         {"l.route.off.w", "l.route.off.b", "l.attn.w", "l.attn.b", "l.route.scale.w"}) {
      auto& t = ps.get(std::string(nm));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] += pr.uniform(-0.3, 0.3);
    }
    Rng xr(5);
    auto x = agi::rand_uniform<double>(xr, {2, 8, 6, 6}, -1.0, 1.0);
    const auto tgt = agi::rand_uniform<double>(xr, {2, 6, 6, 6}, -1.0, 1.0);

    Tape<double> tape;
    FwdCtx<double> ctx(tape, ps, true);
    const Var xv = tape.leaf(x);
    const Var loss =
        tape.mean_all(tape.abs(tape.sub(agi::cagr_forward(ctx, "l", cfg, xv), tape.leaf(tgt, false))));
    tape.backward(loss);

    std::vector<Tensor<double>> grads;
    grads.reserve(size_t(ps.size()) + 1);
    for (int64_t i = 0; i < ps.size(); ++i) grads.push_back(ctx.grad(ps.name(i)));
    grads.push_back(tape.grad(xv));
    std::vector<agi::GradCheckEntry<double>> entries;
    for (int64_t i = 0; i < ps.size(); ++i)
      entries.push_back({ps.name(i), &ps.tensor(i), &grads[size_t(i)]});
    entries.push_back({"input", &x, &grads.back()});

    const auto loss_fn = [&]() {
      Tape<double> t2;
      FwdCtx<double> c2(t2, ps, false);
      const Var yy = agi::cagr_forward(c2, "l", cfg, t2.leaf(x, false));
      return t2.val(t2.mean_all(t2.abs(t2.sub(yy, t2.leaf(tgt, false)))))[0];
    };
    agi::GradCheckConfig gc;
    gc.step = 1e-6;
    gc.max_coords_per_tensor = 0;  // every coordinate of every tensor
    const auto rep = agi::grad_check(loss_fn, std::move(entries), gc);
    EXPECT_TRUE(rep.pass) << rep.failed << "/" << rep.checked << " coords off, worst "
                          << rep.worst_param << "[" << rep.worst_index << "] fd=" << rep.worst_fd
                          << " analytic=" << rep.worst_analytic;
    std::cout << "  gradient check: " << rep.checked << " coordinates probed\n";

    // Zero-initialized offset head still receives gradient through the
    // right-hand roll derivative.
    auto ps0 = cagr_params<double>(cfg, 34);
    Tape<double> t0;
    FwdCtx<double> c0(t0, ps0, true);
    Rng xr2(6);
    const Var x0 = t0.leaf(agi::rand_uniform<double>(xr2, {2, 8, 6, 6}, -1.0, 1.0), false);
    t0.backward(t0.mean_all(t0.abs(agi::cagr_forward(c0, "l", cfg, x0))));
    double gmax = 0;
    const auto& gw = c0.grad("l.route.off.w");
    for (int64_t i = 0; i < gw.numel(); ++i) gmax = std::max(gmax, std::abs(gw[i]));
    EXPECT_GT(gmax, 0.0) << "offset head gradient vanished at initialization";
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C4DegenerateConfigMatchesStandardConv) {
  Banner banner(4);
  try {
    CagrConfig cfg;
    cfg.cin = 6;
    cfg.cout = 5;
    cfg.n = 1;
    cfg.bypass_attention = true;  // input reaches the conv untouched
    cfg.identity_roll = true;     // zero offsets, unit scale
    auto ps = cagr_params<float>(cfg, 5);
    Rng rng(19);
    const auto x = agi::rand_uniform<float>(rng, {2, 6, 8, 8}, -1.0f, 1.0f);
    Tape<float> tape;
    FwdCtx<float> ctx(tape, ps, false);
    const Var y = agi::cagr_forward(ctx, "l", cfg, tape.leaf(x, false));
    const auto ref = agi::kern::conv2d_fwd(x, ps.get("l.w"), ps.get("l.b"), 1, 1, 1, false);
    EXPECT_LE(agi::max_abs_diff(tape.val(y), ref), 1e-6);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C5InitializationContract) {
  Banner banner(5);
  try {
    CagrConfig cfg;
    cfg.cin = 8;
    cfg.cout = 6;
    cfg.n = 4;
    auto ps = cagr_params<float>(cfg, 3);
    Rng rng(17);
    const auto x = agi::rand_uniform<float>(rng, {3, 8, 7, 7}, -1.0f, 1.0f);
    Tape<float> tape;
    FwdCtx<float> ctx(tape, ps, false);
    const Var xv = tape.leaf(x, false);
    const auto& a = tape.val(agi::cross_group_attention_gate(ctx, "l", cfg.n, xv));
    for (int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], 0.5f);
    const auto route = agi::routing_forward(ctx, "l", cfg, xv);
    const auto& off = tape.val(route.offsets);
    for (int64_t i = 0; i < off.numel(); ++i) EXPECT_EQ(off[i], 0.0f);
    const auto& sc = tape.val(route.scales);
    for (int64_t i = 0; i < sc.numel(); ++i) EXPECT_NEAR(sc[i], 0.7310585, 1e-6);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C6ParamAndFlopTrendOverGroups) {
  Banner banner(6);
  try {
    ModelConfig base;  // widths {32, 64, 128, 256}
    base.seed = 1;
    int64_t prev_params = 0, prev_flops = 0;
    int64_t params_n8 = 0;
    for (const int n : {1, 2, 4, 8, 16}) {
      ModelConfig mc = base;
      mc.arch = agi::Arch::agi;
      mc.groups = n;
      const Model<float> m(mc);
      const int64_t p = m.count_params(), f = m.count_flops(64, 64);
      if (prev_params) {
        EXPECT_LT(p, prev_params) << "params not strictly decreasing at n=" << n;
        EXPECT_LT(f, prev_flops) << "flops not strictly decreasing at n=" << n;
      }
      prev_params = p;
      prev_flops = f;
      if (n == 8) params_n8 = p;
    }
    ModelConfig rc = base;
    rc.arch = agi::Arch::resunet;
    const Model<float> res(rc);
    const double ratio = double(params_n8) / double(res.count_params());
    std::cout << "  param ratio n=8 vs plain: " << ratio << "\n";
    EXPECT_GE(ratio, 1.0);
    EXPECT_LT(ratio, 1.2);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C7KernelParameterCountIsStandard) {
  Banner banner(7);
  try {
    for (const int n : {1, 2, 4, 8, 16}) {
      CagrConfig cfg;
      cfg.cin = 16;
      cfg.cout = 12;
      cfg.n = n;
      auto ps = cagr_params<float>(cfg, 2);
      EXPECT_EQ(ps.get("l.w").numel(), int64_t(12) * 16 * 3 * 3) << "n=" << n;
    }
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C8MisalignedDeskTaskFavorsGatedRolling) {
  Banner banner(8);
  try {
    const DeskRuns& d = desk();
    std::cout << "  eval psnr: gated-rolling " << d.agi_rep.mean_psnr_db << " dB, plain "
              << d.res_rep.mean_psnr_db << " dB\n";
    EXPECT_GE(d.agi_rep.mean_psnr_db, d.res_rep.mean_psnr_db + 0.2);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C9PerturbationSlopeIsShallower) {
  Banner banner(9);
  try {
    const DeskRuns& d = desk();
    const auto levels = agi::sweep_levels();
    ASSERT_EQ(levels.size(), 7u);
    for (size_t i = 0; i < levels.size(); ++i) EXPECT_EQ(levels[i], 0.5 * double(i));
    const auto sweep = agi::perturbation_sweep<float>(
        {&*d.agi_model, &*d.res_model}, {"gated", "plain"}, d.eval_ds, 42, d.agi_cfg.batch);
    ASSERT_EQ(sweep.size(), 2u);
    std::cout << "  psnr slope per px: gated " << sweep[0].psnr_slope << ", plain "
              << sweep[1].psnr_slope << "\n";
    EXPECT_GT(sweep[0].psnr_slope, sweep[1].psnr_slope);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C10MetricUnitValues) {
  Banner banner(10);
  try {
    Tensor<double> a({16, 16}), b({16, 16});
    for (int64_t i = 0; i < a.numel(); ++i) {
      a[i] = 0.5;
      b[i] = 0.6;
    }
    EXPECT_NEAR(agi::metrics::psnr(a, b), 20.0, 1e-3);
    Tensor<double> c({16, 16});
    for (int64_t i = 0; i < c.numel(); ++i) c[i] = 0.51;
    EXPECT_NEAR(agi::metrics::mae_scaled(a, c), 1.0, 1e-9);
    Rng rng(4);
    const auto img = agi::rand_uniform<double>(rng, {24, 24}, 0.0, 1.0);
    const auto noisy = agi::rand_uniform<double>(rng, {24, 24}, 0.0, 1.0);
    EXPECT_EQ(agi::metrics::ssim(img, img), 1.0);
    EXPECT_EQ(agi::metrics::ssim(img, noisy), agi::metrics::ssim(noisy, img));
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C11FullRunsAreBitwiseReproducible) {
  Banner banner(11);
  try {
    const DeskRuns& d = desk();
    const auto rerun = [&](const TrainConfig& cfg, const char* first, const char* second,
                           const agi::metrics::MetricReport& ref) {
      fs::create_directories(d.dir / second);
      (void)agi::train_model(cfg, d.train_ds, (d.dir / second).string());
      EXPECT_EQ(file_bytes(d.dir / first / "ckpt_final.tnsr"),
                file_bytes(d.dir / second / "ckpt_final.tnsr"))
          << second;
      const Model<float> again = load_trained(cfg, d.dir / second / "ckpt_final.tnsr");
      const auto rep = agi::evaluate_model(again, d.eval_ds, cfg.batch);
      EXPECT_EQ(agi::report_json(rep).dump(2), agi::report_json(ref).dump(2)) << second;
    };
    rerun(d.agi_cfg, "agi1", "agi2", d.agi_rep);
    rerun(d.res_cfg, "res1", "res2", d.res_rep);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}

TEST(Acceptance, C12BenchGatesOnEqualityAndBatchedWins) {
  Banner banner(12);
  try {
    const auto rows = agi::bench::run_all(21);  // run_case asserts equality pre-timing
    ASSERT_EQ(rows.size(), 3u);
    std::ostringstream csv;
    agi::bench::write_csv(csv, rows);
    std::cout << csv.str();
    EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "S,Cout,Cin/n,k,t_batched_ns,t_loop_ns");
    const auto& largest = rows.back();
    EXPECT_EQ(largest.c.s, 128);
    EXPECT_LE(largest.batched_ns, largest.loop_ns);
  } catch (const std::exception& e) {
    ADD_FAILURE() << "unexpected exception: " << e.what();
  }
}
