#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "agi/config.hpp"
#include "agi/io.hpp"
#include "agi/metrics.hpp"
#include "agi/network.hpp"
#include "agi/optim.hpp"
#include "agi/synthdata.hpp"

namespace agi {

// ---- dataset files ----

inline void save_dataset(const std::string& path, const synth::Dataset& ds) {
  io::TensorFile tf;
  tf.put("inputs", ds.inputs);
  tf.put("targets", ds.targets);
  tf.put("shifts", ds.shifts);
  tf.save(path);
}

// Shifts are optional on load so pre-converted two-modality slices can be
// fed through the same path; absent shifts read as zeros.
inline synth::Dataset load_dataset(const std::string& path) {
  const io::TensorFile tf = io::TensorFile::load(path);
  synth::Dataset ds;
  ds.inputs = tf.f32("inputs");
  ds.targets = tf.f32("targets");
  check(ds.inputs.rank() == 4 && ds.inputs.dim(1) == 2, "dataset inputs must be N x 2 x H x W");
  check(ds.targets.rank() == 4 && ds.targets.dim(0) == ds.inputs.dim(0) && ds.targets.dim(1) == 1,
        "dataset targets must be N x 1 x H x W");
  if (tf.has("shifts")) {
    ds.shifts = tf.f32("shifts");
    check(ds.shifts.rank() == 2 && ds.shifts.dim(0) == ds.inputs.dim(0) && ds.shifts.dim(1) == 2,
          "dataset shifts must be N x 2");
  } else {
    ds.shifts = Tensor<float>({ds.inputs.dim(0), 2});
  }
  return ds;
}

// ---- checkpoints ----
// Layout: param/<name>, adam/m/<name>, adam/v/<name>, meta/step (f64[1]),
// meta/config_utf8 (training config JSON as bytes).

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const AdamState<T>& st,
                     const TrainConfig& cfg) {
  const ParamStore<T>& ps = model.params();
  check(int64_t(st.m.size()) == ps.size(), "checkpoint: optimizer state does not match model");
  io::TensorFile tf;
  for (int64_t i = 0; i < ps.size(); ++i) tf.put("param/" + ps.name(i), ps.tensor(i));
  for (int64_t i = 0; i < ps.size(); ++i) tf.put("adam/m/" + ps.name(i), st.m[size_t(i)]);
  for (int64_t i = 0; i < ps.size(); ++i) tf.put("adam/v/" + ps.name(i), st.v[size_t(i)]);
  Tensor<double> step({1});
  step[0] = double(st.t);
  tf.put("meta/step", step);
  tf.put("meta/config_utf8", io::utf8_tensor(json(cfg).dump()));
  tf.save(path);
}

inline TrainConfig checkpoint_config(const io::TensorFile& tf) {
  const std::string text = io::tensor_utf8(tf.f32("meta/config_utf8"));
  try {
    return json::parse(text).get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint carries invalid config JSON: ") + e.what());
  }
}

// Restores parameters (and optimizer state if st is non-null) in place.
// Returns the completed step count.
template <typename T>
int64_t load_checkpoint_into(const io::TensorFile& tf, Model<T>& model, AdamState<T>* st) {
  ParamStore<T>& ps = model.params();
  auto fetch = [&](const std::string& key, const Tensor<T>& like) {
    check(tf.has(key), "checkpoint is missing tensor: " + key);
    Tensor<T> t;
    if constexpr (std::is_same_v<T, float>) {
      t = tf.f32(key);
    } else {
      t = tf.f64(key);
    }
    check(t.same_shape(like), "checkpoint tensor " + key + " has shape " + shape_str(t.shape()) +
                                  ", model expects " + shape_str(like.shape()));
    return t;
  };
  for (int64_t i = 0; i < ps.size(); ++i)
    ps.tensor(i) = fetch("param/" + ps.name(i), ps.tensor(i));
  if (st) {
    check(int64_t(st->m.size()) == ps.size(), "optimizer state not initialized for this model");
    for (int64_t i = 0; i < ps.size(); ++i) {
      st->m[size_t(i)] = fetch("adam/m/" + ps.name(i), st->m[size_t(i)]);
      st->v[size_t(i)] = fetch("adam/v/" + ps.name(i), st->v[size_t(i)]);
    }
  }
  const Tensor<double>& step = tf.f64("meta/step");
  check(step.numel() == 1, "checkpoint meta/step must be a single value");
  const int64_t t = int64_t(step[0]);
  if (st) st->t = t;
  return t;
}

// ---- batching ----

// Batch membership is a pure function of (seed, step), so resuming from a
// checkpoint replays the identical sample stream with no RNG state saved.
inline std::vector<int64_t> batch_indices(uint64_t seed, int64_t step, int batch, int64_t n) {
  check(n >= 1, "batch_indices: empty dataset");
  Rng rng(Rng::mix(Rng::mix(seed, TrainConfig::kStreamBatch), uint64_t(step)));
  std::vector<int64_t> ix(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) ix[size_t(b)] = int64_t(rng.next_below(uint64_t(n)));
  return ix;
}

inline void gather_batch(const synth::Dataset& ds, const std::vector<int64_t>& ix,
                         Tensor<float>& x, Tensor<float>& y) {
  const int64_t hw = ds.inputs.dim(2) * ds.inputs.dim(3);
  const int64_t b = int64_t(ix.size());
  x = Tensor<float>({b, 2, ds.inputs.dim(2), ds.inputs.dim(3)});
  y = Tensor<float>({b, 1, ds.inputs.dim(2), ds.inputs.dim(3)});
  for (int64_t j = 0; j < b; ++j) {
    const int64_t i = ix[size_t(j)];
    check(i >= 0 && i < ds.size(), "batch index out of range");
    std::copy(ds.inputs.data() + i * 2 * hw, ds.inputs.data() + (i + 1) * 2 * hw,
              x.data() + j * 2 * hw);
    std::copy(ds.targets.data() + i * hw, ds.targets.data() + (i + 1) * hw, y.data() + j * hw);
  }
}

// ---- training ----

struct TrainResult {
  double final_loss = 0;
  int64_t steps_done = 0;
  std::string final_checkpoint;
};

// Single-threaded loop: L1 loss on the prediction, one Adam update per
// step. Writes train_log.csv (step,loss,seconds) and checkpoints under
// out_dir. resume_from restarts mid-run from a saved checkpoint; the
// sample stream and updates continue exactly as if never interrupted.
template <typename T = float>
TrainResult train_model(const TrainConfig& cfg, const synth::Dataset& tds,
                        const std::string& out_dir, const std::string& resume_from = "",
                        std::ostream* console = nullptr) {
  cfg.validate();
  check(tds.size() >= 1, "train: empty dataset");
  Model<T> model(cfg.model_config());
  AdamState<T> st;
  st.init(model.params());
  int64_t start_step = 0;
  if (!resume_from.empty()) {
    const io::TensorFile tf = io::TensorFile::load(resume_from);
    const TrainConfig saved = checkpoint_config(tf);
    check(json(saved) == json(cfg), "resume config does not match checkpoint config");
    start_step = load_checkpoint_into(tf, model, &st);
    check(start_step <= cfg.steps, "checkpoint is already past the requested step count");
  }

  std::ofstream log(out_dir + "/train_log.csv",
                    start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open for writing: " + out_dir + "/train_log.csv");
  if (start_step == 0) log << "step,loss,seconds\n";

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Tensor<T>> grads;
  double last_loss = 0;
  Tensor<float> xb, yb;
  for (int64_t step = start_step; step < cfg.steps; ++step) {
    gather_batch(tds, batch_indices(cfg.seed, step, cfg.batch, tds.size()), xb, yb);
    try {
      Tape<T> tape;
      FwdCtx<T> ctx{tape, model.params(), true};
      Var x = tape.leaf(xb.template cast<T>(), false, "input");
      Var y = tape.leaf(yb.template cast<T>(), false, "target");
      Var pred = model.forward(ctx, x);
      Var loss = tape.mean_all(tape.abs(tape.sub(pred, y)));
      tape.backward(loss);
      last_loss = double(tape.val(loss)[0]);
      grads.clear();
      for (int64_t i = 0; i < model.params().size(); ++i)
        grads.push_back(ctx.grad(model.params().name(i)));
      adam_step(model.params(), grads, st, cfg.adam);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step + 1) + ": " +
                         e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << (step + 1) << "," << std::setprecision(10) << last_loss << ","
        << std::setprecision(6) << secs << "\n";
    if (console && ((step + 1) % 50 == 0 || step + 1 == cfg.steps))
      (*console) << "step " << (step + 1) << "/" << cfg.steps << "  loss " << std::setprecision(6)
                 << last_loss << "  " << std::setprecision(4) << secs << "s\n";
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps)
      save_checkpoint(out_dir + "/ckpt_step" + std::to_string(step + 1) + ".tnsr", model, st, cfg);
  }
  const std::string final_path = out_dir + "/ckpt_final.tnsr";
  save_checkpoint(final_path, model, st, cfg);
  return TrainResult{last_loss, cfg.steps, final_path};
}

// ---- evaluation ----

// Per-sample metrics against the target plus their means. Every sample's
// forward pass is independent of batch composition, so the optional
// thread fan-out (contiguous index chunks, results written to fixed
// slots) returns bitwise the same report as a single-threaded pass.
template <typename T = float>
metrics::MetricReport evaluate_model(const Model<T>& model, const synth::Dataset& ds, int batch,
                                     int threads = 1) {
  check(ds.size() >= 1, "evaluate: empty dataset");
  check(batch >= 1, "evaluate: batch must be >= 1");
  check(threads >= 1, "evaluate: threads must be >= 1");
  const int64_t n = ds.size(), h = ds.inputs.dim(2), w = ds.inputs.dim(3);
  metrics::MetricReport rep;
  rep.psnr_db.resize(static_cast<size_t>(n));
  rep.ssim_pct.resize(static_cast<size_t>(n));
  rep.mae_x100.resize(static_cast<size_t>(n));
  auto eval_range = [&](int64_t lo, int64_t hi) {
    Tensor<T> pred_img({h, w}), tgt_img({h, w});
    for (int64_t at = lo; at < hi; at += batch) {
      const int64_t b = std::min<int64_t>(batch, hi - at);
      Tensor<float> xb({b, 2, h, w});
      std::copy(ds.inputs.data() + at * 2 * h * w, ds.inputs.data() + (at + b) * 2 * h * w,
                xb.data());
      Tape<T> tape;
      FwdCtx<T> ctx{tape, model.params(), false};
      Var pred = model.forward(ctx, tape.leaf(xb.template cast<T>(), false, "input"));
      const Tensor<T>& pv = tape.val(pred);
      for (int64_t j = 0; j < b; ++j) {
        std::copy(pv.data() + j * h * w, pv.data() + (j + 1) * h * w, pred_img.data());
        for (int64_t i = 0; i < h * w; ++i) tgt_img[i] = T(ds.targets[(at + j) * h * w + i]);
        rep.psnr_db[size_t(at + j)] = metrics::psnr(pred_img, tgt_img);
        rep.ssim_pct[size_t(at + j)] = 100.0 * metrics::ssim(pred_img, tgt_img);
        rep.mae_x100[size_t(at + j)] = metrics::mae_scaled(pred_img, tgt_img);
      }
    }
  };
  if (threads <= 1 || n <= 1) {
    eval_range(0, n);
  } else {
    const int64_t chunk = (n + threads - 1) / threads;
    std::vector<std::future<void>> futs;
    for (int64_t lo = 0; lo < n; lo += chunk)
      futs.push_back(std::async(std::launch::async, eval_range, lo, std::min(lo + chunk, n)));
    for (auto& f : futs) f.get();
  }
  rep.finalize();
  return rep;
}

inline json report_json(const metrics::MetricReport& r) {
  return json{{"mean", {{"psnr_db", r.mean_psnr_db},
                        {"ssim_pct", r.mean_ssim_pct},
                        {"mae_x100", r.mean_mae_x100}}},
              {"per_sample", {{"psnr_db", r.psnr_db},
                              {"ssim_pct", r.ssim_pct},
                              {"mae_x100", r.mae_x100}}}};
}

// One row per sample.
inline void report_csv(std::ostream& out, const metrics::MetricReport& r) {
  out << "id,psnr,ssim,mae\n";
  out << std::setprecision(10);
  for (size_t i = 0; i < r.psnr_db.size(); ++i)
    out << i << "," << r.psnr_db[i] << "," << r.ssim_pct[i] << "," << r.mae_x100[i] << "\n";
}

// ---- misalignment sweep ----

inline double least_squares_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  check(xs.size() == ys.size() && xs.size() >= 2, "slope needs >= 2 points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(xs.size());
  my /= double(xs.size());
  double num = 0, den = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) * (xs[i] - mx);
  }
  check(den > 0, "slope undefined for constant x");
  return num / den;
}

inline std::vector<double> sweep_levels() { return {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0}; }

inline constexpr uint64_t kStreamSweep = 0x53C7;

// Held-out set with modality B pushed further off alignment: each sample
// gets an extra translation drawn uniformly from [-level, level] per axis
// and applied by bilinear resampling. Draws depend only on the generator
// seed, the level index and the sample index, so every model under
// comparison sees identical perturbed inputs, and level 0 reproduces the
// original set bit for bit.
inline synth::Dataset perturbed_eval_set(const synth::Dataset& ds, uint64_t gen_seed,
                                         int level_idx, double level) {
  check(level >= 0, "perturbation level must be >= 0");
  const int64_t n = ds.size(), h = ds.inputs.dim(2), w = ds.inputs.dim(3);
  synth::Dataset out;
  out.inputs = ds.inputs;
  out.targets = ds.targets;
  out.shifts = ds.shifts;
  std::vector<float> plane(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(Rng::mix(Rng::mix(Rng::mix(gen_seed, kStreamSweep), uint64_t(level_idx)),
                     uint64_t(i)));
    const double adx = rng.uniform(-level, level);
    const double ady = rng.uniform(-level, level);
    float* b = out.inputs.data() + (i * 2 + 1) * h * w;
    std::copy(b, b + h * w, plane.data());
    synth::detail::shift_plane(plane.data(), b, h, w, adx, ady);
  }
  return out;
}

struct SweepRow {
  double level = 0;
  metrics::MetricReport rep;
};

struct ModelSweep {
  std::string name;
  std::vector<SweepRow> rows;
  double psnr_slope = 0;  // dB per pixel of extra misalignment, least-squares fit
};

// Runs the level grid once, evaluating every model on the same perturbed
// sets.
template <typename T = float>
std::vector<ModelSweep> perturbation_sweep(const std::vector<const Model<T>*>& models,
                                           const std::vector<std::string>& names,
                                           const synth::Dataset& eval_ds, uint64_t gen_seed,
                                           int batch, int threads = 1) {
  check(!models.empty() && models.size() == names.size(),
        "sweep: need one name per model and at least one model");
  std::vector<ModelSweep> res(models.size());
  for (size_t m = 0; m < models.size(); ++m) res[m].name = names[m];
  const std::vector<double> levels = sweep_levels();
  for (size_t li = 0; li < levels.size(); ++li) {
    const synth::Dataset ds = perturbed_eval_set(eval_ds, gen_seed, int(li), levels[li]);
    for (size_t m = 0; m < models.size(); ++m)
      res[m].rows.push_back({levels[li], evaluate_model(*models[m], ds, batch, threads)});
  }
  for (ModelSweep& ms : res) {
    std::vector<double> xs, ys;
    for (const SweepRow& r : ms.rows) {
      xs.push_back(r.level);
      ys.push_back(r.rep.mean_psnr_db);
    }
    ms.psnr_slope = least_squares_slope(xs, ys);
  }
  return res;
}

inline void sweep_csv(std::ostream& out, const std::vector<ModelSweep>& res) {
  out << "model,level,psnr,ssim,mae\n";
  out << std::setprecision(10);
  for (const ModelSweep& ms : res)
    for (const SweepRow& r : ms.rows)
      out << ms.name << "," << r.level << "," << r.rep.mean_psnr_db << ","
          << r.rep.mean_ssim_pct << "," << r.rep.mean_mae_x100 << "\n";
}

inline json sweep_json(const std::vector<ModelSweep>& res) {
  json models = json::array();
  for (const ModelSweep& ms : res) {
    json rows = json::array();
    for (const SweepRow& r : ms.rows) {
      json row = report_json(r.rep);
      row["level"] = r.level;
      rows.push_back(std::move(row));
    }
    models.push_back(json{{"name", ms.name}, {"psnr_slope", ms.psnr_slope},
                          {"levels", std::move(rows)}});
  }
  return json{{"level_grid", sweep_levels()}, {"models", std::move(models)}};
}

}  // namespace agi
