#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agi/bench.hpp"
#include "agi/train.hpp"
#include "fd_suites.hpp"

// Command-line harness: dataset generation, training, evaluation, the
// misalignment sweep, gradient checks, the roll benchmark and checkpoint
// inspection. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.
namespace fs = std::filesystem;
using namespace agi;

namespace {

int threads_from_env() {
  const char* v = std::getenv("AGI_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (!end || *end != '\0' || n < 1 || n > 1024)
    throw ConfigError("AGI_THREADS must be a positive integer, got '" + std::string(v) + "'");
  return int(n);
}

std::vector<int> parse_mask(const std::string& s) {
  std::vector<int> mask;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok != "0" && tok != "1")
      throw ConfigError("mask entries must be 0 or 1, got '" + tok + "'");
    mask.push_back(tok == "1" ? 1 : 0);
  }
  return mask;
}

struct ManifestInfo {
  synth::GenConfig gen;
  std::map<std::string, std::string> split_paths;
  fs::path dir;
};

// Accepts the manifest file itself or the directory holding it.
ManifestInfo load_manifest(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= "manifest.json";
  const json j = load_json_file(p.string());
  ManifestInfo mi;
  mi.dir = p.parent_path();
  if (!j.contains("generator") || !j.contains("splits"))
    throw ConfigError("manifest " + p.string() + " lacks generator/splits sections");
  mi.gen = j.at("generator").get<synth::GenConfig>();
  for (const json& s : j.at("splits"))
    mi.split_paths[s.at("name").get<std::string>()] = s.at("path").get<std::string>();
  return mi;
}

synth::Dataset load_split(const ManifestInfo& mi, const std::string& split) {
  auto it = mi.split_paths.find(split);
  if (it == mi.split_paths.end()) throw ConfigError("manifest has no split '" + split + "'");
  return load_dataset((mi.dir / it->second).string());
}

struct LoadedModel {
  TrainConfig cfg;
  Model<float> model;
  int64_t step = 0;
};

LoadedModel load_model(const std::string& ckpt_path) {
  const io::TensorFile tf = io::TensorFile::load(ckpt_path);
  TrainConfig cfg = checkpoint_config(tf);
  LoadedModel lm{cfg, Model<float>(cfg.model_config()), 0};
  lm.step = load_checkpoint_into(tf, lm.model, static_cast<AdamState<float>*>(nullptr));
  return lm;
}

std::string csv_sibling(const std::string& report_path) {
  fs::path p(report_path);
  p.replace_extension(".csv");
  return p.string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

// ---- subcommand bodies ----

int cmd_gen_data(const synth::GenConfig& gc, const std::string& out_dir) {
  gc.validate();
  fs::create_directories(out_dir);
  const synth::Dataset train = synth::build_dataset(gc, gc.count, false);
  const synth::Dataset eval = synth::build_dataset(gc, gc.eval_count, true);
  save_dataset(out_dir + "/train.tnsr", train);
  save_dataset(out_dir + "/eval.tnsr", eval);
  const json manifest = {
      {"generator", gc},
      {"splits",
       {{{"name", "train"}, {"path", "train.tnsr"}, {"count", gc.count}},
        {{"name", "eval"}, {"path", "eval.tnsr"}, {"count", gc.eval_count}}}}};
  save_json_file(out_dir + "/manifest.json", manifest);
  std::cout << "wrote " << gc.count << " train and " << gc.eval_count << " eval samples to "
            << out_dir << "\n";
  return 0;
}

int cmd_train(const TrainConfig& cfg, const std::string& out_dir, const std::string& resume) {
  cfg.validate();
  if (cfg.data.empty())
    throw ConfigError("train needs a dataset: pass --data or put \"data\" in the config");
  const ManifestInfo mi = load_manifest(cfg.data);
  const synth::Dataset tds = load_split(mi, "train");
  fs::create_directories(out_dir);
  save_json_file(out_dir + "/effective_config.json", json(cfg));
  const TrainResult res = train_model<float>(cfg, tds, out_dir, resume, &std::cout);
  std::cout << "final loss " << std::setprecision(6) << res.final_loss << " after "
            << res.steps_done << " steps\ncheckpoint: " << res.final_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, const std::string& split,
             const std::string& report_path) {
  const LoadedModel lm = load_model(ckpt);
  const ManifestInfo mi = load_manifest(manifest);
  const synth::Dataset ds = load_split(mi, split);
  const metrics::MetricReport rep =
      evaluate_model(lm.model, ds, lm.cfg.batch, threads_from_env());
  json j = report_json(rep);
  j["checkpoint"] = ckpt;
  j["split"] = split;
  j["step"] = lm.step;
  j["config"] = lm.cfg;
  save_json_file(report_path, j);
  std::ostringstream csv;
  report_csv(csv, rep);
  write_text(csv_sibling(report_path), csv.str());
  std::cout << "split " << split << ": psnr " << std::setprecision(6) << rep.mean_psnr_db
            << " dB, ssim " << rep.mean_ssim_pct << ", mae " << rep.mean_mae_x100 << " (x100)\n";
  return 0;
}

int cmd_sweep(const std::vector<std::string>& ckpts, const std::string& manifest,
              const std::string& report_path) {
  std::vector<LoadedModel> loaded;
  loaded.reserve(ckpts.size());
  std::vector<const Model<float>*> models;
  std::vector<std::string> names;
  for (const std::string& c : ckpts) {
    loaded.push_back(load_model(c));
    std::string name = fs::path(c).stem().string();
    for (const std::string& prev : names)
      if (prev == name) name += "#" + std::to_string(names.size());
    names.push_back(name);
  }
  for (const LoadedModel& lm : loaded) models.push_back(&lm.model);
  const ManifestInfo mi = load_manifest(manifest);
  const synth::Dataset eval_ds = load_split(mi, "eval");
  const std::vector<ModelSweep> res =
      perturbation_sweep(models, names, eval_ds, mi.gen.seed, 8, threads_from_env());
  json j = sweep_json(res);
  j["manifest"] = manifest;
  j["checkpoints"] = ckpts;
  save_json_file(report_path, j);
  std::ostringstream csv;
  sweep_csv(csv, res);
  write_text(csv_sibling(report_path), csv.str());
  for (const ModelSweep& ms : res)
    std::cout << ms.name << ": psnr slope " << std::setprecision(6) << ms.psnr_slope
              << " dB per extra pixel\n";
  return 0;
}

int cmd_gradcheck(bool full) {
  const int64_t cap = full ? 0 : 24;
  bool all_ok = true;
  auto report = [&](const tools::SuiteResult& s) {
    const auto& r = s.rep;
    if (r.pass) {
      std::cout << "ok   " << s.name << "  (" << r.checked << " coords, worst err " << std::scientific
                << std::setprecision(2) << r.worst_err << " <= tol " << r.worst_tol << ")\n";
    } else {
      all_ok = false;
      std::cout << "FAIL " << s.name << "  (" << r.failed << "/" << r.checked << " coords, worst "
                << r.worst_param << "[" << r.worst_index << "] fd=" << std::scientific
                << r.worst_fd << " analytic=" << r.worst_analytic << ")\n";
    }
    std::cout.copyfmt(std::ios(nullptr));
  };
  for (const tools::SuiteResult& s : tools::run_op_suites(cap)) report(s);
  report(tools::run_layer_suite(full ? 0 : 16));
  const double off_grad = tools::offset_head_grad_at_init();
  if (off_grad > 0) {
    std::cout << "ok   offset_head_grad_at_init  (|g|max " << std::scientific
              << std::setprecision(3) << off_grad << ")\n";
  } else {
    all_ok = false;
    std::cout << "FAIL offset_head_grad_at_init  (gradient is exactly zero)\n";
  }
  std::cout.copyfmt(std::ios(nullptr));
  std::cout << (all_ok ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return all_ok ? 0 : 2;
}

int cmd_bench_roll(int reps) {
  const std::vector<bench::RollBenchRow> rows = bench::run_all(reps);
  bench::write_csv(std::cout, rows);
  return 0;
}

int cmd_info(const std::string& ckpt) {
  const io::TensorFile tf = io::TensorFile::load(ckpt);
  const TrainConfig cfg = checkpoint_config(tf);
  Model<float> model(cfg.model_config());
  int64_t step = 0;
  {
    const Tensor<double>& s = tf.f64("meta/step");
    check(s.numel() == 1, "checkpoint meta/step must be a single value");
    step = int64_t(s[0]);
  }
  const json j = {{"checkpoint", ckpt},
                  {"step", step},
                  {"config", cfg},
                  {"param_tensors", model.params().size()},
                  {"param_scalars", model.count_params()},
                  {"flops_64x64", model.count_flops(64, 64)}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-gated group-rolling convolution harness"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic two-modality dataset");
  std::string gen_config, gen_out;
  uint64_t gen_seed = 0;
  int gen_count = 0, gen_eval_count = 0, gen_size = 0;
  double gen_shift = 0, gen_noise = 0;
  gen->add_option("--config", gen_config, "JSON generator config; explicit flags win");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", gen_count, "training samples");
  gen->add_option("--eval-count", gen_eval_count, "held-out samples");
  gen->add_option("--size", gen_size, "image height and width");
  gen->add_option("--shift-max", gen_shift, "modality B misalignment bound, pixels");
  gen->add_option("--noise", gen_noise, "additive noise sigma");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a model on a generated dataset");
  std::string tr_config, tr_net, tr_mask, tr_data, tr_out, tr_resume;
  uint64_t tr_seed = 0;
  int tr_groups = 0, tr_steps = 0, tr_batch = 0, tr_ckpt_every = 0;
  double tr_lr = 0;
  train->add_option("--config", tr_config, "JSON training config; explicit flags win");
  train->add_option("--net", tr_net, "architecture")
      ->check(CLI::IsMember({"resunet", "agi"}));
  train->add_option("--groups", tr_groups, "channel groups n");
  train->add_option("--mask", tr_mask,
                    "stage replacement mask, 7 comma-separated 0/1 flags "
                    "(down1,down2,down3,body,up1,up2,up3)");
  train->add_option("--steps", tr_steps, "optimization steps");
  train->add_option("--seed", tr_seed, "training seed");
  train->add_option("--batch", tr_batch, "batch size");
  train->add_option("--lr", tr_lr, "Adam learning rate");
  train->add_option("--checkpoint-every", tr_ckpt_every, "periodic checkpoint interval, 0 = off");
  train->add_option("--data", tr_data, "dataset manifest (file or directory)");
  train->add_option("--resume", tr_resume, "checkpoint to resume from");
  train->add_option("--out", tr_out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_manifest, ev_split = "eval", ev_report;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest (file or directory)")->required();
  ev->add_option("--split", ev_split, "split name")->check(CLI::IsMember({"train", "eval"}));
  ev->add_option("--report", ev_report, "report JSON path (CSV written alongside)")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "Misalignment sweep over one or more checkpoints");
  std::vector<std::string> sw_ckpts;
  std::string sw_manifest, sw_report;
  sw->add_option("--checkpoints", sw_ckpts, "checkpoint files")->required()->expected(-1);
  sw->add_option("--manifest", sw_manifest, "dataset manifest (file or directory)")->required();
  sw->add_option("--report", sw_report, "report JSON path (CSV written alongside)")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  bool gc_full = false;
  gc->add_flag("--full", gc_full, "probe every coordinate instead of a sample");

  // bench-roll
  auto* br = app.add_subcommand("bench-roll", "Batched vs per-slice kernel rolling benchmark");
  int br_reps = 21;
  br->add_option("--reps", br_reps, "timed repetitions per case")->check(CLI::PositiveNumber);

  // info
  auto* info = app.add_subcommand("info", "Describe a checkpoint");
  std::string info_ckpt;
  info->add_option("--checkpoint", info_ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (gen->parsed()) {
      synth::GenConfig gcfg;
      if (!gen_config.empty()) gcfg = load_json_file(gen_config).get<synth::GenConfig>();
      if (gen->count("--seed")) gcfg.seed = gen_seed;
      if (gen->count("--count")) gcfg.count = gen_count;
      if (gen->count("--eval-count")) gcfg.eval_count = gen_eval_count;
      if (gen->count("--size")) gcfg.h = gcfg.w = gen_size;
      if (gen->count("--shift-max")) gcfg.shift_max = gen_shift;
      if (gen->count("--noise")) gcfg.noise = gen_noise;
      return cmd_gen_data(gcfg, gen_out);
    }
    if (train->parsed()) {
      TrainConfig cfg;
      if (!tr_config.empty()) cfg = load_json_file(tr_config).get<TrainConfig>();
      if (train->count("--net")) cfg.arch = tr_net;
      if (train->count("--groups")) cfg.groups = tr_groups;
      if (train->count("--mask")) cfg.replace_mask = parse_mask(tr_mask);
      if (train->count("--steps")) cfg.steps = tr_steps;
      if (train->count("--seed")) cfg.seed = tr_seed;
      if (train->count("--batch")) cfg.batch = tr_batch;
      if (train->count("--lr")) cfg.adam.lr = tr_lr;
      if (train->count("--checkpoint-every")) cfg.checkpoint_every = tr_ckpt_every;
      if (train->count("--data")) cfg.data = tr_data;
      return cmd_train(cfg, tr_out, tr_resume);
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_manifest, ev_split, ev_report);
    if (sw->parsed()) return cmd_sweep(sw_ckpts, sw_manifest, sw_report);
    if (gc->parsed()) return cmd_gradcheck(gc_full);
    if (br->parsed()) return cmd_bench_roll(br_reps);
    if (info->parsed()) return cmd_info(info_ckpt);
    std::cerr << app.help() << std::flush;
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
}
