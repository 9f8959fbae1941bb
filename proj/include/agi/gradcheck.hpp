#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "agi/rng.hpp"
#include "agi/tensor.hpp"

// Central finite-difference validation of analytic gradients. Meant to run
// on double-precision replicas of a computation; float32 FD noise would
// swamp the tolerances used here.
namespace agi {

template <typename T>
struct GradCheckEntry {
  std::string name;
  Tensor<T>* param = nullptr;          // mutated in place, restored after each probe
  const Tensor<T>* analytic = nullptr;  // gradient to validate, same shape
};

struct GradCheckConfig {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
  int64_t max_coords_per_tensor = 0;  // 0 = every coordinate
  uint64_t seed = 0x5eedULL;          // coordinate sampling when capped
};

struct GradCheckReport {
  bool pass = true;
  int64_t checked = 0;
  int64_t failed = 0;
  double worst_err = 0;  // |fd - analytic| at the worst coordinate
  double worst_tol = 0;  // allowed error there
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_fd = 0;
  double worst_analytic = 0;
};

// For each probed coordinate requires |fd - g| <= max(abs_floor, rel_tol *
// max(|fd|, |g|)). loss_fn is re-evaluated from the current parameter
// values on every probe, so it must read entries through the same tensors.
template <typename T, typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, std::vector<GradCheckEntry<T>> entries,
                           const GradCheckConfig& cfg = {}) {
  GradCheckReport rep;
  Rng rng(cfg.seed);
  for (auto& e : entries) {
    check(e.param && e.analytic, "grad_check: null entry for " + e.name);
    check(e.param->same_shape(*e.analytic),
          "grad_check: " + e.name + " gradient shape " + shape_str(e.analytic->shape()) +
              " does not match parameter " + shape_str(e.param->shape()));
    const int64_t total = e.param->numel();
    std::vector<int64_t> coords;
    if (cfg.max_coords_per_tensor > 0 && cfg.max_coords_per_tensor < total) {
      std::unordered_set<int64_t> seen;
      while (int64_t(coords.size()) < cfg.max_coords_per_tensor) {
        const int64_t c = int64_t(rng.next_below(uint64_t(total)));
        if (seen.insert(c).second) coords.push_back(c);
      }
    } else {
      coords.resize(size_t(total));
      for (int64_t i = 0; i < total; ++i) coords[size_t(i)] = i;
    }
    for (int64_t c : coords) {
      T& slot = (*e.param)[c];
      const T saved = slot;
      slot = saved + T(cfg.step);
      const double up = double(loss_fn());
      slot = saved - T(cfg.step);
      const double dn = double(loss_fn());
      slot = saved;
      const double fd = (up - dn) / (2.0 * cfg.step);
      const double g = double((*e.analytic)[c]);
      const double err = std::fabs(fd - g);
      const double tol = std::max(cfg.abs_floor, cfg.rel_tol * std::max(std::fabs(fd), std::fabs(g)));
      ++rep.checked;
      if (err > tol) ++rep.failed;
      if (rep.worst_index < 0 || err - tol > rep.worst_err - rep.worst_tol) {
        rep.worst_err = err;
        rep.worst_tol = tol;
        rep.worst_param = e.name;
        rep.worst_index = c;
        rep.worst_fd = fd;
        rep.worst_analytic = g;
      }
    }
  }
  rep.pass = rep.failed == 0;
  return rep;
}

}  // namespace agi
