#pragma once

#include <cmath>
#include <vector>

#include "agi/params.hpp"

namespace agi {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment tensors in parameter-store order plus the completed
// step count. t feeds the bias correction, so restoring m, v and t
// reproduces the update stream exactly.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  int64_t t = 0;

  void init(const ParamStore<T>& ps) {
    m.clear();
    v.clear();
    for (int64_t i = 0; i < ps.size(); ++i) {
      m.emplace_back(ps.tensor(i).shape());
      v.emplace_back(ps.tensor(i).shape());
    }
    t = 0;
  }
};

// One bias-corrected update over every parameter. grads must be in store
// order with matching shapes.
template <typename T>
void adam_step(ParamStore<T>& ps, const std::vector<Tensor<T>>& grads, AdamState<T>& st,
               const AdamConfig& cfg) {
  check(int64_t(grads.size()) == ps.size() && int64_t(st.m.size()) == ps.size(),
        "adam_step: gradient/state count does not match parameter store");
  st.t += 1;
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T corr1 = T(1) - T(std::pow(cfg.beta1, double(st.t)));
  const T corr2 = T(1) - T(std::pow(cfg.beta2, double(st.t)));
  const T lr = T(cfg.lr), eps = T(cfg.eps);
  for (int64_t i = 0; i < ps.size(); ++i) {
    Tensor<T>& p = ps.tensor(i);
    const Tensor<T>& g = grads[size_t(i)];
    check(g.same_shape(p), "adam_step: gradient shape mismatch for " + ps.name(i));
    Tensor<T>& mi = st.m[size_t(i)];
    Tensor<T>& vi = st.v[size_t(i)];
    for (int64_t j = 0; j < p.numel(); ++j) {
      mi[j] = b1 * mi[j] + (T(1) - b1) * g[j];
      vi[j] = b2 * vi[j] + (T(1) - b2) * g[j] * g[j];
      const T mhat = mi[j] / corr1;
      const T vhat = vi[j] / corr2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace agi
