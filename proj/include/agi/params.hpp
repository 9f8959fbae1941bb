#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "agi/rng.hpp"
#include "agi/tape.hpp"
#include "agi/tensor.hpp"

namespace agi {

// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)), the default draw for conv and
// dense weights here.
template <typename T>
Tensor<T> he_uniform(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
  check(fan_in >= 1, "he_uniform: fan_in must be >= 1");
  const double bound = std::sqrt(6.0 / double(fan_in));
  return rand_uniform<T>(rng, shape, T(-bound), T(bound));
}

// Named parameter tensors in insertion order. Iteration order is part of
// the contract: checkpoints, optimizer state and gradient accumulation all
// walk parameters in the order they were registered.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    check(!index_.count(name), "parameter registered twice: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(init));
    return entries_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    check(it != index_.end(), "unknown parameter: " + name);
    return entries_[it->second].second;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "unknown parameter: " + name);
    return entries_[it->second].second;
  }

  int64_t size() const { return int64_t(entries_.size()); }
  const std::string& name(int64_t i) const { return entries_[size_t(i)].first; }
  Tensor<T>& tensor(int64_t i) { return entries_[size_t(i)].second; }
  const Tensor<T>& tensor(int64_t i) const { return entries_[size_t(i)].second; }

  int64_t total_params() const {
    int64_t total = 0;
    for (const auto& e : entries_) total += e.second.numel();
    return total;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// One forward recording: binds parameters into a tape as leaves, caching
// the binding so a parameter used twice maps to one node and its gradient
// contributions accumulate.
template <typename T>
struct FwdCtx {
  Tape<T>& tape;
  const ParamStore<T>& params;
  bool train;  // false records a gradient-free forward

  FwdCtx(Tape<T>& t, const ParamStore<T>& p, bool train_mode)
      : tape(t), params(p), train(train_mode) {}

  Var param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape.leaf(params.get(name), train, "param");
    bound_.emplace(name, v);
    return v;
  }

  bool bound(const std::string& name) const { return bound_.count(name) != 0; }

  // Gradient of the backward target with respect to a bound parameter.
  const Tensor<T>& grad(const std::string& name) const {
    auto it = bound_.find(name);
    check(it != bound_.end(), "parameter was not used in this forward: " + name);
    return tape.grad(it->second);
  }

 private:
  std::unordered_map<std::string, Var> bound_;
};

}  // namespace agi
