#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agi/network.hpp"
#include "agi/optim.hpp"
#include "agi/synthdata.hpp"

// JSON round-trips for the user-facing configs. Parsing is tolerant of
// missing keys (defaults fill in) and strict about unknown ones, so a
// typoed key fails loudly instead of silently training the wrong model.
namespace agi {

using json = nlohmann::json;

namespace detail {

template <typename T>
void get_if_present(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const char* what) {
  for (const auto& it : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace detail

struct TrainConfig {
  std::string arch = "agi";
  std::vector<int> widths = {8, 16, 32, 64};
  int groups = 4;
  std::vector<int> replace_mask = {1, 1, 1, 1, 1, 0, 0};
  int steps = 500;
  int batch = 8;
  uint64_t seed = 42;
  AdamConfig adam;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  std::string data;          // dataset manifest path or directory

  // Separate derived streams: model init and batch sampling must not
  // consume from one shared sequence or resuming would need RNG state.
  static constexpr uint64_t kStreamInit = 0x1217;
  static constexpr uint64_t kStreamBatch = 0xB47C;

  ModelConfig model_config() const {
    ModelConfig m;
    m.arch = arch_from_string(arch);
    m.in_ch = 2;
    m.widths = widths;
    m.groups = groups;
    m.replace_mask = replace_mask;
    m.seed = Rng::mix(seed, kStreamInit);
    return m;
  }

  void validate() const {
    model_config().validate();
    check(steps >= 1, "train: steps must be >= 1");
    check(batch >= 1, "train: batch must be >= 1");
    check(checkpoint_every >= 0, "train: checkpoint_every must be >= 0");
    check(adam.lr > 0 && adam.eps > 0, "train: lr and eps must be positive");
    check(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1,
          "train: betas must lie in [0, 1)");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"arch", c.arch},
           {"widths", c.widths},
           {"groups", c.groups},
           {"replace_mask", c.replace_mask},
           {"steps", c.steps},
           {"batch", c.batch},
           {"seed", c.seed},
           {"lr", c.adam.lr},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"eps", c.adam.eps},
           {"checkpoint_every", c.checkpoint_every},
           {"data", c.data}};
}

inline void from_json(const json& j, TrainConfig& c) {
  detail::reject_unknown(j,
                         {"arch", "widths", "groups", "replace_mask", "steps", "batch", "seed",
                          "lr", "beta1", "beta2", "eps", "checkpoint_every", "data"},
                         "train config");
  detail::get_if_present(j, "arch", c.arch);
  detail::get_if_present(j, "widths", c.widths);
  detail::get_if_present(j, "groups", c.groups);
  detail::get_if_present(j, "replace_mask", c.replace_mask);
  detail::get_if_present(j, "steps", c.steps);
  detail::get_if_present(j, "batch", c.batch);
  detail::get_if_present(j, "seed", c.seed);
  detail::get_if_present(j, "lr", c.adam.lr);
  detail::get_if_present(j, "beta1", c.adam.beta1);
  detail::get_if_present(j, "beta2", c.adam.beta2);
  detail::get_if_present(j, "eps", c.adam.eps);
  detail::get_if_present(j, "checkpoint_every", c.checkpoint_every);
  detail::get_if_present(j, "data", c.data);
}

namespace synth {

inline void to_json(json& j, const GenConfig& c) {
  j = json{{"count", c.count},   {"eval_count", c.eval_count}, {"h", c.h},
           {"w", c.w},           {"seed", c.seed},             {"shift_max", c.shift_max},
           {"noise", c.noise},   {"min_shapes", c.min_shapes}, {"max_shapes", c.max_shapes}};
}

inline void from_json(const json& j, GenConfig& c) {
  agi::detail::reject_unknown(j,
                              {"count", "eval_count", "h", "w", "seed", "shift_max", "noise",
                               "min_shapes", "max_shapes"},
                              "gen config");
  agi::detail::get_if_present(j, "count", c.count);
  agi::detail::get_if_present(j, "eval_count", c.eval_count);
  agi::detail::get_if_present(j, "h", c.h);
  agi::detail::get_if_present(j, "w", c.w);
  agi::detail::get_if_present(j, "seed", c.seed);
  agi::detail::get_if_present(j, "shift_max", c.shift_max);
  agi::detail::get_if_present(j, "noise", c.noise);
  agi::detail::get_if_present(j, "min_shapes", c.min_shapes);
  agi::detail::get_if_present(j, "max_shapes", c.max_shapes);
}

}  // namespace synth

inline json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

inline void save_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace agi
