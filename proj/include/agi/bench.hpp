#pragma once

#include <algorithm>
#include <chrono>
#include <ostream>
#include <vector>

#include "agi/rng.hpp"
#include "agi/roll.hpp"
#include "agi/tensor.hpp"

// Micro-benchmark for integer kernel rolling: one batched pass over a
// stack of S kernel sets (shape S x Cout x Cin/n x k x k, one shift per
// set) versus slicing each set out and rolling it alone. The two paths
// must agree bitwise on every case before any timing is recorded; the
// benchmark reports median wall time per full pass.
namespace agi::bench {

struct RollBenchCase {
  int s = 4;        // stacked (sample, group) slices
  int cout = 8;     // output channels per slice
  int cin_g = 4;    // input channels per group (Cin/n)
  int k = 3;
};

struct RollBenchRow {
  RollBenchCase c;
  double loop_ns = 0;     // median per pass
  double batched_ns = 0;  // median per pass
};

inline std::vector<RollBenchCase> default_cases() {
  return {{8, 16, 4, 3}, {32, 32, 8, 3}, {128, 64, 16, 3}};
}

namespace detail {

template <typename F>
double median_ns(F&& fn, int reps) {
  std::vector<double> times(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times[size_t(r)] = std::chrono::duration<double, std::nano>(t1 - t0).count();
  }
  std::sort(times.begin(), times.end());
  return times[size_t(reps / 2)];
}

}  // namespace detail

inline RollBenchRow run_case(const RollBenchCase& c, int reps, uint64_t seed) {
  Rng rng(seed);
  const int64_t s = c.s, m = int64_t(c.cout) * c.cin_g, k = c.k;
  const Tensor<float> w = rand_uniform<float>(rng, {s, c.cout, c.cin_g, k, k}, -1.f, 1.f);
  std::vector<roll::IntShift> shifts(static_cast<size_t>(s));
  for (auto& sh : shifts) {
    sh.sx = int(rng.next_below(uint64_t(4 * k + 1))) - 2 * c.k;
    sh.sy = int(rng.next_below(uint64_t(4 * k + 1))) - 2 * c.k;
  }

  Tensor<float> loop_out(w.shape());
  auto loop_pass = [&] {
    Tensor<float> slice({c.cout, c.cin_g, k, k});
    for (int64_t i = 0; i < s; ++i) {
      std::copy(w.data() + i * m * k * k, w.data() + (i + 1) * m * k * k, slice.data());
      const Tensor<float> rolled =
          roll::roll_int(slice, shifts[size_t(i)].sx, shifts[size_t(i)].sy);
      std::copy(rolled.data(), rolled.data() + m * k * k, loop_out.data() + i * m * k * k);
    }
  };
  Tensor<float> batched_out;
  auto batched_pass = [&] { batched_out = roll::roll_int_batched(w, shifts); };

  // Correctness gate first: a benchmark over disagreeing outputs is void.
  loop_pass();
  batched_pass();
  check(bitwise_equal(loop_out, batched_out),
        "bench_roll: batched and per-slice outputs disagree on case S=" + std::to_string(c.s));

  RollBenchRow row;
  row.c = c;
  row.loop_ns = detail::median_ns(loop_pass, reps);
  row.batched_ns = detail::median_ns(batched_pass, reps);
  return row;
}

inline std::vector<RollBenchRow> run_all(int reps = 21, uint64_t seed = 7) {
  std::vector<RollBenchRow> rows;
  for (const RollBenchCase& c : default_cases()) rows.push_back(run_case(c, reps, seed));
  return rows;
}

inline void write_csv(std::ostream& out, const std::vector<RollBenchRow>& rows) {
  out << "S,Cout,Cin/n,k,t_batched_ns,t_loop_ns\n";
  for (const RollBenchRow& r : rows)
    out << r.c.s << "," << r.c.cout << "," << r.c.cin_g << "," << r.c.k << "," << r.batched_ns
        << "," << r.loop_ns << "\n";
}

}  // namespace agi::bench
