#pragma once

// Cache-blocking state-space search minimizing B/F under a cache-capacity
// constraint, register-block selection with the cycle-accounting efficiency
// model, and thread-level job partitioning.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "model.hpp"

namespace sgdplan {

/// Unblocked B/F for a conv layer:
/// size_data*(out_w*out_h + in_w*in_h + k_w*k_h)/(2*k_w*k_h*out_w*out_h).
inline double bf_unblocked(const LayerSpec& l, long size_data = 4) {
  if (!l.is_conv())
    throw model_error(l.name + ": bf_unblocked applies to conv layers only");
  double num = static_cast<double>(size_data) *
               (l.out_w * l.out_h + l.in_w * l.in_h + l.k_w * l.k_h);
  double den = 2.0 * l.k_w * l.k_h * l.out_w * l.out_h;
  return num / den;
}

/// Fully cache-resident B/F (each operand read/written once):
/// size_data*(mb*ofm*out + mb*ifm*in + ifm*ofm*k)/(2*mb*ofm*ifm*k*out).
inline double bf_fullcache(const LayerSpec& l, long minibatch,
                           long size_data = 4) {
  if (minibatch < 1) throw model_error("minibatch must be >= 1");
  if (l.is_passthrough()) return 0.0;
  double mb = static_cast<double>(minibatch);
  double num = size_data * (mb * l.ofm * l.out_w * l.out_h +
                            mb * l.ifm * l.in_w * l.in_h +
                            static_cast<double>(l.ifm) * l.ofm * l.k_w * l.k_h);
  double den = 2.0 * mb * l.ofm * l.ifm * l.k_w * l.k_h * l.out_w * l.out_h;
  return num / den;
}

struct CacheBlockPlan {
  // Block extents; kernel dims are always kept whole.
  long mb_b = 1, ifm_b = 1, ofm_b = 1, h_b = 1, w_b = 1;
  long bs_bytes = 0;       // working-set size of one block (BS)
  double traffic = 0.0;    // read traffic for the whole layer, bytes
  double flops = 0.0;      // total layer flops
  double bf = 0.0;
  bool weight_stationary = false;  // cheaper traversal order of the two

  std::array<long, 5> key() const { return {mb_b, ifm_b, ofm_b, h_b, w_b}; }
};

namespace detail {

inline std::vector<long> divisors(long n) {
  std::vector<long> d;
  for (long i = 1; i <= n; ++i)
    if (n % i == 0) d.push_back(i);
  return d;
}

inline long threads_from_env(long fallback) {
  if (const char* s = std::getenv("SGDPLAN_THREADS")) {
    long v = std::atol(s);
    if (v >= 1) return v;
  }
  return fallback;
}

}  // namespace detail

/// Read-traffic B/F of one candidate blocking, and feasibility under
/// BS < cache_bytes. Exposed so an exhaustive oracle can reuse the identical
/// cost accounting while enumerating its own candidate set.
///
/// Traffic model (memory reads; output blocks live in cache while being
/// produced, so traversing along ifm precludes re-reading them):
///   - input: each (mb_b x ifm x itile) panel is read once per ofm-block
///     sweep; traversing consecutive spatial blocks reuses the stride/kernel
///     overlap, so a whole row (or column) of tiles costs the un-tiled
///     traversal extent.
///   - weights, order A (output block stationary): re-read per spatial tile.
///   - weights, order B (weight block stationary): read once, but the output
///     row accumulators spill once per extra ifm block.
inline bool evaluate_cache_plan(const LayerSpec& l, long minibatch,
                                const CacheBlockPlan& blocks, long cache_bytes,
                                long size_data, CacheBlockPlan* out) {
  const long mb_b = blocks.mb_b, ifm_b = blocks.ifm_b, ofm_b = blocks.ofm_b;
  const long h_b = blocks.h_b, w_b = blocks.w_b;
  const long ith = h_b * l.stride + l.k_h - 1;
  const long itw = w_b * l.stride + l.k_w - 1;

  double bs = static_cast<double>(size_data) *
              (static_cast<double>(mb_b) * ofm_b * h_b * w_b +
               static_cast<double>(ifm_b) * ofm_b * l.k_h * l.k_w +
               static_cast<double>(mb_b) * ifm_b * ith * itw);
  if (bs >= static_cast<double>(cache_bytes)) return false;

  auto ceil_div = [](long a, long b) { return (a + b - 1) / b; };
  const long ni = ceil_div(l.ifm, ifm_b);
  const long no = ceil_div(l.ofm, ofm_b);
  const long nh = ceil_div(l.out_h, h_b);
  const long nw = ceil_div(l.out_w, w_b);

  // Input footprint per full spatial sweep, crediting halo reuse along the
  // contiguous traversal dimension (whichever is cheaper).
  double full_h = static_cast<double>(l.out_h) * l.stride + l.k_h - 1;
  double full_w = static_cast<double>(l.out_w) * l.stride + l.k_w - 1;
  double cov_h = (nh > 1 ? full_h : static_cast<double>(ith)) * (nw * itw);
  double cov_w = (nh * ith) * (nw > 1 ? full_w : static_cast<double>(itw));
  double cov = std::min(cov_h, cov_w);

  double mb = static_cast<double>(minibatch);
  double wts = static_cast<double>(l.ifm) * l.ofm * l.k_h * l.k_w;
  double input_reads = mb * l.ifm * cov * no;
  // Order A: outputs stationary per tile; weights re-read per spatial tile.
  double order_a = input_reads + wts * nh * nw * mb;
  // Order B: weights stationary; partial output rows spilled/reloaded once
  // per additional ifm block.
  double order_b = input_reads + wts +
                   mb * l.ofm * l.out_h * l.out_w * (ni - 1);

  double traffic = static_cast<double>(size_data) * std::min(order_a, order_b);
  double flops = 2.0 * mb * l.ifm * l.ofm * l.k_h * l.k_w * l.out_h * l.out_w;
  if (out) {
    *out = blocks;
    out->bs_bytes = static_cast<long>(bs);
    out->traffic = traffic;
    out->flops = flops;
    out->bf = traffic / flops;
    out->weight_stationary = order_b < order_a;
  }
  return true;
}

/// Brute-force search over block extents (divisors of each dimension, kernel
/// whole, ofm blocks SIMD-multiples) for the plan minimizing B/F subject to
/// BS < cache_bytes. Deterministic tie-break: lexicographically smallest
/// (mb_b, ifm_b, ofm_b, h_b, w_b). Candidate evaluation fans out across
/// threads (capped by SGDPLAN_THREADS); the merge is an associative min, so
/// the result is schedule-independent.
inline CacheBlockPlan search_cache_blocking(const LayerSpec& l, long minibatch,
                                            long cache_bytes, long sw = 8,
                                            long size_data = 4) {
  if (l.is_passthrough())
    throw model_error(l.name + ": passthrough layers have no blocking");
  if (cache_bytes <= 0) throw model_error("cache_bytes must be positive");
  if (minibatch < 1) throw model_error("minibatch must be >= 1");

  auto mb_divs = detail::divisors(minibatch);
  auto ifm_divs = detail::divisors(l.ifm);
  std::vector<long> ofm_divs;
  for (long d : detail::divisors(l.ofm))
    // one dimension (preferably output) kept a multiple of SIMD width
    if (d % sw == 0 || d == l.ofm) ofm_divs.push_back(d);
  auto h_divs = detail::divisors(l.out_h);
  auto w_divs = detail::divisors(l.out_w);

  struct Best {
    bool found = false;
    CacheBlockPlan plan;
    void consider(const CacheBlockPlan& p) {
      if (!found || p.bf < plan.bf ||
          (p.bf == plan.bf && p.key() < plan.key())) {
        plan = p;
        found = true;
      }
    }
    void merge(const Best& o) {
      if (o.found) consider(o.plan);
    }
  };

  std::vector<std::array<long, 2>> outer;
  for (long ib : ifm_divs)
    for (long ob : ofm_divs) outer.push_back({ib, ob});

  long nthreads = detail::threads_from_env(
      std::max<long>(1, std::thread::hardware_concurrency()));
  nthreads = std::min<long>(nthreads, static_cast<long>(outer.size()));

  auto worker = [&](size_t from, size_t to, Best* best) {
    CacheBlockPlan cand, scored;
    for (size_t idx = from; idx < to; ++idx) {
      cand.ifm_b = outer[idx][0];
      cand.ofm_b = outer[idx][1];
      for (long mbb : mb_divs) {
        cand.mb_b = mbb;
        for (long hb : h_divs) {
          cand.h_b = hb;
          for (long wb : w_divs) {
            cand.w_b = wb;
            if (evaluate_cache_plan(l, minibatch, cand, cache_bytes, size_data,
                                    &scored))
              best->consider(scored);
          }
        }
      }
    }
  };

  std::vector<Best> partial(static_cast<size_t>(nthreads));
  if (nthreads <= 1) {
    worker(0, outer.size(), &partial[0]);
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (outer.size() + nthreads - 1) / nthreads;
    for (long t = 0; t < nthreads; ++t) {
      size_t from = std::min(outer.size(), static_cast<size_t>(t) * chunk);
      size_t to = std::min(outer.size(), from + chunk);
      pool.emplace_back(worker, from, to, &partial[static_cast<size_t>(t)]);
    }
    for (auto& th : pool) th.join();
  }
  Best best;
  for (const auto& p : partial) best.merge(p);
  if (!best.found)
    throw model_error(l.name + ": no feasible blocking fits in " +
                      std::to_string(cache_bytes) + " bytes");
  return best.plan;
}

// ---------------------------------------------------------------------------
// Register blocking

enum class RbStrategy {
  fp_row,
  bp_row,
  wgrad_3x3_4k,
  wgrad_5x5_2k,
  wgrad_7x7_2k,
  wgrad_11x11_1d
};

inline const char* to_string(RbStrategy s) {
  switch (s) {
    case RbStrategy::fp_row: return "fp_row";
    case RbStrategy::bp_row: return "bp_row";
    case RbStrategy::wgrad_3x3_4k: return "wgrad_3x3_4k";
    case RbStrategy::wgrad_5x5_2k: return "wgrad_5x5_2k";
    case RbStrategy::wgrad_7x7_2k: return "wgrad_7x7_2k";
    case RbStrategy::wgrad_11x11_1d: return "wgrad_11x11_1d";
  }
  return "?";
}

struct RegisterBlock {
  long rb_h = 1, rb_w = 1;
  RbStrategy strategy = RbStrategy::fp_row;
  double predicted_efficiency = 0.0;
};

struct RegisterCycles {
  double fma = 0.0;       // FMA issue cycles (2 FMAs/cycle)
  double ls_loads = 0.0;  // load cycles (2 loads/cycle)
  double ls = 0.0;        // full LS count incl. the RB stores
  double efficiency = 0.0;
};

/// Cycle accounting for one register tile against a kh_n x kw_n kernel slice:
///   FMA = SW*kh_n*kw_n*RB/2
///   LS  = (RB + SW*kh_n*kw_n)/2 + RB   (loads at 2/cycle, plus RB stores)
/// Port model: loads dual-issue with FMAs but still occupy load ports, and
/// the RB stores are hidden under the tile, so
///   efficiency = FMA/(FMA + LS_loads), LS_loads = (RB + SW*kh_n*kw_n)/2.
inline RegisterCycles register_cycles(const RegisterBlock& rb, long sw,
                                      long kh_n, long kw_n) {
  if (sw < 1 || kh_n < 1 || kw_n < 1 || rb.rb_h < 1 || rb.rb_w < 1)
    throw model_error("register_cycles: extents must be positive");
  double RB = static_cast<double>(rb.rb_h) * rb.rb_w;
  double slice = static_cast<double>(sw) * kh_n * kw_n;
  RegisterCycles c;
  c.fma = slice * RB / 2.0;
  c.ls_loads = (RB + slice) / 2.0;
  c.ls = c.ls_loads + RB;
  c.efficiency = c.fma / (c.fma + c.ls_loads);
  return c;
}

inline double register_efficiency(const RegisterBlock& rb, long sw, long kh_n,
                                  long kw_n) {
  return register_cycles(rb, sw, kh_n, kw_n).efficiency;
}

namespace detail {

// Widest tile width in [10, min(15, cols)] minimizing the remainder cols %
// w; ties go to the wider tile.
inline long pick_rb_w(long cols) {
  long best = -1, best_rem = std::numeric_limits<long>::max();
  for (long w = 10; w <= std::min<long>(15, cols); ++w) {
    long rem = cols % w;
    if (rem < best_rem || (rem == best_rem && w > best)) {
      best = w;
      best_rem = rem;
    }
  }
  return best;
}

}  // namespace detail

/// Pick a register block for one pass of a layer. fp/bp: one output/input
/// row, RB_h*RB_w in [10, 15] (RB_h = 1 whenever the row is wide enough);
/// wgrad: strategy by kernel size. fc layers block along output columns.
inline RegisterBlock select_register_block(const LayerSpec& l, Pass pass,
                                           long sw = 8) {
  if (l.is_passthrough())
    throw model_error(l.name + ": passthrough layers have no register block");
  RegisterBlock rb;
  long kh_n = 1, kw_n = l.is_fc() ? 1 : l.k_w;  // one kernel row per inner loop
  if (pass == Pass::WeightGrad && l.is_conv()) {
    // kernels-per-tile chosen so the tile lands in [10, 15]
    if (l.k_w <= 3) {
      rb.strategy = RbStrategy::wgrad_3x3_4k;
      rb.rb_h = 4;  // 4 consecutive kernels
      rb.rb_w = l.k_w;
    } else if (l.k_w <= 5) {
      rb.strategy = RbStrategy::wgrad_5x5_2k;
      rb.rb_h = 2;
      rb.rb_w = l.k_w;
    } else if (l.k_w <= 7) {
      rb.strategy = RbStrategy::wgrad_7x7_2k;
      rb.rb_h = 2;
      rb.rb_w = l.k_w;
    } else {
      rb.strategy = RbStrategy::wgrad_11x11_1d;
      rb.rb_h = 1;
      rb.rb_w = l.k_w;
    }
    kw_n = 1;  // wgrad tiles span kernels, the slice is one element deep
  } else {
    rb.strategy = (pass == Pass::Backward) ? RbStrategy::bp_row
                                           : RbStrategy::fp_row;
    long cols = l.is_fc() ? 12  // fc: tile of output columns
                          : (pass == Pass::Backward ? l.in_w : l.out_w);
    if (cols >= 10) {
      rb.rb_h = 1;
      rb.rb_w = detail::pick_rb_w(cols);
    } else {
      rb.rb_w = cols;
      rb.rb_h = std::min((10 + cols - 1) / cols, 15 / cols);
    }
  }
  rb.predicted_efficiency = register_efficiency(rb, sw, kh_n, kw_n);
  return rb;
}

// ---------------------------------------------------------------------------
// Thread-level work partitioning

struct JobPartition {
  long total_jobs = 0;
  std::vector<long> per_thread;     // max - min <= 1
  bool privatized_reduction = false;
};

/// fp/bp: one job per output/input row across SW features per data point;
/// wgrad: one job per (SW ifm) x (SW ofm) kernel block, split further along
/// the minibatch (with privatized partial reductions) when that leaves
/// threads idle.
inline JobPartition partition_jobs(const LayerSpec& l, long threads, Pass pass,
                                   long minibatch, long sw = 8) {
  if (threads < 1) throw model_error("threads must be >= 1");
  if (minibatch < 1) throw model_error("minibatch must be >= 1");
  auto ceil_div = [](long a, long b) { return (a + b - 1) / b; };
  JobPartition jp;
  if (l.is_passthrough()) {
    jp.total_jobs = 0;
    jp.per_thread.assign(static_cast<size_t>(threads), 0);
    return jp;
  }
  switch (pass) {
    case Pass::Forward:
      jp.total_jobs = minibatch * ceil_div(l.ofm, sw) * l.out_h;
      break;
    case Pass::Backward:
      jp.total_jobs = minibatch * ceil_div(l.ifm, sw) * l.in_h;
      break;
    case Pass::WeightGrad:
      jp.total_jobs = ceil_div(l.ifm, sw) * ceil_div(l.ofm, sw);
      if (jp.total_jobs < threads) {
        jp.total_jobs *= minibatch;
        jp.privatized_reduction = true;
      }
      break;
  }
  jp.per_thread.assign(static_cast<size_t>(threads), jp.total_jobs / threads);
  long rem = jp.total_jobs % threads;
  for (long t = 0; t < rem; ++t) ++jp.per_thread[static_cast<size_t>(t)];
  return jp;
}

}  // namespace sgdplan
