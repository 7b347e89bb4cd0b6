#pragma once

// Analytic comparison and selection of data, model, and hybrid parallelism
// per layer; overlap ("bubble") analysis; node-count bounds; optimal hybrid
// group counts.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "model.hpp"

namespace sgdplan {

enum class ParallelMode { Data, Model, Hybrid };

inline const char* to_string(ParallelMode m) {
  switch (m) {
    case ParallelMode::Data: return "data";
    case ParallelMode::Model: return "model";
    case ParallelMode::Hybrid: return "hybrid";
  }
  return "?";
}

struct ParallelismChoice {
  std::string layer;
  ParallelMode mode = ParallelMode::Data;
  long G = 1;           // groups: data-parallel across, model-parallel within
  long mb_group = 0;    // minibatch per group
  double volume = 0.0;  // predicted comm bytes per node per iteration
  double overlap = 1.0;
  double comp_comm_ratio = 0.0;  // flops per byte, data-parallel view
};

/// Data-parallel per-layer weight-gradient traffic:
/// size_data*ifm*ofm*k_w*k_h*(2-overlap) bytes.
inline double dp_comm_volume(const LayerSpec& l, double overlap,
                             long size_data = 4) {
  if (overlap < 0.0 || overlap > 1.0)
    throw model_error("overlap must lie in [0, 1]");
  if (l.is_passthrough()) return 0.0;
  return static_cast<double>(size_data) * l.ifm * l.ofm * l.k_w * l.k_h *
         (2.0 - overlap);
}

/// Per-layer compute-to-communication ratio (flops/byte) under overlap = 1,
/// FP32: 1.5*out_w*out_h*MB_node. Independent of ifm/ofm/kernel/stride.
inline double dp_comp_comm_ratio(const LayerSpec& l, long mb_node) {
  if (mb_node < 1) throw model_error("mb_node must be >= 1");
  if (l.is_passthrough()) return 0.0;
  return 1.5 * l.out_w * l.out_h * mb_node;
}

namespace detail {

// Flops of layer j for bubble accounting: the first conv layer skips
// backpropagation, everything else runs all three passes.
inline double bubble_comp(const TopologySpec& t, size_t j, long mb_node) {
  if (j == 0)
    return layer_flops(t.layers[j], mb_node,
                       {Pass::Forward, Pass::WeightGrad});
  return layer_flops_all(t.layers[j], mb_node);
}

}  // namespace detail

struct BubbleReport {
  std::vector<std::string> layer;
  std::vector<double> ocomp;    // flops overlappable with layer i's comm
  std::vector<double> ocomms;   // bytes outstanding once layer i's comm starts
  std::vector<double> bubble;   // seconds; > 0 means communication-bound
  double scaling_efficiency = 1.0;
  long min_mb_node = 1;
  long max_nodes = 1;
};

/// Prefix-sum overlap analysis over the data-parallel (conv) prefix of the
/// topology. Communication of layer i (weight gradients, issued right after
/// its wgrad pass) can hide under the remaining backward work plus the next
/// forward sweep: ocomp_i = sum_{j<i} comp_j + comp_i/3,
/// ocomms_i = sum_{j<=i} comms_j, bubble_i = ocomms_i/comms_sys -
/// ocomp_i/comp_sys. Layers are indexed from the network input; wgrad runs
/// before backprop, and the first layer performs no backprop.
inline BubbleReport dp_bubble_analysis(const TopologySpec& t,
                                       const HardwareSpec& hw, long mb_node,
                                       double overlap = 1.0) {
  long k = t.last_conv_index();
  if (k < 0) throw model_error(t.name + ": no conv prefix to analyze");
  if (mb_node < 1) throw model_error("mb_node must be >= 1");
  BubbleReport r;
  double comp_prefix = 0.0, comms_prefix = 0.0, bubble_sum = 0.0;
  for (long i = 0; i <= k; ++i) {
    const LayerSpec& l = t.layers[static_cast<size_t>(i)];
    double comp_i = detail::bubble_comp(t, static_cast<size_t>(i), mb_node);
    comms_prefix += dp_comm_volume(l, overlap, hw.size_data);
    double ocomp = comp_prefix + comp_i / 3.0;
    comp_prefix += comp_i;
    r.layer.push_back(l.name);
    r.ocomp.push_back(ocomp);
    r.ocomms.push_back(comms_prefix);
    double b = comms_prefix / hw.comms_sys - ocomp / hw.comp_sys;
    r.bubble.push_back(b);
    bubble_sum += std::max(b, 0.0);
  }
  double comp_time = comp_prefix / hw.comp_sys;
  r.scaling_efficiency = comp_time / (bubble_sum + comp_time);
  return r;
}

/// Smallest per-node minibatch admitting full overlap, and the node count it
/// allows for a given global minibatch.
///
/// The node bound N <= minibatch*(comms_sys/comp_sys)*(ocomp_k/ocomms_k) is
/// solved self-consistently: with N nodes each holds mb/N data points and
/// ocomp_k scales with it, giving mb_node >= sqrt((comp_sys/comms_sys) /
/// (ocomp_k/ocomms_k at mb_node = 1)).
inline std::pair<long, long> dp_max_nodes(const TopologySpec& t,
                                          const HardwareSpec& hw,
                                          long minibatch,
                                          double overlap = 1.0) {
  BubbleReport r1 = dp_bubble_analysis(t, hw, 1, overlap);
  double ratio_layer = r1.ocomp.back() / r1.ocomms.back();  // flops per byte
  double ratio_sys = hw.comp_sys / hw.comms_sys;
  long mb_node = static_cast<long>(std::ceil(
      std::sqrt(ratio_sys / ratio_layer) - 1e-9));
  mb_node = std::max<long>(1, std::min(mb_node, minibatch));
  long nodes = (minibatch + mb_node - 1) / mb_node;
  return {mb_node, nodes};
}

/// Aggregate compute-to-communication ratio over the conv prefix, as seen by
/// the last conv layer's communication window: (sum_{j<k} comp_j + comp_k/3)
/// / sum_{j<=k} comms_j, with all three passes counted for every layer.
inline double dp_aggregate_ratio(const TopologySpec& t, long mb_node,
                                 double overlap = 1.0, long size_data = 4) {
  long k = t.last_conv_index();
  if (k < 0) throw model_error(t.name + ": no conv layers");
  double comp = 0.0, comms = 0.0;
  for (long j = 0; j <= k; ++j) {
    const LayerSpec& l = t.layers[static_cast<size_t>(j)];
    double c = layer_flops_all(l, mb_node);
    comp += (j == k) ? c / 3.0 : c;
    comms += dp_comm_volume(l, overlap, size_data);
  }
  return comp / comms;
}

/// Model-parallel forward time for one layer split `parts` ways:
/// comp/comp_sys + (recv+send)/comms_sys + SWlat, no overlap. Each node
/// receives every other node's input strip and broadcasts its own once, so
/// recv+send totals size_data*ifm*in_w*in_h*mb independent of parts.
inline double mp_forward_time(const LayerSpec& l, const HardwareSpec& hw,
                              long minibatch, long parts) {
  if (parts < 1 || l.ifm % parts != 0 || l.ofm % parts != 0)
    throw model_error(l.name + ": parts must divide ifm and ofm");
  double ifm_b = static_cast<double>(l.ifm) / parts;
  double ofm_b = static_cast<double>(l.ofm) / parts;
  double comp =
      2.0 * ifm_b * ofm_b * l.k_w * l.k_h * l.out_w * l.out_h * minibatch;
  double strip =
      static_cast<double>(hw.size_data) * ifm_b * l.in_w * l.in_h * minibatch;
  double recv = strip * (parts - 1);
  double send = strip;
  return comp / hw.comp_sys + (recv + send) / hw.comms_sys + hw.sw_overhead;
}

/// Model parallelism beats data parallelism when
/// ofm*k_w*k_h*(2-overlap) > in_w*in_h*minibatch.
inline ParallelMode model_vs_data(const LayerSpec& l, long minibatch,
                                  double overlap) {
  double lhs = static_cast<double>(l.ofm) * l.k_w * l.k_h * (2.0 - overlap);
  double rhs = static_cast<double>(l.in_w) * l.in_h * minibatch;
  return lhs > rhs ? ParallelMode::Model : ParallelMode::Data;
}

/// Hybrid communication volume for G groups of N/G nodes:
///   G = 1: 2*size_data*ifm*in_w*in_h*minibatch (pure model parallel)
///   G > 1: 2*size_data*ifm*in_w*in_h*mb_group
///          + size_data*ofm*ifm*k_w*k_h*(2-overlap)*G/N.
inline double hybrid_comm_volume(const LayerSpec& l, long G, long N,
                                 long minibatch, double overlap,
                                 long size_data = 4) {
  if (G < 1 || G > N || N % G != 0)
    throw model_error("G must divide N and lie in [1, N]");
  double act = 2.0 * size_data * l.ifm * l.in_w * l.in_h;
  if (G == 1) return act * minibatch;
  double mb_group = static_cast<double>(minibatch) / G;
  double wts = static_cast<double>(size_data) * l.ofm * l.ifm * l.k_w * l.k_h *
               (2.0 - overlap) * G / N;
  return act * mb_group + wts;
}

struct GroupChoice {
  long G = 1;
  double volume = 0.0;
  double continuous_optimum = 1.0;  // sqrt(N*minibatch/ofm)
};

/// Integer argmin of hybrid_comm_volume over divisors of N (the continuous
/// optimum is sqrt(N*mb/ofm)). Ties resolve to the larger G, i.e. toward the
/// more data-parallel configuration, which wastes no model-parallel latency
/// for equal volume.
inline GroupChoice optimal_group_count(const LayerSpec& l, long N,
                                       long minibatch, double overlap,
                                       long size_data = 4) {
  if (N < 1) throw model_error("N must be >= 1");
  GroupChoice best;
  best.continuous_optimum =
      std::sqrt(static_cast<double>(N) * minibatch / l.ofm);
  bool found = false;
  for (long g = 1; g <= N; ++g) {
    if (N % g != 0) continue;
    double v = hybrid_comm_volume(l, g, N, minibatch, overlap, size_data);
    if (!found || v < best.volume || (v == best.volume && g > best.G)) {
      best.G = g;
      best.volume = v;
      found = true;
    }
  }
  return best;
}

/// Per-layer parallelism plan: conv layers run data-parallel (their
/// weight-gradient reductions hide under the bubble-analysis window), fc
/// layers run hybrid with the optimal group count.
inline std::vector<ParallelismChoice> plan_topology(const TopologySpec& t,
                                                    const HardwareSpec& hw,
                                                    long N, long minibatch) {
  if (N < 1) throw model_error("N must be >= 1");
  std::vector<ParallelismChoice> plan;
  for (const auto& l : t.layers) {
    ParallelismChoice c;
    c.layer = l.name;
    if (N == 1 || l.is_conv() || l.is_passthrough()) {
      c.mode = ParallelMode::Data;
      c.G = N;
      c.mb_group = minibatch / N;
      c.overlap = 1.0;
      c.volume = (N == 1) ? 0.0 : dp_comm_volume(l, c.overlap, hw.size_data);
      c.comp_comm_ratio = dp_comp_comm_ratio(l, std::max<long>(1, c.mb_group));
    } else {
      GroupChoice g = optimal_group_count(l, N, minibatch, 0.0, hw.size_data);
      c.mode = (g.G == N) ? ParallelMode::Data
                          : (g.G == 1 ? ParallelMode::Model
                                      : ParallelMode::Hybrid);
      c.G = g.G;
      c.mb_group = minibatch / g.G;
      c.overlap = 0.0;
      c.volume = g.volume;
      c.comp_comm_ratio = dp_comp_comm_ratio(l, std::max<long>(1, minibatch / N));
    }
    plan.push_back(c);
  }
  return plan;
}

}  // namespace sgdplan
