#pragma once

// Per-iteration timeline simulation with compute/communication overlap, node
// scaling curves, and an executable multi-worker synchronous-SGD equivalence
// verifier.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "blocking.hpp"
#include "comm.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace sgdplan {

enum class Phase { FP, WU, BP, COMM_WG, COMM_WT, COMM_ACT };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::FP: return "FP";
    case Phase::WU: return "WU";
    case Phase::BP: return "BP";
    case Phase::COMM_WG: return "COMM_WG";
    case Phase::COMM_WT: return "COMM_WT";
    case Phase::COMM_ACT: return "COMM_ACT";
  }
  return "?";
}

enum class Resource { Compute, Fabric };

struct TimelineEvent {
  std::string layer;
  Phase phase = Phase::FP;
  double start = 0.0, end = 0.0;
  Resource resource = Resource::Compute;
};

struct IterationTimeline {
  std::vector<TimelineEvent> events;
  double iteration_time = 0.0;   // steady-state period
  double compute_busy = 0.0;     // sum of compute-event durations
  double fabric_busy = 0.0;      // sum of fabric-event durations
  double bubble_seconds = 0.0;   // period - compute_busy
  double efficiency = 1.0;       // compute_busy / period
  double images_per_s = 0.0;
};

namespace detail {

inline double pass_seconds(const LayerSpec& l, long minibatch, long N, Pass p,
                           const HardwareSpec& hw) {
  if (l.is_passthrough()) return 0.0;
  double eff = select_register_block(l, p, hw.simd_width).predicted_efficiency;
  // Every mode splits the layer's total flops evenly across the N nodes.
  return layer_flops(l, minibatch, {p}) / (N * eff * hw.comp_sys);
}

}  // namespace detail

/// Discrete-event schedule of one training iteration. Compute runs FP(0..k)
/// then, for i = k..0, WU(i) before BP(i) (layer 0 skips BP). Collectives are
/// submitted to a single FIFO fabric resource: weight-gradient part-reduce as
/// soon as WU(i) ends, followed by the weight part-broadcast; model-parallel
/// activation exchanges block the compute stream. The steady-state period is
/// limited by the compute makespan, the fabric makespan, and the requirement
/// that layer i's updated weights arrive before its next-iteration FP.
inline IterationTimeline simulate_iteration(
    const TopologySpec& t, const HardwareSpec& hw,
    const std::vector<ParallelismChoice>& plan, long N, long minibatch) {
  if (N < 1) throw model_error("N must be >= 1");
  if (plan.size() != t.layers.size())
    throw model_error("plan does not cover the topology");
  if (minibatch % N != 0)
    throw model_error("minibatch must be divisible by the node count");
  for (const auto& c : plan)
    if (c.G < 1 || c.G > N || N % c.G != 0)
      throw model_error(c.layer + ": G must divide N");

  FabricModel fabric = fabric_from_hw(hw);
  IterationTimeline tl;
  const size_t K = t.layers.size();
  double tc = 0.0, tf = 0.0;
  std::vector<double> fp_start(K, 0.0), wt_end(K, 0.0);

  auto push = [&](const std::string& layer, Phase ph, double start,
                  double dur, Resource res) -> double {
    if (dur <= 0.0) return start;
    tl.events.push_back({layer, ph, start, start + dur, res});
    if (res == Resource::Compute)
      tl.compute_busy += dur;
    else
      tl.fabric_busy += dur;
    return start + dur;
  };

  // forward sweep
  for (size_t i = 0; i < K; ++i) {
    const LayerSpec& l = t.layers[i];
    const ParallelismChoice& c = plan[i];
    long P = N / c.G;  // model-parallel width inside one group
    if (P > 1 && !l.is_passthrough()) {
      // gather inputs / scatter outputs inside the group; blocks compute
      double half = static_cast<double>(hw.size_data) * l.ifm * l.in_h *
                    l.in_w * (static_cast<double>(minibatch) / c.G);
      double dur =
          collective_time({CollectiveKind::PartBroadcast, P, half,
                           CollectiveAlg::Ring}, fabric) +
          collective_time({CollectiveKind::PartReduce, P, half,
                           CollectiveAlg::Ring}, fabric);
      double start = std::max(tc, tf);
      tf = push(l.name, Phase::COMM_ACT, start, dur, Resource::Fabric);
      tc = std::max(tc, tf);
    }
    fp_start[i] = tc;
    tc = push(l.name, Phase::FP, tc,
              detail::pass_seconds(l, minibatch, N, Pass::Forward, hw),
              Resource::Compute);
  }

  // backward sweep: WU before BP, gradients queued on the fabric FIFO
  for (size_t r = 0; r < K; ++r) {
    size_t i = K - 1 - r;
    const LayerSpec& l = t.layers[i];
    const ParallelismChoice& c = plan[i];
    tc = push(l.name, Phase::WU, tc,
              detail::pass_seconds(l, minibatch, N, Pass::WeightGrad, hw),
              Resource::Compute);
    double wu_end = tc;
    if (c.G > 1 && !l.is_passthrough()) {
      // reduce weight gradients across the G data-parallel groups, then
      // broadcast updated weights; each node carries a 1/P weight shard
      long P = N / c.G;
      double bytes = static_cast<double>(hw.size_data) * l.weight_elems() / P;
      double wg_dur = collective_time(
          {CollectiveKind::PartReduce, c.G, bytes, CollectiveAlg::Ring},
          fabric);
      double wt_dur = collective_time(
          {CollectiveKind::PartBroadcast, c.G, bytes, CollectiveAlg::Ring},
          fabric);
      tf = push(l.name, Phase::COMM_WG, std::max(tf, wu_end), wg_dur,
                Resource::Fabric);
      tf = push(l.name, Phase::COMM_WT, tf, wt_dur, Resource::Fabric);
      wt_end[i] = tf;
    }
    if (i != 0 && !l.is_passthrough())
      tc = push(l.name, Phase::BP, tc,
                detail::pass_seconds(l, minibatch, N, Pass::Backward, hw),
                Resource::Compute);
  }

  double period = std::max(tc, tf);
  for (size_t i = 0; i < K; ++i)
    period = std::max(period, wt_end[i] - fp_start[i]);
  tl.iteration_time = period;
  tl.bubble_seconds = period - tl.compute_busy;
  tl.efficiency = period > 0 ? tl.compute_busy / period : 1.0;
  tl.images_per_s = period > 0 ? minibatch / period : 0.0;
  return tl;
}

struct ScalingCurve {
  std::vector<long> nodes;
  std::vector<double> images_per_s;
  std::vector<double> speedup;     // vs 1 node
  std::vector<double> efficiency;  // speedup / nodes
};

/// Map simulate_iteration over node counts (plans derived per node count).
inline ScalingCurve scaling_curve(const TopologySpec& t,
                                  const HardwareSpec& hw,
                                  const std::vector<long>& node_counts,
                                  long minibatch) {
  ScalingCurve sc;
  auto throughput = [&](long n) {
    auto plan = plan_topology(t, hw, n, minibatch);
    return simulate_iteration(t, hw, plan, n, minibatch).images_per_s;
  };
  double base = throughput(1);
  for (long n : node_counts) {
    double ips = (n == 1) ? base : throughput(n);
    sc.nodes.push_back(n);
    sc.images_per_s.push_back(ips);
    sc.speedup.push_back(ips / base);
    sc.efficiency.push_back(ips / base / n);
  }
  return sc;
}

// ---------------------------------------------------------------------------
// Distributed synchronous-SGD equivalence verifier

struct SgdVerifyResult {
  double deviation_ordered = 0.0;  // vs the order-matched serial oracle
  double deviation_natural = 0.0;  // vs natural-order serial SGD
};

/// Default tiny verification network.
inline TopologySpec make_tiny_mlp() {
  TopologySpec t;
  t.name = "tiny-mlp";
  t.default_minibatch = 8;
  t.layers = {detail::fc("h1", 16, 32), detail::fc("h2", 32, 32),
              detail::fc("out", 32, 8)};
  return t;
}

namespace detail {

struct MlpGrads {
  std::vector<std::vector<float>> gw;  // per layer, [ofm][ifm] row-major
};

// Forward one sample; per output neuron the inner sum runs over inputs in
// ascending order (identical arithmetic in serial and sharded execution).
inline std::vector<std::vector<float>> mlp_forward(
    const std::vector<std::vector<float>>& W, const TopologySpec& t,
    const std::vector<float>& x) {
  std::vector<std::vector<float>> acts{x};
  for (size_t li = 0; li < t.layers.size(); ++li) {
    const LayerSpec& l = t.layers[li];
    std::vector<float> y(static_cast<size_t>(l.ofm), 0.0f);
    for (long o = 0; o < l.ofm; ++o) {
      float s = 0.0f;
      for (long i = 0; i < l.ifm; ++i)
        s += W[li][static_cast<size_t>(o * l.ifm + i)] *
             acts.back()[static_cast<size_t>(i)];
      y[static_cast<size_t>(o)] = s;
    }
    acts.push_back(std::move(y));
  }
  return acts;
}

}  // namespace detail

/// Run `steps` iterations of plain SGD (w <- w - lr/mb * grad, squared loss,
/// linear layers) three ways over identical synthetic data: natural-order
/// serial, hybrid-parallel with N workers in G groups (data-parallel across
/// groups, model-parallel row shards within; gradients combined via
/// part_reduce/part_broadcast in ascending id order), and an order-matched
/// serial oracle that reassociates its sums exactly like the collectives.
/// Returns max |w_dist - w_serial| / (|w_serial| + eps) for both oracles; the
/// order-matched deviation must be exactly 0.
inline SgdVerifyResult verify_distributed_sgd(const TopologySpec& t, long N,
                                              long G, long steps, float lr,
                                              unsigned seed) {
  if (N < 1 || G < 1 || G > N || N % G != 0)
    throw model_error("need 1 <= G <= N with G dividing N");
  const long P = N / G;
  const long mb = t.default_minibatch;
  if (mb % G != 0) throw model_error("minibatch not divisible by G");
  const size_t L = t.layers.size();
  for (const auto& l : t.layers) {
    if (!l.is_fc()) throw model_error("verifier supports fc-only topologies");
    if (l.ofm % P != 0)
      throw model_error(l.name + ": width not divisible by group width");
  }

  // synthetic weights and data, shared by all three runs
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
  std::vector<std::vector<float>> W0(L);
  for (size_t li = 0; li < L; ++li) {
    W0[li].resize(static_cast<size_t>(t.layers[li].weight_elems()));
    for (auto& w : W0[li]) w = dist(rng);
  }
  const long in0 = t.layers.front().ifm, outL = t.layers.back().ofm;
  std::vector<std::vector<std::vector<float>>> X(steps), T(steps);
  for (long s = 0; s < steps; ++s) {
    X[s].resize(static_cast<size_t>(mb));
    T[s].resize(static_cast<size_t>(mb));
    for (long m = 0; m < mb; ++m) {
      X[s][m].resize(static_cast<size_t>(in0));
      for (auto& v : X[s][m]) v = dist(rng);
      T[s][m].resize(static_cast<size_t>(outL));
      for (auto& v : T[s][m]) v = dist(rng);
    }
  }

  // Per-sample backward: grad_x = W^T grad_y, grad_W += grad_y x^T.
  // `shards` = 1 gives natural o-ascending accumulation; > 1 reassociates
  // grad_x as (per-shard partials, then shard-ascending sum) like part_reduce.
  auto backward_sample = [&](const std::vector<std::vector<float>>& W,
                             const std::vector<std::vector<float>>& acts,
                             const std::vector<float>& target, long shards,
                             detail::MlpGrads& g) {
    std::vector<float> gy(acts.back().size());
    for (size_t e = 0; e < gy.size(); ++e) gy[e] = acts.back()[e] - target[e];
    for (size_t r = 0; r < L; ++r) {
      size_t li = L - 1 - r;
      const LayerSpec& l = t.layers[li];
      const std::vector<float>& x = acts[li];
      for (long o = 0; o < l.ofm; ++o)
        for (long i = 0; i < l.ifm; ++i)
          g.gw[li][static_cast<size_t>(o * l.ifm + i)] +=
              gy[static_cast<size_t>(o)] * x[static_cast<size_t>(i)];
      if (li == 0) break;
      std::vector<float> gx(static_cast<size_t>(l.ifm), 0.0f);
      long rows = l.ofm / shards;
      std::vector<std::vector<float>> partials(static_cast<size_t>(shards));
      for (long p = 0; p < shards; ++p) {
        partials[static_cast<size_t>(p)].assign(static_cast<size_t>(l.ifm),
                                                0.0f);
        for (long o = p * rows; o < (p + 1) * rows; ++o)
          for (long i = 0; i < l.ifm; ++i)
            partials[static_cast<size_t>(p)][static_cast<size_t>(i)] +=
                W[li][static_cast<size_t>(o * l.ifm + i)] *
                gy[static_cast<size_t>(o)];
      }
      auto reduced = part_reduce(partials);
      gx = part_broadcast(reduced, static_cast<size_t>(l.ifm));
      gy = std::move(gx);
    }
  };

  // One SGD run. `groups` chunks the minibatch (chunk partials summed in
  // ascending group order via part_reduce); `shards` reassociates grad_x.
  auto run = [&](long groups, long shards) {
    std::vector<std::vector<float>> W = W0;
    const long chunk = mb / groups;
    for (long s = 0; s < steps; ++s) {
      // per-group gradient partials, samples accumulated in order
      std::vector<detail::MlpGrads> gg(static_cast<size_t>(groups));
      for (long g = 0; g < groups; ++g) {
        gg[static_cast<size_t>(g)].gw.resize(L);
        for (size_t li = 0; li < L; ++li)
          gg[static_cast<size_t>(g)].gw[li].assign(W[li].size(), 0.0f);
        for (long m = g * chunk; m < (g + 1) * chunk; ++m) {
          auto acts = detail::mlp_forward(W, t, X[s][static_cast<size_t>(m)]);
          backward_sample(W, acts, T[s][static_cast<size_t>(m)], shards,
                          gg[static_cast<size_t>(g)]);
        }
      }
      for (size_t li = 0; li < L; ++li) {
        std::vector<std::vector<float>> partials(static_cast<size_t>(groups));
        for (long g = 0; g < groups; ++g)
          partials[static_cast<size_t>(g)] = gg[static_cast<size_t>(g)].gw[li];
        auto total =
            part_broadcast(part_reduce(partials), W[li].size());
        for (size_t e = 0; e < W[li].size(); ++e)
          W[li][e] -= lr / static_cast<float>(mb) * total[e];
      }
    }
    return W;
  };

  // Hybrid-parallel execution with logical workers: every group keeps a
  // weight replica; within a group node p owns rows [p*rows, (p+1)*rows) of
  // every layer and computes only those; activations/input-gradients are
  // assembled with part_broadcast/part_reduce inside the group, and weight
  // gradients are part_reduce'd across groups shard by shard.
  auto run_distributed = [&]() {
    std::vector<std::vector<std::vector<float>>> Wg(static_cast<size_t>(G),
                                                    W0);
    std::vector<detail::MlpGrads> gg(static_cast<size_t>(G));
    const long chunk = mb / G;
    for (long s = 0; s < steps; ++s) {
      for (long g = 0; g < G; ++g) {
        gg[static_cast<size_t>(g)].gw.resize(L);
        for (size_t li = 0; li < L; ++li)
          gg[static_cast<size_t>(g)].gw[li].assign(W0[li].size(), 0.0f);
        for (long m = g * chunk; m < (g + 1) * chunk; ++m) {
          const auto& W = Wg[static_cast<size_t>(g)];
          // forward: node p produces its row strip, group gathers them
          std::vector<std::vector<float>> acts{X[s][static_cast<size_t>(m)]};
          for (size_t li = 0; li < L; ++li) {
            const LayerSpec& l = t.layers[li];
            long rows = l.ofm / P;
            std::vector<std::vector<float>> strips(static_cast<size_t>(P));
            for (long p = 0; p < P; ++p) {
              auto& y = strips[static_cast<size_t>(p)];
              y.assign(static_cast<size_t>(rows), 0.0f);
              for (long o = p * rows; o < (p + 1) * rows; ++o) {
                float acc = 0.0f;
                for (long i = 0; i < l.ifm; ++i)
                  acc += W[li][static_cast<size_t>(o * l.ifm + i)] *
                         acts.back()[static_cast<size_t>(i)];
                y[static_cast<size_t>(o - p * rows)] = acc;
              }
            }
            acts.push_back(
                part_broadcast(strips, static_cast<size_t>(l.ofm)));
          }
          backward_sample(W, acts, T[s][static_cast<size_t>(m)], P,
                          gg[static_cast<size_t>(g)]);
        }
      }
      // cross-group allreduce per node shard, then local update
      for (size_t li = 0; li < L; ++li) {
        const LayerSpec& l = t.layers[li];
        long rows = l.ofm / P;
        size_t strip = static_cast<size_t>(rows * l.ifm);
        for (long p = 0; p < P; ++p) {
          std::vector<std::vector<float>> partials(static_cast<size_t>(G));
          for (long g = 0; g < G; ++g) {
            auto& src = gg[static_cast<size_t>(g)].gw[li];
            partials[static_cast<size_t>(g)].assign(
                src.begin() + static_cast<long>(strip) * p,
                src.begin() + static_cast<long>(strip) * (p + 1));
          }
          auto total = part_broadcast(part_reduce(partials), strip);
          for (long g = 0; g < G; ++g)
            for (size_t e = 0; e < strip; ++e)
              Wg[static_cast<size_t>(g)][li][strip * p + e] -=
                  lr / static_cast<float>(mb) * total[e];
        }
      }
    }
    // all replicas must agree bit-for-bit
    for (long g = 1; g < G; ++g)
      if (Wg[static_cast<size_t>(g)] != Wg[0])
        throw model_error("weight replicas diverged across groups");
    return Wg[0];
  };

  auto W_natural = run(1, 1);
  auto W_matched = run(G, P);  // serial, reassociated like the collectives
  auto W_dist = run_distributed();

  SgdVerifyResult res;
  auto dev = [&](const std::vector<std::vector<float>>& A,
                 const std::vector<std::vector<float>>& B) {
    double worst = 0.0;
    for (size_t li = 0; li < L; ++li)
      for (size_t e = 0; e < A[li].size(); ++e) {
        double d = std::abs(static_cast<double>(A[li][e]) - B[li][e]) /
                   (std::abs(static_cast<double>(B[li][e])) + 1e-12);
        worst = std::max(worst, d);
      }
    return worst;
  };
  res.deviation_ordered = dev(W_dist, W_matched);
  res.deviation_natural = dev(W_dist, W_natural);
  return res;
}

}  // namespace sgdplan
