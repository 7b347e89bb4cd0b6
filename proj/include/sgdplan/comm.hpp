#pragma once

// Cost models and executable shard semantics for the two collective
// primitives: part-reduce (reduce-scatter pattern) and part-broadcast
// (all-gather pattern). Reduction order is fixed to ascending node id so
// distributed results are deterministic and bit-comparable against a serial
// oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"

namespace sgdplan {

enum class CollectiveKind { PartReduce, PartBroadcast };
enum class CollectiveAlg { Ring, Butterfly };

struct CollectiveSpec {
  CollectiveKind kind = CollectiveKind::PartReduce;
  long group_size = 1;
  double bytes = 0.0;  // total payload
  CollectiveAlg alg = CollectiveAlg::Ring;
};

struct FabricModel {
  double bandwidth = 1.0;   // bytes/s
  double latency = 0.0;     // s per message
  double sw_overhead = 0.0; // s per transfer
  // Optional message-size-dependent bandwidth: (min message bytes ->
  // effective bytes/s), effective bandwidth nondecreasing in message size.
  std::vector<std::pair<double, double>> bw_table;

  double effective_bw(double msg_bytes) const {
    double bw = bandwidth;
    for (const auto& [sz, b] : bw_table)
      if (msg_bytes >= sz) bw = b;
    return bw;
  }

  void validate() const {
    if (bandwidth <= 0 || latency < 0 || sw_overhead < 0)
      throw model_error("fabric parameters out of range");
    double prev_sz = -1, prev_bw = 0;
    for (const auto& [sz, b] : bw_table) {
      if (sz < prev_sz || b < prev_bw)
        throw model_error("bandwidth table must be nondecreasing");
      prev_sz = sz;
      prev_bw = b;
    }
  }
};

inline FabricModel fabric_from_hw(const HardwareSpec& hw) {
  FabricModel f;
  f.bandwidth = hw.comms_sys;
  f.latency = hw.latency;
  f.sw_overhead = hw.sw_overhead;
  return f;
}

/// Time for one collective. Ring: P-1 steps moving bytes/P each; butterfly:
/// log2(P) steps of halving (part-reduce) or doubling (part-broadcast)
/// payloads. Per-step cost = payload/bw(payload) + latency + sw_overhead.
inline double collective_time(const CollectiveSpec& spec,
                              const FabricModel& fabric) {
  fabric.validate();
  if (spec.group_size < 1) throw model_error("group size must be >= 1");
  if (spec.bytes < 0) throw model_error("negative payload");
  const long P = spec.group_size;
  if (P == 1) return 0.0;
  double t = 0.0;
  if (spec.alg == CollectiveAlg::Ring) {
    double msg = spec.bytes / P;
    t = (P - 1) * (msg / fabric.effective_bw(msg) + fabric.latency +
                   fabric.sw_overhead);
  } else {
    if ((P & (P - 1)) != 0)
      throw model_error(
          "butterfly requires a power-of-two group; use the ring algorithm");
    long stages = 0;
    for (long p = P; p > 1; p >>= 1) ++stages;
    for (long s = 0; s < stages; ++s) {
      // halving: bytes/2, bytes/4, ...; doubling: bytes/P, 2*bytes/P, ...
      double msg = (spec.kind == CollectiveKind::PartReduce)
                       ? spec.bytes / static_cast<double>(2L << s)
                       : spec.bytes * static_cast<double>(1L << s) / P;
      t += msg / fabric.effective_bw(msg) + fabric.latency + fabric.sw_overhead;
    }
  }
  return t;
}

namespace detail {

// Contiguous shard boundaries: the first (elems % P) shards get one extra.
inline std::vector<size_t> shard_offsets(size_t elems, size_t P) {
  std::vector<size_t> off(P + 1, 0);
  size_t base = elems / P, extra = elems % P;
  for (size_t j = 0; j < P; ++j)
    off[j + 1] = off[j] + base + (j < extra ? 1 : 0);
  return off;
}

}  // namespace detail

/// Reduce-scatter: node j ends up holding shard j of the elementwise sum of
/// all partials, accumulated in ascending node order.
inline std::vector<std::vector<float>> part_reduce(
    const std::vector<std::vector<float>>& partials) {
  if (partials.empty()) throw model_error("part_reduce: no participants");
  const size_t P = partials.size();
  const size_t elems = partials[0].size();
  for (const auto& p : partials)
    if (p.size() != elems) throw model_error("part_reduce: shape mismatch");
  auto off = detail::shard_offsets(elems, P);
  std::vector<std::vector<float>> shards(P);
  for (size_t j = 0; j < P; ++j) {
    shards[j].assign(off[j + 1] - off[j], 0.0f);
    for (size_t n = 0; n < P; ++n)  // fixed ascending reduction order
      for (size_t e = off[j]; e < off[j + 1]; ++e)
        shards[j][e - off[j]] += partials[n][e];
  }
  return shards;
}

/// All-gather: concatenation of every node's strip, identical on all nodes.
/// `total_elems` (if nonzero) guards against missing or overlapping strips.
inline std::vector<float> part_broadcast(
    const std::vector<std::vector<float>>& strips, size_t total_elems = 0) {
  if (strips.empty()) throw model_error("part_broadcast: no participants");
  size_t sum = 0;
  for (const auto& s : strips) sum += s.size();
  if (total_elems != 0 && sum != total_elems)
    throw model_error("part_broadcast: strips do not partition the tensor");
  std::vector<float> full;
  full.reserve(sum);
  for (const auto& s : strips) full.insert(full.end(), s.begin(), s.end());
  return full;
}

}  // namespace sgdplan
