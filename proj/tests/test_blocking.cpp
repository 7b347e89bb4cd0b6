#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <numeric>

#include "sgdplan/blocking.hpp"
#include "sgdplan/model.hpp"

using namespace sgdplan;

namespace {

LayerSpec conv_layer(long ifm, long ofm, long k, long s, long out) {
  LayerSpec l;
  l.name = "t";
  l.kind = LayerKind::Conv;
  l.ifm = ifm;
  l.ofm = ofm;
  l.k_h = l.k_w = k;
  l.stride = s;
  l.out_h = l.out_w = out;
  infer_input_dims(l);
  return l;
}

// Slow exhaustive oracle: every integer block extent, no divisor pruning.
// Shares only the public per-candidate cost evaluation.
double exhaustive_min_bf(const LayerSpec& l, long mb, long cache, long sw) {
  double best = -1.0;
  CacheBlockPlan cand, scored;
  for (long mbb = 1; mbb <= mb; ++mbb)
    for (long ib = 1; ib <= l.ifm; ++ib)
      for (long ob = 1; ob <= l.ofm; ++ob) {
        if (ob % sw != 0 && ob != l.ofm) continue;
        for (long hb = 1; hb <= l.out_h; ++hb)
          for (long wb = 1; wb <= l.out_w; ++wb) {
            cand.mb_b = mbb;
            cand.ifm_b = ib;
            cand.ofm_b = ob;
            cand.h_b = hb;
            cand.w_b = wb;
            if (evaluate_cache_plan(l, mb, cand, cache, 4, &scored) &&
                (best < 0 || scored.bf < best))
              best = scored.bf;
          }
      }
  return best;
}

}  // namespace

TEST_CASE("bf_unblocked: C5 is 0.54") {
  auto t = builtin_topology("overfeat-fast");
  CHECK(bf_unblocked(t.layer("C5")) == Catch::Approx(0.539).margin(0.005));
  CHECK(bf_unblocked(t.layer("C5")) == Catch::Approx(0.53858).epsilon(1e-4));
}

TEST_CASE("bf_unblocked: degenerate and C1-like values") {
  auto one = conv_layer(1, 1, 1, 1, 1);
  CHECK(bf_unblocked(one) == Catch::Approx(6.0));
  auto c1 = conv_layer(3, 96, 11, 4, 56);
  // 4*(56*56 + 234*234 + 121)/(2*121*56*56)
  CHECK(bf_unblocked(c1) == Catch::Approx(0.305768).epsilon(1e-4));
  LayerSpec fc = detail::fc("f", 64, 64);
  REQUIRE_THROWS_AS(bf_unblocked(fc), model_error);
}

TEST_CASE("bf_fullcache: frozen values") {
  auto t = builtin_topology("overfeat-fast");
  const auto& c5 = t.layer("C5");
  CHECK(bf_fullcache(c5, 1) == Catch::Approx(0.014618).epsilon(1e-3));
  CHECK(bf_fullcache(c5, 256) == Catch::Approx(7.8365e-4).epsilon(1e-3));
  LayerSpec fc = detail::fc("f", 4096, 4096);
  CHECK(bf_fullcache(fc, 256) == Catch::Approx(0.0087891).epsilon(1e-3));
}

TEST_CASE("search: C5 at 128 KB (64 KB double-buffered) stays under 0.04") {
  auto t = builtin_topology("overfeat-fast");
  auto plan = search_cache_blocking(t.layer("C5"), 1, 128 * 1024 / 2, 8);
  CHECK(plan.bf <= 0.04);
  CHECK(plan.bs_bytes < 64 * 1024);
  CHECK(plan.ofm_b % 8 == 0);
}

TEST_CASE("search: infinite cache reaches the compulsory-read floor") {
  // With everything resident each input/weight element is read once; the
  // outputs stay in cache, so the floor is bf_fullcache minus its output
  // term.
  for (long mb : {1L, 4L}) {
    auto l = conv_layer(16, 16, 3, 1, 8);
    auto plan = search_cache_blocking(l, mb, 1L << 40, 8);
    double out_term =
        4.0 * mb * l.ofm * l.out_h * l.out_w /
        (2.0 * mb * l.ofm * l.ifm * l.k_h * l.k_w * l.out_h * l.out_w);
    CHECK(plan.bf == Catch::Approx(bf_fullcache(l, mb) - out_term).epsilon(1e-9));
    // ties at the floor resolve to the lexicographically smallest key, so
    // ifm_b may legitimately stay at 1; only the traffic floor is pinned
    CHECK(plan.ofm_b == l.ofm);
  }
}

TEST_CASE("search: cache too small for any block is an error") {
  auto l = conv_layer(16, 16, 3, 1, 8);
  REQUIRE_THROWS_AS(search_cache_blocking(l, 1, 64, 8), model_error);
}

TEST_CASE("oracle equivalence: pruned minimum == exhaustive minimum") {
  const long cache = 4096, sw = 4;
  const LayerSpec toys[] = {
      conv_layer(8, 16, 3, 1, 6),  conv_layer(16, 16, 3, 1, 8),
      conv_layer(8, 8, 5, 1, 7),   conv_layer(16, 32, 3, 2, 5),
      conv_layer(32, 8, 1, 1, 10)};
  for (const auto& l : toys) {
    auto plan = search_cache_blocking(l, 1, cache, sw);
    double ex = exhaustive_min_bf(l, 1, cache, sw);
    INFO(l.ifm << "x" << l.ofm << " k" << l.k_h << " out" << l.out_h);
    CHECK(plan.bf == ex);  // exact equality required
  }
}

TEST_CASE("property: search bf <= every feasible pruned-space candidate") {
  auto l = conv_layer(8, 16, 3, 1, 6);
  auto best = search_cache_blocking(l, 2, 8192, 4);
  CacheBlockPlan cand, scored;
  for (long mbb : {1L, 2L})
    for (long ib : {1L, 2L, 4L, 8L})
      for (long ob : {4L, 8L, 16L})
        for (long hb : {1L, 2L, 3L, 6L})
          for (long wb : {1L, 2L, 3L, 6L}) {
            cand.mb_b = mbb;
            cand.ifm_b = ib;
            cand.ofm_b = ob;
            cand.h_b = hb;
            cand.w_b = wb;
            if (evaluate_cache_plan(l, 2, cand, 8192, 4, &scored))
              CHECK(best.bf <= scored.bf);
          }
}

TEST_CASE("property: sandwich for SIMD-multiple stride-1 layers") {
  for (const char* name : {"overfeat-fast", "vgg-a"}) {
    auto t = builtin_topology(name);
    for (const auto& l : t.layers) {
      if (!l.is_conv() || l.stride != 1 || l.ifm % 8 || l.ofm % 8) continue;
      auto plan = search_cache_blocking(l, 1, 64 * 1024, 8);
      CHECK(bf_fullcache(l, 1) <= plan.bf + 1e-12);
      CHECK(plan.bf <= bf_unblocked(l) + 1e-12);
    }
  }
}

TEST_CASE("property: larger cache never increases bf") {
  auto l = conv_layer(16, 32, 3, 1, 12);
  double prev = 1e300;
  for (long cache : {2048L, 8192L, 32768L, 131072L, 1L << 24}) {
    auto plan = search_cache_blocking(l, 1, cache, 8);
    CHECK(plan.bf <= prev + 1e-15);
    prev = plan.bf;
  }
}

TEST_CASE("search is deterministic across thread counts") {
  auto l = conv_layer(32, 32, 3, 1, 12);
  setenv("SGDPLAN_THREADS", "1", 1);
  auto a = search_cache_blocking(l, 1, 65536, 8);
  setenv("SGDPLAN_THREADS", "7", 1);
  auto b = search_cache_blocking(l, 1, 65536, 8);
  unsetenv("SGDPLAN_THREADS");
  CHECK(a.bf == b.bf);
  CHECK(a.key() == b.key());
}

TEST_CASE("register_cycles: worked example 144 FMA / 30 LS / 0.88") {
  RegisterBlock rb{1, 12};
  auto c = register_cycles(rb, 8, 1, 3);
  CHECK(c.fma == Catch::Approx(144.0));
  CHECK(c.ls == Catch::Approx(30.0));
  CHECK(c.ls_loads == Catch::Approx(18.0));
  CHECK(c.efficiency == Catch::Approx(0.88).margin(0.01));
  CHECK(register_efficiency(rb, 8, 1, 3) == Catch::Approx(144.0 / 162.0));
}

TEST_CASE("register_cycles: RB=10 single-element slice") {
  RegisterBlock rb{2, 5};
  auto c = register_cycles(rb, 8, 1, 1);
  CHECK(c.fma == Catch::Approx(40.0));       // 8*10/2
  CHECK(c.ls_loads == Catch::Approx(9.0));   // (10+8)/2
  CHECK(c.efficiency == Catch::Approx(40.0 / 49.0));
}

TEST_CASE("efficiency strictly increasing in RB, bounded below 1") {
  // The port model's asymptote is SW*kh*kw/(SW*kh*kw + 1) < 1.
  double prev = 0.0;
  for (long w = 1; w <= 64; ++w) {
    double e = register_efficiency({1, w}, 8, 1, 3);
    CHECK(e > prev);
    CHECK(e < 24.0 / 25.0 + 1e-12);
    prev = e;
  }
}

TEST_CASE("select_register_block: fp, wgrad strategies") {
  auto t = builtin_topology("overfeat-fast");
  const auto& c5 = t.layer("C5");
  auto fp = select_register_block(c5, Pass::Forward);
  CHECK(fp.rb_h == 1);
  CHECK(fp.rb_w == 12);
  CHECK(fp.strategy == RbStrategy::fp_row);
  CHECK(fp.predicted_efficiency == Catch::Approx(0.8889).margin(0.001));

  CHECK(select_register_block(c5, Pass::WeightGrad).strategy ==
        RbStrategy::wgrad_3x3_4k);
  CHECK(select_register_block(t.layer("C2"), Pass::WeightGrad).strategy ==
        RbStrategy::wgrad_5x5_2k);
  CHECK(select_register_block(t.layer("C1"), Pass::WeightGrad).strategy ==
        RbStrategy::wgrad_11x11_1d);
  auto k7 = conv_layer(8, 8, 7, 1, 16);
  CHECK(select_register_block(k7, Pass::WeightGrad).strategy ==
        RbStrategy::wgrad_7x7_2k);

  // fp/bp tiles always land in [10, 15] and within the row
  for (const auto& l : t.layers) {
    if (l.is_passthrough()) continue;
    for (Pass p : {Pass::Forward, Pass::Backward}) {
      auto rb = select_register_block(l, p);
      long prod = rb.rb_h * rb.rb_w;
      CHECK(prod >= 10);
      CHECK(prod <= 15);
      if (l.is_conv())
        CHECK(rb.rb_w <= (p == Pass::Backward ? l.in_w : l.out_w));
    }
  }
  // narrow rows grow RB_h instead
  auto narrow = conv_layer(8, 8, 3, 1, 6);
  auto rb = select_register_block(narrow, Pass::Forward);
  CHECK(rb.rb_w == 6);
  CHECK(rb.rb_h == 2);
}

TEST_CASE("partition_jobs: counts and balance") {
  auto t = builtin_topology("overfeat-fast");
  const auto& c5 = t.layer("C5");
  auto fp = partition_jobs(c5, 32, Pass::Forward, 256);
  CHECK(fp.total_jobs == 393216);  // 256 * (1024/8) * 12
  for (long c : fp.per_thread) CHECK(c == 12288);

  auto wg = partition_jobs(c5, 32, Pass::WeightGrad, 256);
  CHECK(wg.total_jobs == 8192);  // (512/8) * (1024/8)
  CHECK_FALSE(wg.privatized_reduction);

  auto one = partition_jobs(c5, 1, Pass::Forward, 4);
  CHECK(one.per_thread.size() == 1);
  CHECK(one.per_thread[0] == one.total_jobs);
}

TEST_CASE("partition_jobs: privatized reduction when wgrad jobs < threads") {
  auto tiny = conv_layer(8, 8, 3, 1, 6);  // 1 wgrad job at SW=8
  auto wg = partition_jobs(tiny, 16, Pass::WeightGrad, 32);
  CHECK(wg.privatized_reduction);
  CHECK(wg.total_jobs == 32);
}

TEST_CASE("partition_jobs conserves work, max-min <= 1") {
  auto l = conv_layer(24, 40, 3, 1, 9);
  for (long threads : {1L, 3L, 7L, 32L})
    for (Pass p : kAllPasses) {
      auto jp = partition_jobs(l, threads, p, 5, 4);
      long sum = std::accumulate(jp.per_thread.begin(), jp.per_thread.end(), 0L);
      CHECK(sum == jp.total_jobs);
      auto [mn, mx] =
          std::minmax_element(jp.per_thread.begin(), jp.per_thread.end());
      CHECK(*mx - *mn <= 1);
    }
}
