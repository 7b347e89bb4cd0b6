// Acceptance gate: one pass/fail line per criterion, asserted via Catch2.

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <random>

#include "sgdplan/blocking.hpp"
#include "sgdplan/comm.hpp"
#include "sgdplan/loopnest.hpp"
#include "sgdplan/model.hpp"
#include "sgdplan/parallel.hpp"
#include "sgdplan/simulate.hpp"

using namespace sgdplan;

namespace {

void verdict(int id, const char* what, bool ok) {
  std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", id, what);
  std::fflush(stdout);
  REQUIRE(ok);
}

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

TEST_CASE("criterion 1") {
  double bf = bf_unblocked(builtin_topology("overfeat-fast").layer("C5"));
  verdict(1, "unblocked B/F for C5 = 0.54 +/- 0.005",
          std::abs(bf - 0.54) <= 0.005);
}

TEST_CASE("criterion 2") {
  auto start = std::chrono::steady_clock::now();
  bool ok = true;
  for (const char* name : {"overfeat-fast", "vgg-a"}) {
    auto t = builtin_topology(name);
    for (const auto& l : t.layers) {
      if (!l.is_conv()) continue;
      auto plan = search_cache_blocking(l, 1, 128 * 1024 / 2, 8);
      ok = ok && plan.bf <= 0.04;
    }
  }
  double secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  verdict(2, "blocked B/F <= 0.04 for every conv layer at 128 KB, in <= 60 s",
          ok && secs <= 60.0);
}

TEST_CASE("criterion 3") {
  const LayerSpec toys[] = {
      conv_layer(8, 16, 3, 1, 6),  conv_layer(16, 16, 3, 1, 8),
      conv_layer(8, 8, 5, 1, 7),   conv_layer(16, 32, 3, 2, 5),
      conv_layer(32, 8, 1, 1, 10)};
  bool ok = true;
  for (const auto& l : toys) {
    auto plan = search_cache_blocking(l, 1, 4096, 4);
    ok = ok && plan.bf == exhaustive_min_bf(l, 1, 4096, 4);
  }
  verdict(3, "pruned search == exhaustive search on 5 toy layers, exactly",
          ok);
}

TEST_CASE("criterion 4") {
  double e = register_efficiency({1, 12}, 8, 1, 3);
  verdict(4, "register efficiency (SW=8, RB=1x12, 1x3 slice) = 0.88 +/- 0.01",
          std::abs(e - 0.88) <= 0.01);
}

TEST_CASE("criterion 5") {
  auto eth = builtin_hardware("e5-2666v3-10gbe");
  auto fdr = builtin_hardware("e5-2698v3-fdr");
  bool ratios = std::abs(eth.comp_sys / eth.comms_sys - 1336) <= 1 &&
                std::abs(fdr.comp_sys / fdr.comms_sys - 336) <= 1;
  auto of = builtin_topology("overfeat-fast");
  auto vgg = builtin_topology("vgg-a");
  bool grid = dp_max_nodes(of, eth, 256) == std::pair<long, long>{3, 86} &&
              dp_max_nodes(of, fdr, 256) == std::pair<long, long>{2, 128} &&
              dp_max_nodes(vgg, eth, 256) == std::pair<long, long>{1, 256} &&
              dp_max_nodes(vgg, fdr, 256) == std::pair<long, long>{1, 256};
  verdict(5, "scaling grid: 1336/336 (+/-1), 3 (86), 2 (128), 1 (256) x2",
          ratios && grid);
}

TEST_CASE("criterion 6") {
  double of = dp_aggregate_ratio(builtin_topology("overfeat-fast"), 1);
  double vgg = dp_aggregate_ratio(builtin_topology("vgg-a"), 1);
  verdict(6, "aggregate comp/comm ratios 208 and 1456, +/- 5%",
          std::abs(of - 208) / 208 <= 0.05 &&
              std::abs(vgg - 1456) / 1456 <= 0.05);
}

TEST_CASE("criterion 7") {
  // Note: a G=3 optimum with volume 8*ifm*213 is NOT reproducible from the
  // volume formula itself; the formula's argmin over G | 64 is G=2 at
  // 8*ifm*256 (G=1 ties), and that is what is asserted.
  LayerSpec fc = detail::fc("f", 9216, 4096);
  auto g = optimal_group_count(fc, 64, 256, 0.0);
  bool pinned = g.G == 2 && g.volume == 8.0 * 9216 * 256;
  double brute = 1e300;
  for (long cand = 1; cand <= 64; ++cand)
    if (64 % cand == 0)
      brute = std::min(brute, hybrid_comm_volume(fc, cand, 64, 256, 0.0));
  bool equals_brute = g.volume == brute;
  bool dominated = true;
  std::mt19937 rng(7);
  for (int i = 0; i < 100; ++i) {
    LayerSpec r = detail::fc("r", 1 + static_cast<long>(rng() % 8192),
                             1 + static_cast<long>(rng() % 8192));
    long N = 1L << (rng() % 7);
    long mb = 8L << (rng() % 8);
    double ov = (rng() % 2) ? 0.0 : 1.0;
    auto c = optimal_group_count(r, N, mb, ov);
    dominated = dominated &&
                c.volume <= hybrid_comm_volume(r, 1, N, mb, ov) + 1e-9 &&
                c.volume <= hybrid_comm_volume(r, N, N, mb, ov) + 1e-9;
  }
  verdict(7, "hybrid argmin G=2 at 8*ifm*256; never worse than pure modes",
          pinned && equals_brute && dominated);
}

TEST_CASE("criterion 8") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  bool exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    long sw = 4;
    LayerSpec l;
    l.name = "p";
    l.kind = LayerKind::Conv;
    l.ifm = sw * (1 + static_cast<long>(rng() % 2));
    l.ofm = sw * (1 + static_cast<long>(rng() % 3));
    l.k_h = l.k_w = 1 + 2 * static_cast<long>(rng() % 2);
    l.stride = 1 + static_cast<long>(rng() % 2);
    l.out_h = 2 + static_cast<long>(rng() % 9);
    l.out_w = 2 + static_cast<long>(rng() % 13);  // often remainder blocks
    infer_input_dims(l);
    LoopPlan plan;
    plan.sw = sw;
    plan.rb_h = 1 + static_cast<long>(rng() % 3);
    plan.rb_w = 1 + static_cast<long>(rng() % 5);
    if (plan.rb_h * plan.rb_w > 15) plan.rb_w = 1;
    plan.ifm_block = 1 + static_cast<long>(rng() % l.ifm);
    auto in = make_tensor({2, l.ifm, l.in_h, l.in_w});
    auto w = make_tensor({l.ifm, l.ofm, l.k_h, l.k_w});
    for (auto& v : in.data) v = d(rng);
    for (auto& v : w.data) v = d(rng);
    auto ref = forward_naive(in, w, l);
    auto blk = forward_blocked(
        layout_transform(in, Layout::N_Cb_H_W_SW, sw),
        layout_transform(w, Layout::IFM_OFMb_KH_KW_SW, sw), l, plan);
    exact = exact && layout_transform(blk, Layout::NCHW, sw).data == ref.data;
  }

  bool adjoint = true;
  {
    auto l = conv_layer(3, 4, 3, 1, 6);
    auto x = make_tensor({2, 3, l.in_h, l.in_w});
    auto w = make_tensor({3, 4, 3, 3});
    auto y = make_tensor({2, 4, 6, 6});
    for (auto& v : x.data) v = d(rng);
    for (auto& v : w.data) v = d(rng);
    for (auto& v : y.data) v = d(rng);
    auto fwd = forward_naive(x, w, l);
    auto bwd = backward_naive(y, w, l);
    double lhs = 0, rhs = 0;
    for (size_t e = 0; e < fwd.data.size(); ++e)
      lhs += static_cast<double>(fwd.data[e]) * y.data[e];
    for (size_t e = 0; e < x.data.size(); ++e)
      rhs += static_cast<double>(x.data[e]) * bwd.data[e];
    adjoint = std::abs(lhs - rhs) <= 1e-4 * std::abs(rhs);
  }

  bool wg_ok = true;
  {
    auto l = conv_layer(3, 4, 3, 2, 4);
    auto in = make_tensor({2, 3, l.in_h, l.in_w});
    auto gy = make_tensor({2, 4, 4, 4});
    for (auto& v : in.data) v = d(rng);
    for (auto& v : gy.data) v = d(rng);
    auto gw = wgrad_naive(in, gy, l);
    // brute-force double-precision oracle, different loop order
    for (long i = 0; i < l.ifm && wg_ok; ++i)
      for (long o = 0; o < l.ofm; ++o)
        for (long kh = 0; kh < l.k_h; ++kh)
          for (long kw = 0; kw < l.k_w; ++kw) {
            double acc = 0;
            for (long n = 0; n < 2; ++n)
              for (long y = 0; y < l.out_h; ++y)
                for (long x = 0; x < l.out_w; ++x) {
                  long iy = y * l.stride + kh, ix = x * l.stride + kw;
                  if (iy < 0 || ix < 0) continue;
                  acc += static_cast<double>(in(n, i, iy, ix)) *
                         gy(n, o, y, x);
                }
            double got = gw(i, o, kh, kw);
            if (std::abs(got - acc) > 1e-5 * (std::abs(acc) + 1.0))
              wg_ok = false;
          }
  }
  verdict(8, "blocked==naive bit-exact x50; adjointness 1e-4; wgrad 1e-5",
          exact && adjoint && wg_ok);
}

TEST_CASE("criterion 9") {
  bool ok = true;
  for (auto [n, g] : {std::pair{2L, 1L}, {2L, 2L}, {4L, 1L}, {4L, 2L},
                      {4L, 4L}, {8L, 4L}}) {
    auto r = verify_distributed_sgd(make_tiny_mlp(), n, g, 10, 0.01f, 1);
    ok = ok && r.deviation_ordered == 0.0 && r.deviation_natural <= 1e-5;
  }
  verdict(9, "distributed SGD == serial: exact (matched), <=1e-5 (natural)",
          ok);
}

TEST_CASE("criterion 10") {
  auto vgg = builtin_topology("vgg-a");
  auto fdr = builtin_hardware("e5-2698v3-fdr");
  auto sc = scaling_curve(vgg, fdr, {1, 4, 16, 64}, 256);
  bool ok = sc.efficiency[0] == 1.0;
  for (size_t i = 0; i < sc.nodes.size(); ++i)
    ok = ok && sc.speedup[i] <= sc.nodes[i] + 1e-9;
  std::mt19937 rng(10);
  for (int trial = 0; trial < 20 && ok; ++trial) {
    TopologySpec t;
    t.name = "r";
    t.default_minibatch = 64;
    long layers = 2 + static_cast<long>(rng() % 3);
    for (long i = 0; i < layers; ++i)
      t.layers.push_back(conv_layer(8L << (rng() % 3), 8L << (rng() % 3), 3,
                                    1, 4L << (rng() % 3)));
    HardwareSpec hw;
    hw.name = "r";
    hw.sockets = 2;
    hw.cores_per_socket = 8;
    hw.freq_ghz = 2.0;
    hw.comms_sys = 1e8 * (1 + rng() % 20);
    hw.latency = 1e-6;
    hw.finalize();
    HardwareSpec hw2 = hw;
    hw2.comms_sys *= 2;
    for (long N : {2L, 4L, 8L}) {
      double a = scaling_curve(t, hw, {N}, 64).images_per_s[0];
      double b = scaling_curve(t, hw2, {N}, 64).images_per_s[0];
      ok = ok && b >= a - 1e-9;
    }
  }
  verdict(10, "N=1 efficiency 1.0; speedup <= N; bandwidth monotonicity x20",
          ok);
}

TEST_CASE("criterion 11") {
  // Desk-scale predictions printed next to published measurements; the
  // measured numbers come from real clusters and are never asserted.
  struct Row {
    const char* scenario;
    const char* topo;
    const char* hw;
    long nodes, mb;
    const char* measured;
  };
  const Row rows[] = {
      {"overfeat-fast 1-node training img/s", "overfeat-fast",
       "e5-2698v3-fdr", 1, 256, "90"},
      {"vgg-a 1-node training img/s", "vgg-a", "e5-2698v3-fdr", 1, 256, "30"},
      {"vgg-a mb=512 128-node img/s (90X, 70% measured)", "vgg-a",
       "e5-2698v3-fdr", 128, 512, "2510"},
      {"vgg-a mb=256 64-node img/s (82% measured)", "vgg-a", "e5-2698v3-fdr",
       64, 256, "-"},
      {"overfeat-fast 16-node 10GbE img/s (11.9x measured)", "overfeat-fast",
       "e5-2666v3-10gbe", 16, 256, "1027"},
      {"vgg-a 16-node 10GbE img/s (14.2x measured)", "vgg-a",
       "e5-2666v3-10gbe", 16, 256, "397"},
      {"cd-dnn 1-node frames/s", "cd-dnn", "e5-2697v3-fdr", 1, 1024, "4600"},
      {"cd-dnn 4-node frames/s", "cd-dnn", "e5-2697v3-fdr", 4, 1024, "13000"},
      {"cd-dnn 16-node frames/s", "cd-dnn", "e5-2697v3-fdr", 16, 1024,
       "29500"},
  };
  bool finite = true;
  for (const auto& r : rows) {
    auto t = builtin_topology(r.topo);
    auto hw = builtin_hardware(r.hw);
    auto plan = plan_topology(t, hw, r.nodes, r.mb);
    double ips = simulate_iteration(t, hw, plan, r.nodes, r.mb).images_per_s;
    finite = finite && std::isfinite(ips) && ips > 0;
    std::printf("             %-52s predicted %10.1f  measured %s\n",
                r.scenario, ips, r.measured);
  }
  verdict(11, "cluster measurements reported alongside predictions only",
          finite);
}
