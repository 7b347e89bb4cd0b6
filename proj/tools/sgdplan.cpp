// sgdplan: planning and simulation toolkit for synchronous-SGD CNN training.
// Subcommands: plan-blocking, plan-parallelism, comm-cost, simulate,
// verify-sgd, verify-loopnest, table1, ratios.
// Exit codes: 0 success, 2 usage error, 1 model/infeasibility error.

#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "sgdplan/blocking.hpp"
#include "sgdplan/comm.hpp"
#include "sgdplan/loopnest.hpp"
#include "sgdplan/model.hpp"
#include "sgdplan/parallel.hpp"
#include "sgdplan/report.hpp"
#include "sgdplan/simulate.hpp"

namespace {

using namespace sgdplan;

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot read file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

bool file_exists(const std::string& path) {
  return static_cast<bool>(std::ifstream(path));
}

// Accept either a file path or a built-in name.
TopologySpec load_topology(const std::string& arg) {
  if (file_exists(arg)) return parse_topology(slurp(arg));
  return builtin_topology(arg);
}

HardwareSpec load_hardware(const std::string& arg) {
  if (file_exists(arg)) return parse_hardware(slurp(arg));
  return builtin_hardware(arg);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

const char* pass_name(Pass p) {
  switch (p) {
    case Pass::Forward: return "fp";
    case Pass::Backward: return "bp";
    case Pass::WeightGrad: return "wgrad";
  }
  return "?";
}

int cmd_plan_blocking(const std::string& topo_arg, const std::string& hw_arg,
                      const std::string& layer_name, long mb, long cache,
                      ReportFormat fmt) {
  TopologySpec t = load_topology(topo_arg);
  HardwareSpec hw = load_hardware(hw_arg);
  long cache_eff = cache > 0 ? cache : hw.cache_per_thread / 2;
  if (mb <= 0) mb = 1;
  Report rep;
  rep.command = "plan-blocking topology=" + t.name + " hw=" + hw.name +
                " mb=" + std::to_string(mb) +
                " cache=" + std::to_string(cache_eff);
  rep.columns = {"layer", "pass",  "bf_unblocked", "bf_blocked", "mb_b",
                 "ifm_b", "ofm_b", "h_b",          "w_b",        "bs_bytes",
                 "rb",    "strategy", "efficiency"};
  for (const auto& l : t.layers) {
    if (l.is_passthrough()) continue;
    if (!layer_name.empty() && l.name != layer_name) continue;
    CacheBlockPlan plan =
        search_cache_blocking(l, mb, cache_eff, hw.simd_width, hw.size_data);
    std::string bfu = l.is_conv() ? fmt_num(bf_unblocked(l, hw.size_data)) : "-";
    for (Pass p : kAllPasses) {
      RegisterBlock rb = select_register_block(l, p, hw.simd_width);
      rep.row({l.name, pass_name(p), bfu, fmt_num(plan.bf),
               fmt_int(plan.mb_b), fmt_int(plan.ifm_b), fmt_int(plan.ofm_b),
               fmt_int(plan.h_b), fmt_int(plan.w_b), fmt_int(plan.bs_bytes),
               fmt_int(rb.rb_h) + "x" + fmt_int(rb.rb_w), to_string(rb.strategy),
               fmt_num(rb.predicted_efficiency)});
    }
  }
  if (rep.rows.empty())
    throw model_error("no matching conv/fc layer" +
                      (layer_name.empty() ? "" : ": " + layer_name));
  rep.notes.push_back(
      "cache budget = cache_per_thread/2 (double buffering) unless --cache");
  rep.notes.push_back(
      "bf counts memory reads; outputs stay cache-resident per block");
  std::cout << rep.render(fmt);
  return 0;
}

void bubble_notes(Report& rep, const TopologySpec& t, const HardwareSpec& hw,
                  long nodes, long mb) {
  auto [mb_min, max_nodes] = dp_max_nodes(t, hw, mb);
  long mb_node = mb / std::max<long>(1, nodes);
  rep.notes.push_back("conv prefix admits full overlap from " +
                      std::to_string(mb_min) + " data points/node (" +
                      std::to_string(max_nodes) + " nodes at minibatch " +
                      std::to_string(mb) + ")");
  if (mb_node >= 1) {
    BubbleReport br = dp_bubble_analysis(t, hw, mb_node);
    rep.notes.push_back("bubble at last conv layer, mb_node=" +
                        std::to_string(mb_node) + ": " +
                        fmt_num(br.bubble.back()) + " s");
  }
}

int cmd_plan_parallelism(const std::string& topo_arg, const std::string& hw_arg,
                         long nodes, long mb, ReportFormat fmt) {
  TopologySpec t = load_topology(topo_arg);
  HardwareSpec hw = load_hardware(hw_arg);
  if (mb <= 0) mb = t.default_minibatch;
  Report rep;
  rep.command = "plan-parallelism topology=" + t.name + " hw=" + hw.name +
                " nodes=" + std::to_string(nodes) +
                " mb=" + std::to_string(mb);
  rep.columns = {"layer", "mode", "G", "mb_group", "comm_bytes",
                 "comp_comm_ratio"};
  for (const auto& c : plan_topology(t, hw, nodes, mb))
    rep.row({c.layer, to_string(c.mode), fmt_int(c.G), fmt_int(c.mb_group),
             fmt_num(c.volume), fmt_num(c.comp_comm_ratio)});
  if (t.last_conv_index() >= 0) bubble_notes(rep, t, hw, nodes, mb);
  std::cout << rep.render(fmt);
  return 0;
}

int cmd_table1(const std::string& topos_arg, ReportFormat fmt) {
  Report rep;
  rep.command = "table1 topologies=" + topos_arg;
  rep.columns = {"topology", "platform", "comp_to_comms", "min_mb_node(nodes)"};
  const char* platforms[] = {"e5-2666v3-10gbe", "e5-2698v3-fdr"};
  for (const auto& tn : split_csv(topos_arg)) {
    TopologySpec t = load_topology(tn);
    for (const char* pn : platforms) {
      HardwareSpec hw = builtin_hardware(pn);
      double r = hw.comp_sys / hw.comms_sys;
      auto [mb_min, max_nodes] = dp_max_nodes(t, hw, t.default_minibatch);
      rep.row({t.name, hw.name, fmt_int(std::lround(r)),
               std::to_string(mb_min) + " (" + std::to_string(max_nodes) +
                   ")"});
    }
  }
  rep.notes.push_back(
      "comp_to_comms = derived peak flops / raw link bandwidth, rounded");
  rep.notes.push_back(
      "min_mb_node solves the node bound N <= mb*(comms/comp)*(ocomp_k/"
      "ocomms_k) self-consistently; node count = ceil(mb/mb_node)");
  std::cout << rep.render(fmt);
  return 0;
}

int cmd_ratios(const std::string& topos_arg, long mb_node, ReportFormat fmt) {
  Report rep;
  rep.command = "ratios topologies=" + topos_arg +
                " mb_node=" + std::to_string(mb_node);
  rep.columns = {"topology", "aggregate_comp_comm"};
  for (const auto& tn : split_csv(topos_arg)) {
    TopologySpec t = load_topology(tn);
    rep.row({t.name, fmt_num(dp_aggregate_ratio(t, mb_node))});
  }
  rep.notes.push_back(
      "window ratio over the conv prefix: (sum_{j<k} comp_j + comp_k/3) / "
      "sum comms_j, overlap=1, FP32");
  std::cout << rep.render(fmt);
  return 0;
}

int cmd_comm_cost(const std::string& kind, long nodes, double bytes,
                  const std::string& hw_arg, const std::string& alg,
                  ReportFormat fmt) {
  CollectiveSpec spec;
  if (kind == "part-reduce")
    spec.kind = CollectiveKind::PartReduce;
  else if (kind == "part-broadcast")
    spec.kind = CollectiveKind::PartBroadcast;
  else
    throw usage_error("--kind must be part-reduce or part-broadcast");
  if (alg == "ring")
    spec.alg = CollectiveAlg::Ring;
  else if (alg == "butterfly")
    spec.alg = CollectiveAlg::Butterfly;
  else
    throw usage_error("--alg must be ring or butterfly");
  spec.group_size = nodes;
  spec.bytes = bytes;
  HardwareSpec hw = load_hardware(hw_arg);
  double t = collective_time(spec, fabric_from_hw(hw));
  Report rep;
  rep.command = "comm-cost kind=" + kind + " nodes=" + std::to_string(nodes) +
                " bytes=" + fmt_num(bytes) + " alg=" + alg + " hw=" + hw.name;
  rep.columns = {"kind", "alg", "nodes", "bytes", "seconds"};
  rep.row({kind, alg, fmt_int(nodes), fmt_num(bytes), fmt_num(t)});
  std::cout << rep.render(fmt);
  return 0;
}

int cmd_simulate(const std::string& topo_arg, const std::string& hw_arg,
                 const std::string& nodes_arg, long mb, ReportFormat fmt) {
  TopologySpec t = load_topology(topo_arg);
  HardwareSpec hw = load_hardware(hw_arg);
  if (mb <= 0) mb = t.default_minibatch;
  std::vector<long> nodes;
  for (const auto& s : split_csv(nodes_arg)) nodes.push_back(std::stol(s));
  if (nodes.empty()) throw usage_error("--nodes needs at least one count");
  ScalingCurve sc = scaling_curve(t, hw, nodes, mb);
  Report rep;
  rep.command = "simulate topology=" + t.name + " hw=" + hw.name +
                " mb=" + std::to_string(mb) + " nodes=" + nodes_arg;
  rep.columns = {"nodes", "images_per_s", "speedup", "efficiency"};
  for (size_t i = 0; i < sc.nodes.size(); ++i)
    rep.row({fmt_int(sc.nodes[i]), fmt_num(sc.images_per_s[i]),
             fmt_num(sc.speedup[i]), fmt_num(sc.efficiency[i])});
  rep.notes.push_back(
      "compute at peak*register-efficiency; fabric = single FIFO resource");
  std::cout << rep.render(fmt);
  return 0;
}

double predicted_ips(const std::string& topo, const std::string& hw_name,
                     long nodes, long mb) {
  TopologySpec t = builtin_topology(topo);
  HardwareSpec hw = builtin_hardware(hw_name);
  auto plan = plan_topology(t, hw, nodes, mb);
  return simulate_iteration(t, hw, plan, nodes, mb).images_per_s;
}

// Model predictions next to the corresponding published measurements; the
// measured values come from real clusters and are reported, never asserted.
int cmd_compare_paper(ReportFormat fmt) {
  Report rep;
  rep.command = "simulate --compare-paper";
  rep.columns = {"scenario", "predicted", "measured"};
  auto n = [](double v) { return fmt_num(v, 4); };

  double of1 = predicted_ips("overfeat-fast", "e5-2698v3-fdr", 1, 256);
  double vg1 = predicted_ips("vgg-a", "e5-2698v3-fdr", 1, 256);
  rep.row({"overfeat-fast 1-node training img/s", n(of1), "90"});
  rep.row({"vgg-a 1-node training img/s", n(vg1), "30"});

  double vg512_128 = predicted_ips("vgg-a", "e5-2698v3-fdr", 128, 512);
  double vg512_1 = predicted_ips("vgg-a", "e5-2698v3-fdr", 1, 512);
  rep.row({"vgg-a mb=512 128-node img/s", n(vg512_128), "2510"});
  rep.row({"vgg-a mb=512 128-node speedup", n(vg512_128 / vg512_1), "90"});
  rep.row({"vgg-a mb=512 128-node efficiency",
           n(vg512_128 / vg512_1 / 128), "0.70"});
  double vg256_64 = predicted_ips("vgg-a", "e5-2698v3-fdr", 64, 256);
  rep.row({"vgg-a mb=256 64-node efficiency", n(vg256_64 / vg1 / 64), "0.82"});

  double of_aws = predicted_ips("overfeat-fast", "e5-2666v3-10gbe", 16, 256);
  double of_aws1 = predicted_ips("overfeat-fast", "e5-2666v3-10gbe", 1, 256);
  double vg_aws = predicted_ips("vgg-a", "e5-2666v3-10gbe", 16, 256);
  double vg_aws1 = predicted_ips("vgg-a", "e5-2666v3-10gbe", 1, 256);
  rep.row({"overfeat-fast 16-node 10GbE img/s", n(of_aws), "1027"});
  rep.row({"overfeat-fast 16-node 10GbE speedup", n(of_aws / of_aws1),
           "11.9"});
  rep.row({"vgg-a 16-node 10GbE img/s", n(vg_aws), "397"});
  rep.row({"vgg-a 16-node 10GbE speedup", n(vg_aws / vg_aws1), "14.2"});

  double cd1 = predicted_ips("cd-dnn", "e5-2697v3-fdr", 1, 1024);
  double cd4 = predicted_ips("cd-dnn", "e5-2697v3-fdr", 4, 1024);
  double cd16 = predicted_ips("cd-dnn", "e5-2697v3-fdr", 16, 1024);
  rep.row({"cd-dnn 1-node frames/s", n(cd1), "4600"});
  rep.row({"cd-dnn 4-node frames/s", n(cd4), "13000"});
  rep.row({"cd-dnn 16-node frames/s", n(cd16), "29500"});

  rep.notes.push_back(
      "measured column: published cluster results; predictions use peak-rate "
      "compute and raw link bandwidth, so absolute throughputs run high");
  std::cout << rep.render(fmt);
  return 0;
}

int cmd_verify_sgd(long workers, long groups, long steps, unsigned seed,
                   double lr, ReportFormat fmt) {
  TopologySpec t = make_tiny_mlp();
  SgdVerifyResult r = verify_distributed_sgd(t, workers, groups, steps,
                                             static_cast<float>(lr), seed);
  Report rep;
  rep.command = "verify-sgd workers=" + std::to_string(workers) +
                " groups=" + std::to_string(groups) +
                " steps=" + std::to_string(steps) +
                " seed=" + std::to_string(seed);
  rep.columns = {"oracle", "max_rel_deviation", "status"};
  rep.row({"order-matched serial", fmt_num(r.deviation_ordered),
           r.deviation_ordered == 0.0 ? "bit-exact" : "MISMATCH"});
  rep.row({"natural-order serial", fmt_num(r.deviation_natural),
           r.deviation_natural <= 1e-5 ? "ok" : "MISMATCH"});
  std::cout << rep.render(fmt);
  return (r.deviation_ordered == 0.0 && r.deviation_natural <= 1e-5) ? 0 : 1;
}

int cmd_verify_loopnest(long trials, unsigned seed, ReportFormat fmt) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  long exact = 0;
  double worst = 0.0;
  for (long trial = 0; trial < trials; ++trial) {
    LayerSpec l;
    l.name = "t" + std::to_string(trial);
    l.kind = LayerKind::Conv;
    long sw = 4;
    l.ifm = sw * (1 + static_cast<long>(rng() % 2));
    l.ofm = sw * (1 + static_cast<long>(rng() % 3));
    l.k_h = l.k_w = 1 + 2 * static_cast<long>(rng() % 2);
    l.stride = 1 + static_cast<long>(rng() % 2);
    l.out_h = 2 + static_cast<long>(rng() % 8);
    l.out_w = 2 + static_cast<long>(rng() % 13);
    infer_input_dims(l);
    LoopPlan plan;
    plan.sw = sw;
    plan.rb_h = 1 + static_cast<long>(rng() % 3);
    plan.rb_w = 1 + static_cast<long>(rng() % 5);
    if (plan.rb_h * plan.rb_w > 15) plan.rb_w = 1;

    DenseTensor in = make_tensor({2, l.ifm, l.in_h, l.in_w});
    DenseTensor w = make_tensor({l.ifm, l.ofm, l.k_h, l.k_w});
    for (auto& v : in.data) v = dist(rng);
    for (auto& v : w.data) v = dist(rng);
    DenseTensor ref = forward_naive(in, w, l);
    DenseTensor blk = forward_blocked(
        layout_transform(in, Layout::N_Cb_H_W_SW, sw),
        layout_transform(w, Layout::IFM_OFMb_KH_KW_SW, sw), l, plan);
    DenseTensor back = layout_transform(blk, Layout::NCHW, sw);
    bool same = ref.data == back.data;
    if (same) ++exact;
    for (size_t e = 0; e < ref.data.size(); ++e)
      worst = std::max(worst,
                       static_cast<double>(std::abs(ref.data[e] - back.data[e])));
  }
  Report rep;
  rep.command = "verify-loopnest trials=" + std::to_string(trials) +
                " seed=" + std::to_string(seed);
  rep.columns = {"trials", "bit_exact", "max_abs_diff", "status"};
  rep.row({fmt_int(trials), fmt_int(exact), fmt_num(worst),
           exact == trials ? "ok" : "MISMATCH"});
  std::cout << rep.render(fmt);
  return exact == trials ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sgdplan: blocking/parallelism planning and synchronous-SGD "
               "scaling simulation"};
  app.require_subcommand(1);

  std::string topo = "overfeat-fast", hw = "e5-2698v3-fdr", layer;
  std::string fmt_s = "table", nodes_s = "1", kind = "part-reduce",
              alg = "ring", topos = "overfeat-fast,vgg-a";
  long mb = 0, cache = 0, nodes = 1, workers = 4, groups = 2, steps = 10,
       trials = 50, mb_node = 1;
  double bytes = 0, lr = 0.01;
  unsigned seed = 1;
  bool compare_paper = false, table1_flag = false;

  auto add_fmt = [&](CLI::App* c) {
    c->add_option("--format", fmt_s, "table|csv|json");
  };

  auto* pb = app.add_subcommand("plan-blocking",
                                "cache/register blocking plans per layer");
  pb->add_option("--topology", topo, "file or built-in name");
  pb->add_option("--hw", hw, "file or built-in name");
  pb->add_option("--layer", layer, "restrict to one layer");
  pb->add_option("--mb", mb, "minibatch per node (default 1)");
  pb->add_option("--cache", cache, "cache budget bytes (default hw/2)");
  add_fmt(pb);

  auto* pp = app.add_subcommand("plan-parallelism",
                                "per-layer data/model/hybrid choices");
  pp->add_option("--topology", topo, "file or built-in name");
  pp->add_option("--hw", hw, "file or built-in name");
  pp->add_option("--nodes", nodes, "node count");
  pp->add_option("--mb", mb, "global minibatch");
  pp->add_flag("--table1", table1_flag, "emit the scaling-bound grid instead");
  add_fmt(pp);

  auto* t1 = app.add_subcommand("table1", "data-parallel scaling bounds grid");
  t1->add_option("--topology", topos, "comma-separated list");
  add_fmt(t1);

  auto* ra = app.add_subcommand("ratios", "aggregate comp-to-comm ratios");
  ra->add_option("--topology", topos, "comma-separated list");
  ra->add_option("--mb-node", mb_node, "data points per node (default 1)");
  add_fmt(ra);

  auto* cc = app.add_subcommand("comm-cost", "collective time estimate");
  cc->add_option("--kind", kind, "part-reduce|part-broadcast");
  cc->add_option("--nodes", nodes, "group size");
  cc->add_option("--bytes", bytes, "payload bytes")->required();
  cc->add_option("--hw", hw, "file or built-in name");
  cc->add_option("--alg", alg, "ring|butterfly");
  add_fmt(cc);

  auto* si = app.add_subcommand("simulate", "iteration timeline / scaling");
  si->add_option("--topology", topo, "file or built-in name");
  si->add_option("--hw", hw, "file or built-in name");
  si->add_option("--nodes", nodes_s, "node count(s), comma-separated");
  si->add_option("--mb", mb, "global minibatch");
  si->add_flag("--compare-paper", compare_paper,
               "predictions next to published measurements");
  add_fmt(si);

  auto* vs = app.add_subcommand("verify-sgd",
                                "distributed-vs-serial SGD equivalence");
  vs->add_option("--workers", workers, "worker count N");
  vs->add_option("--groups", groups, "group count G (divides N)");
  vs->add_option("--steps", steps, "SGD steps");
  vs->add_option("--seed", seed, "RNG seed");
  vs->add_option("--lr", lr, "learning rate");
  add_fmt(vs);

  auto* vl = app.add_subcommand("verify-loopnest",
                                "blocked-vs-naive loop equivalence");
  vl->add_option("--trials", trials, "random trials");
  vl->add_option("--seed", seed, "RNG seed");
  add_fmt(vl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    ReportFormat fmt = parse_format(fmt_s);
    if (pb->parsed())
      return cmd_plan_blocking(topo, hw, layer, mb, cache, fmt);
    if (pp->parsed()) {
      if (table1_flag) return cmd_table1(topos, fmt);
      return cmd_plan_parallelism(topo, hw, nodes, mb, fmt);
    }
    if (t1->parsed()) return cmd_table1(topos, fmt);
    if (ra->parsed()) return cmd_ratios(topos, mb_node, fmt);
    if (cc->parsed()) return cmd_comm_cost(kind, nodes, bytes, hw, alg, fmt);
    if (si->parsed()) {
      if (compare_paper) return cmd_compare_paper(fmt);
      return cmd_simulate(topo, hw, nodes_s, mb, fmt);
    }
    if (vs->parsed()) return cmd_verify_sgd(workers, groups, steps, seed, lr, fmt);
    if (vl->parsed()) return cmd_verify_loopnest(trials, seed, fmt);
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const model_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
