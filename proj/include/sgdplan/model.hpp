#pragma once

// Domain types for network topologies and hardware platforms, a small
// line-oriented parser for both, built-in model/machine definitions, and
// FLOP accounting.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgdplan {

class parse_error : public std::runtime_error {
public:
  parse_error(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

private:
  int line_;
};

class model_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Pass { Forward, Backward, WeightGrad };

inline constexpr Pass kAllPasses[] = {Pass::Forward, Pass::Backward,
                                      Pass::WeightGrad};

enum class LayerKind { Conv, Fc, Passthrough };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  long ifm = 1, ofm = 1;
  long k_h = 1, k_w = 1;
  long stride = 1;
  long out_h = 1, out_w = 1;
  long in_h = 1, in_w = 1;
  // Declared output-activation bytes for passthrough layers (pool, relu, ...)
  // so model-parallel activation volumes stay computable.
  long pass_bytes = 0;

  bool is_conv() const { return kind == LayerKind::Conv; }
  bool is_fc() const { return kind == LayerKind::Fc; }
  bool is_passthrough() const { return kind == LayerKind::Passthrough; }

  // Elements of one output activation map set for a single data point.
  long out_elems() const { return ofm * out_h * out_w; }
  long in_elems() const { return ifm * in_h * in_w; }
  long weight_elems() const { return ifm * ofm * k_h * k_w; }

  void validate() const {
    if (name.empty()) throw model_error("layer has no name");
    if (is_passthrough()) {
      if (pass_bytes < 0) throw model_error(name + ": negative bytes");
      return;
    }
    for (long v : {ifm, ofm, k_h, k_w, stride, out_h, out_w, in_h, in_w})
      if (v <= 0)
        throw model_error(name + ": all counts must be strictly positive");
    if (is_fc()) {
      if (k_h != 1 || k_w != 1 || out_h != 1 || out_w != 1 || in_h != 1 ||
          in_w != 1)
        throw model_error(name + ": fc layer must have unit geometry");
    } else {
      if (in_h != out_h * stride + k_h - 1 || in_w != out_w * stride + k_w - 1)
        throw model_error(name +
                          ": input dims inconsistent with out*stride+k-1");
    }
  }
};

// Derive input dims from the padding-free stride relation.
inline void infer_input_dims(LayerSpec& l) {
  l.in_h = l.out_h * l.stride + l.k_h - 1;
  l.in_w = l.out_w * l.stride + l.k_w - 1;
}

struct TopologySpec {
  std::string name;
  std::vector<LayerSpec> layers;
  long default_minibatch = 256;

  void validate() const {
    if (layers.empty()) throw model_error(name + ": topology has no layers");
    if (default_minibatch <= 0) throw model_error(name + ": bad minibatch");
    for (const auto& l : layers) l.validate();
  }

  const LayerSpec& layer(const std::string& lname) const {
    for (const auto& l : layers)
      if (l.name == lname) return l;
    throw model_error(name + ": no layer named '" + lname + "'");
  }

  // Index of the last convolutional layer, or -1 if none.
  long last_conv_index() const {
    long last = -1;
    for (size_t i = 0; i < layers.size(); ++i)
      if (layers[i].is_conv()) last = static_cast<long>(i);
    return last;
  }
};

struct HardwareSpec {
  std::string name;
  long sockets = 1;
  long cores_per_socket = 1;
  double freq_ghz = 1.0;
  long simd_width = 8;       // single-precision lanes
  long fma_per_cycle = 2;
  long cache_per_thread = 128 * 1024;  // bytes
  double comp_sys = 0.0;     // flops/s, derived unless overridden
  double comms_sys = 1.0;    // bytes/s fabric bandwidth
  double latency = 0.0;      // seconds per message
  double sw_overhead = 0.0;  // seconds per transfer (SWlat)
  long size_data = 4;        // bytes per element

  long threads() const { return sockets * cores_per_socket; }

  double derived_comp_sys() const {
    return static_cast<double>(sockets) * cores_per_socket * freq_ghz * 1e9 *
           simd_width * fma_per_cycle * 2.0;
  }

  void finalize() {
    if (comp_sys <= 0.0) comp_sys = derived_comp_sys();
    validate();
  }

  void validate() const {
    if (sockets <= 0 || cores_per_socket <= 0 || simd_width <= 0 ||
        fma_per_cycle <= 0 || cache_per_thread <= 0 || size_data <= 0)
      throw model_error(name + ": hardware counts must be positive");
    if (freq_ghz <= 0 || comp_sys <= 0 || comms_sys <= 0)
      throw model_error(name + ": rates must be positive");
    if (latency < 0 || sw_overhead < 0)
      throw model_error(name + ": negative latency/overhead");
  }
};

// ---------------------------------------------------------------------------
// FLOP accounting

/// Flops for one layer over `mb_node` data points summed over `passes`.
/// Each pass costs 2*mb*ifm*ofm*k_w*k_h*out_w*out_h; passthrough is free.
inline double layer_flops(const LayerSpec& l, long mb_node,
                          std::initializer_list<Pass> passes) {
  if (mb_node < 1) throw model_error("mb_node must be >= 1");
  if (l.is_passthrough()) return 0.0;
  double per_pass = 2.0 * mb_node * l.ifm * l.ofm * l.k_w * l.k_h * l.out_w *
                    l.out_h;
  return per_pass * static_cast<double>(passes.size());
}

inline double layer_flops_all(const LayerSpec& l, long mb_node) {
  return layer_flops(l, mb_node,
                     {Pass::Forward, Pass::Backward, Pass::WeightGrad});
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

// key=value tokens, values may be "<n>" or "<h>x<w>".
struct KvArgs {
  std::map<std::string, std::string> kv;
  int line;

  long num(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw parse_error(line, "missing field '" + key + "'");
    try {
      size_t pos = 0;
      long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw parse_error(line, "field '" + key + "' is not an integer");
    }
  }

  std::optional<std::pair<long, long>> dims(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    const std::string& v = it->second;
    size_t x = v.find('x');
    try {
      if (x == std::string::npos) {
        long n = std::stol(v);
        return std::make_pair(n, n);
      }
      return std::make_pair(std::stol(v.substr(0, x)),
                            std::stol(v.substr(x + 1)));
    } catch (...) {
      throw parse_error(line, "field '" + key + "' is not <n> or <h>x<w>");
    }
  }

  std::pair<long, long> dims_req(const std::string& key) const {
    auto d = dims(key);
    if (!d) throw parse_error(line, "missing field '" + key + "'");
    return *d;
  }
};

inline KvArgs kv_args(const std::vector<std::string>& toks, size_t from,
                      int line) {
  KvArgs a;
  a.line = line;
  for (size_t i = from; i < toks.size(); ++i) {
    size_t eq = toks[i].find('=');
    if (eq == std::string::npos)
      throw parse_error(line, "expected key=value, got '" + toks[i] + "'");
    a.kv[toks[i].substr(0, eq)] = toks[i].substr(eq + 1);
  }
  return a;
}

}  // namespace detail

/// Parse a topology file. Format (one directive per line, '#' comments):
///   network <name>
///   minibatch <n>
///   conv <name> ifm=<n> ofm=<n> k=<h>x<w>|<n> stride=<n> out=<h>x<w> [in=<h>x<w>]
///   fc <name> in=<n> out=<n>
///   pass <name> bytes=<n>
inline TopologySpec parse_topology(const std::string& text) {
  TopologySpec topo;
  topo.name = "unnamed";
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw.substr(0, raw.find('#'));
    line = detail::trim(line);
    if (line.empty()) continue;
    auto toks = detail::tokens(line);
    const std::string& cmd = toks[0];
    if (cmd == "network") {
      if (toks.size() != 2) throw parse_error(lineno, "network <name>");
      topo.name = toks[1];
    } else if (cmd == "minibatch") {
      if (toks.size() != 2) throw parse_error(lineno, "minibatch <n>");
      topo.default_minibatch = std::stol(toks[1]);
      if (topo.default_minibatch <= 0)
        throw parse_error(lineno, "minibatch must be positive");
    } else if (cmd == "conv") {
      if (toks.size() < 2) throw parse_error(lineno, "conv needs a name");
      LayerSpec l;
      l.name = toks[1];
      l.kind = LayerKind::Conv;
      auto a = detail::kv_args(toks, 2, lineno);
      l.ifm = a.num("ifm");
      l.ofm = a.num("ofm");
      auto k = a.dims_req("k");
      l.k_h = k.first;
      l.k_w = k.second;
      l.stride = a.num("stride");
      auto out = a.dims_req("out");
      l.out_h = out.first;
      l.out_w = out.second;
      if (auto in = a.dims("in")) {
        l.in_h = in->first;
        l.in_w = in->second;
        // Explicit override is accepted as-is only when consistent.
        if (l.in_h != l.out_h * l.stride + l.k_h - 1 ||
            l.in_w != l.out_w * l.stride + l.k_w - 1)
          throw parse_error(lineno, l.name +
                                        ": in= contradicts out*stride+k-1 "
                                        "(drop in= to infer)");
      } else {
        infer_input_dims(l);
      }
      try {
        l.validate();
      } catch (const model_error& e) {
        throw parse_error(lineno, e.what());
      }
      topo.layers.push_back(l);
    } else if (cmd == "fc") {
      if (toks.size() < 2) throw parse_error(lineno, "fc needs a name");
      LayerSpec l;
      l.name = toks[1];
      l.kind = LayerKind::Fc;
      auto a = detail::kv_args(toks, 2, lineno);
      l.ifm = a.num("in");
      l.ofm = a.num("out");
      try {
        l.validate();
      } catch (const model_error& e) {
        throw parse_error(lineno, e.what());
      }
      topo.layers.push_back(l);
    } else if (cmd == "pass") {
      if (toks.size() < 2) throw parse_error(lineno, "pass needs a name");
      LayerSpec l;
      l.name = toks[1];
      l.kind = LayerKind::Passthrough;
      auto a = detail::kv_args(toks, 2, lineno);
      l.pass_bytes = a.num("bytes");
      topo.layers.push_back(l);
    } else {
      throw parse_error(lineno, "unknown directive '" + cmd + "'");
    }
  }
  topo.validate();
  return topo;
}

inline std::string serialize_topology(const TopologySpec& topo) {
  std::ostringstream os;
  os << "network " << topo.name << "\n";
  os << "minibatch " << topo.default_minibatch << "\n";
  for (const auto& l : topo.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
        os << "conv " << l.name << " ifm=" << l.ifm << " ofm=" << l.ofm
           << " k=" << l.k_h << "x" << l.k_w << " stride=" << l.stride
           << " out=" << l.out_h << "x" << l.out_w << "\n";
        break;
      case LayerKind::Fc:
        os << "fc " << l.name << " in=" << l.ifm << " out=" << l.ofm << "\n";
        break;
      case LayerKind::Passthrough:
        os << "pass " << l.name << " bytes=" << l.pass_bytes << "\n";
        break;
    }
  }
  return os.str();
}

/// Parse a hardware file: key=value lines, '#' comments. Keys: sockets,
/// cores, freq, simd, fma, cache, net, latency, sw_overhead, size_data,
/// comp_sys (override), name.
inline HardwareSpec parse_hardware(const std::string& text) {
  HardwareSpec hw;
  hw.name = "unnamed";
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  bool saw_net = false;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error(lineno, "expected key=value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    auto n = [&]() -> double {
      try {
        return std::stod(val);
      } catch (...) {
        throw parse_error(lineno, "value of '" + key + "' is not a number");
      }
    };
    if (key == "name") hw.name = val;
    else if (key == "sockets") hw.sockets = static_cast<long>(n());
    else if (key == "cores") hw.cores_per_socket = static_cast<long>(n());
    else if (key == "freq") hw.freq_ghz = n();
    else if (key == "simd") hw.simd_width = static_cast<long>(n());
    else if (key == "fma") hw.fma_per_cycle = static_cast<long>(n());
    else if (key == "cache") hw.cache_per_thread = static_cast<long>(n());
    else if (key == "net") { hw.comms_sys = n(); saw_net = true; }
    else if (key == "latency") hw.latency = n();
    else if (key == "sw_overhead") hw.sw_overhead = n();
    else if (key == "size_data") hw.size_data = static_cast<long>(n());
    else if (key == "comp_sys") hw.comp_sys = n();
    else throw parse_error(lineno, "unknown key '" + key + "'");
  }
  if (!saw_net) throw parse_error(lineno, "missing key 'net'");
  try {
    hw.finalize();
  } catch (const model_error& e) {
    throw parse_error(lineno, e.what());
  }
  return hw;
}

// ---------------------------------------------------------------------------
// Built-in definitions

namespace detail {

inline LayerSpec conv(const std::string& name, long ifm, long ofm, long k,
                      long stride, long out) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Conv;
  l.ifm = ifm;
  l.ofm = ofm;
  l.k_h = l.k_w = k;
  l.stride = stride;
  l.out_h = l.out_w = out;
  infer_input_dims(l);
  return l;
}

inline LayerSpec fc(const std::string& name, long in, long out) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::Fc;
  l.ifm = in;
  l.ofm = out;
  return l;
}

}  // namespace detail

/// Built-in topologies: "overfeat-fast", "vgg-a", "cd-dnn".
///
/// OverFeat-FAST is transcribed with C5 = 512 ifm x 1024 ofm at 12x12 output,
/// matching the layer geometry this code's cost analysis is calibrated
/// against; VGG-A uses 256x256 input resolution. CD-DNN is 7 fully connected
/// hidden layers of 2048 neurons each.
inline TopologySpec builtin_topology(const std::string& name) {
  using detail::conv;
  using detail::fc;
  TopologySpec t;
  t.name = name;
  t.default_minibatch = 256;
  if (name == "overfeat-fast") {
    t.layers = {conv("C1", 3, 96, 11, 4, 56), conv("C2", 96, 256, 5, 1, 24),
                conv("C3", 256, 512, 3, 1, 12), conv("C4", 512, 512, 3, 1, 12),
                conv("C5", 512, 1024, 3, 1, 12), fc("F6", 36864, 3072),
                fc("F7", 3072, 4096), fc("F8", 4096, 1000)};
  } else if (name == "vgg-a") {
    t.layers = {conv("conv1", 3, 64, 3, 1, 256),
                conv("conv2", 64, 128, 3, 1, 128),
                conv("conv3", 128, 256, 3, 1, 64),
                conv("conv4", 256, 256, 3, 1, 64),
                conv("conv5", 256, 512, 3, 1, 32),
                conv("conv6", 512, 512, 3, 1, 32),
                conv("conv7", 512, 512, 3, 1, 16),
                conv("conv8", 512, 512, 3, 1, 16),
                fc("fc1", 32768, 4096),
                fc("fc2", 4096, 4096),
                fc("fc3", 4096, 1000)};
  } else if (name == "cd-dnn") {
    t.default_minibatch = 1024;
    for (int i = 1; i <= 7; ++i)
      t.layers.push_back(fc("fc" + std::to_string(i), 2048, 2048));
  } else {
    throw model_error("unknown built-in topology '" + name + "'");
  }
  t.validate();
  return t;
}

/// Built-in hardware platforms:
///   "e5-2666v3-10gbe"  2s9c 2.9 GHz AVX2 + 10 Gb Ethernet (1.25e9 B/s)
///   "e5-2698v3-fdr"    2s16c 2.3 GHz AVX2 + FDR Infiniband (7e9 B/s)
///   "e5-2697v3-fdr"    2s14c AVX2 (~1.7 TF/s sustained) + FDR
inline HardwareSpec builtin_hardware(const std::string& name) {
  HardwareSpec hw;
  hw.name = name;
  if (name == "e5-2666v3-10gbe") {
    hw.sockets = 2;
    hw.cores_per_socket = 9;
    hw.freq_ghz = 2.9;
    hw.comms_sys = 1.25e9;
  } else if (name == "e5-2698v3-fdr") {
    hw.sockets = 2;
    hw.cores_per_socket = 16;
    hw.freq_ghz = 2.3;
    hw.comms_sys = 7e9;
  } else if (name == "e5-2697v3-fdr") {
    hw.sockets = 2;
    hw.cores_per_socket = 14;
    hw.freq_ghz = 1.9;  // AVX base clock; 2s14c * 1.9 GHz * 32 = 1.7 TF/s
    hw.comms_sys = 7e9;
  } else {
    throw model_error("unknown built-in hardware '" + name + "'");
  }
  hw.simd_width = 8;
  hw.fma_per_cycle = 2;
  hw.cache_per_thread = 128 * 1024;
  hw.finalize();
  return hw;
}

}  // namespace sgdplan
