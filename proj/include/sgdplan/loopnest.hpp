#pragma once

// Reference (naive) and blocked/layout-transformed executions of the forward,
// backward, and weight-gradient loop nests. The blocked forward accumulates
// into each output element in the same (ifm, kh, kw) order as the naive loop,
// so results are bit-identical for every valid plan. Convolutions are "valid"
// (padding-free): input index y*s + kh always lies within in_h = out*s + k - 1.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "model.hpp"

namespace sgdplan {

enum class Layout {
  NCHW,              // plain row-major over the listed dims (also used for
                     // plain ifm x ofm x kh x kw weights)
  N_Cb_H_W_SW,       // activations blocked over channels by SW
  IFM_OFMb_KH_KW_SW, // weights blocked over ofm by SW
  OFM_IFMb_KH_KW_SW  // transposed weights blocked over ifm by SW
};

struct DenseTensor {
  // Logical extents: activations {N, C, H, W}; weights {ifm, ofm, kh, kw}.
  // `layout` only changes the physical element order in `data`.
  std::vector<long> dims;
  Layout layout = Layout::NCHW;
  long sw = 1;
  std::vector<float> data;

  long elems() const {
    long n = 1;
    for (long d : dims) n *= d;
    return n;
  }

  // Physical offset of logical index (a, b, c, d).
  size_t at(long a, long b, long c, long d) const {
    const long D1 = dims[1], D2 = dims[2], D3 = dims[3];
    switch (layout) {
      case Layout::NCHW:
        return static_cast<size_t>(((a * D1 + b) * D2 + c) * D3 + d);
      case Layout::N_Cb_H_W_SW:
        return static_cast<size_t>(
            ((((a * (D1 / sw) + b / sw) * D2 + c) * D3 + d) * sw + b % sw));
      case Layout::IFM_OFMb_KH_KW_SW:
        return static_cast<size_t>(
            ((((a * (D1 / sw) + b / sw) * D2 + c) * D3 + d) * sw + b % sw));
      case Layout::OFM_IFMb_KH_KW_SW:
        // logical index order stays (ifm, ofm, kh, kw)
        return static_cast<size_t>(
            ((((b * (dims[0] / sw) + a / sw) * D2 + c) * D3 + d) * sw +
             a % sw));
    }
    throw model_error("bad layout");
  }

  float operator()(long a, long b, long c, long d) const {
    return data[at(a, b, c, d)];
  }
  float& operator()(long a, long b, long c, long d) {
    return data[at(a, b, c, d)];
  }
};

inline DenseTensor make_tensor(std::vector<long> dims,
                               Layout layout = Layout::NCHW, long sw = 1) {
  DenseTensor t;
  t.dims = std::move(dims);
  if (t.dims.size() != 4) throw model_error("tensors are 4-dimensional");
  t.layout = layout;
  t.sw = sw;
  if (layout != Layout::NCHW) {
    long blocked = (layout == Layout::OFM_IFMb_KH_KW_SW) ? t.dims[0]
                                                         : t.dims[1];
    if (sw < 1 || blocked % sw != 0)
      throw model_error("blocked dimension not divisible by SW");
  }
  t.data.assign(static_cast<size_t>(t.elems()), 0.0f);
  return t;
}

/// Relayout a tensor; bijective, so transforming back restores the original
/// bit-exactly.
inline DenseTensor layout_transform(const DenseTensor& t, Layout target,
                                    long sw) {
  DenseTensor out = make_tensor(t.dims, target, sw);
  for (long a = 0; a < t.dims[0]; ++a)
    for (long b = 0; b < t.dims[1]; ++b)
      for (long c = 0; c < t.dims[2]; ++c)
        for (long d = 0; d < t.dims[3]; ++d)
          out(a, b, c, d) = t(a, b, c, d);
  return out;
}

namespace detail {

inline void check_activation(const DenseTensor& t, long c, long h, long w,
                             const char* what) {
  if (t.dims.size() != 4 || t.dims[1] != c || t.dims[2] != h || t.dims[3] != w)
    throw model_error(std::string(what) + ": shape mismatch");
}

inline void check_weights(const DenseTensor& w, const LayerSpec& l) {
  if (w.dims.size() != 4 || w.dims[0] != l.ifm || w.dims[1] != l.ofm ||
      w.dims[2] != l.k_h || w.dims[3] != l.k_w)
    throw model_error("weights: shape mismatch");
}

}  // namespace detail

/// output[n][o][y][x] = sum over (i, kh, kw) ascending of
/// input[n][i][y*s+kh][x*s+kw] * wts[i][o][kh][kw] (valid, padding-free).
inline DenseTensor forward_naive(const DenseTensor& input,
                                 const DenseTensor& wts,
                                 const LayerSpec& l) {
  const long N = input.dims[0];
  detail::check_activation(input, l.ifm, l.in_h, l.in_w, "input");
  detail::check_weights(wts, l);
  DenseTensor out = make_tensor({N, l.ofm, l.out_h, l.out_w});
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < l.ifm; ++i)
      for (long o = 0; o < l.ofm; ++o)
        for (long y = 0; y < l.out_h; ++y)
          for (long x = 0; x < l.out_w; ++x)
            for (long kh = 0; kh < l.k_h; ++kh) {
              long iy = y * l.stride + kh;
              if (iy < 0 || iy >= l.in_h) continue;
              for (long kw = 0; kw < l.k_w; ++kw) {
                long ix = x * l.stride + kw;
                if (ix < 0 || ix >= l.in_w) continue;
                out(n, o, y, x) += input(n, i, iy, ix) * wts(i, o, kh, kw);
              }
            }
  return out;
}

/// grad_input[n][i][y*s+kh-1][x*s+kw-1] += grad_output[n][o][y][x] *
/// wts[i][o][kh][kw]; the transposed-weight convolution.
inline DenseTensor backward_naive(const DenseTensor& grad_output,
                                  const DenseTensor& wts,
                                  const LayerSpec& l) {
  const long N = grad_output.dims[0];
  detail::check_activation(grad_output, l.ofm, l.out_h, l.out_w,
                           "grad_output");
  detail::check_weights(wts, l);
  DenseTensor gin = make_tensor({N, l.ifm, l.in_h, l.in_w});
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < l.ifm; ++i)
      for (long o = 0; o < l.ofm; ++o)
        for (long y = 0; y < l.out_h; ++y)
          for (long x = 0; x < l.out_w; ++x)
            for (long kh = 0; kh < l.k_h; ++kh) {
              long iy = y * l.stride + kh;
              if (iy < 0 || iy >= l.in_h) continue;
              for (long kw = 0; kw < l.k_w; ++kw) {
                long ix = x * l.stride + kw;
                if (ix < 0 || ix >= l.in_w) continue;
                gin(n, i, iy, ix) += grad_output(n, o, y, x) * wts(i, o, kh, kw);
              }
            }
  return gin;
}

/// grad_wts[i][o][kh][kw] += input[n][i][y*s+kh-1][x*s+kw-1] *
/// grad_output[n][o][y][x], accumulated over the minibatch and spatial dims.
inline DenseTensor wgrad_naive(const DenseTensor& input,
                               const DenseTensor& grad_output,
                               const LayerSpec& l) {
  const long N = input.dims[0];
  detail::check_activation(input, l.ifm, l.in_h, l.in_w, "input");
  detail::check_activation(grad_output, l.ofm, l.out_h, l.out_w,
                           "grad_output");
  if (grad_output.dims[0] != N) throw model_error("minibatch mismatch");
  DenseTensor gw = make_tensor({l.ifm, l.ofm, l.k_h, l.k_w});
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < l.ifm; ++i)
      for (long o = 0; o < l.ofm; ++o)
        for (long y = 0; y < l.out_h; ++y)
          for (long x = 0; x < l.out_w; ++x)
            for (long kh = 0; kh < l.k_h; ++kh) {
              long iy = y * l.stride + kh;
              if (iy < 0 || iy >= l.in_h) continue;
              for (long kw = 0; kw < l.k_w; ++kw) {
                long ix = x * l.stride + kw;
                if (ix < 0 || ix >= l.in_w) continue;
                gw(i, o, kh, kw) += input(n, i, iy, ix) * grad_output(n, o, y, x);
              }
            }
  return gw;
}

struct LoopPlan {
  long sw = 8;
  long rb_h = 1, rb_w = 1;
  // Cache-block extents (clamped to the dimension; remainder blocks allowed).
  long ifm_block = 0, ofm_block = 0;  // 0 = whole dimension

  void validate(const LayerSpec& l) const {
    long rb = rb_h * rb_w;
    if (rb < 1 || rb > 16) throw model_error("RB_h*RB_w outside [1, 16]");
    if (sw < 1 || sw > l.ofm) throw model_error("plan SW exceeds ofm");
    if (l.ofm % sw != 0) throw model_error("ofm not a multiple of SW");
    long ib = ifm_block ? ifm_block : l.ifm;
    long ob = ofm_block ? ofm_block : l.ofm;
    if (ib < 1 || ib > l.ifm || ob < 1 || ob > l.ofm)
      throw model_error("cache block outside dimension");
    if (ob % sw != 0) throw model_error("ofm block not a multiple of SW");
  }
};

/// Blocked/vectorized-layout forward pass. Loop order: minibatch, ifm block,
/// ofm SIMD-group, register tiles, then per tile (ifm, kh, kw, rows, cols,
/// lanes) — per output element the additions happen in exactly the naive
/// (ifm, kh, kw) order, so the result is bit-identical to forward_naive.
inline DenseTensor forward_blocked(const DenseTensor& input,
                                   const DenseTensor& wts, const LayerSpec& l,
                                   const LoopPlan& plan) {
  plan.validate(l);
  if (input.layout != Layout::N_Cb_H_W_SW)
    throw model_error("blocked forward expects N_Cb_H_W_SW input");
  if (wts.layout != Layout::IFM_OFMb_KH_KW_SW)
    throw model_error("blocked forward expects IFM_OFMb_KH_KW_SW weights");
  const long N = input.dims[0];
  detail::check_activation(input, l.ifm, l.in_h, l.in_w, "input");
  detail::check_weights(wts, l);
  if (wts.sw != plan.sw) throw model_error("weight SW differs from plan SW");

  const long SW = plan.sw;
  const long ib = plan.ifm_block ? plan.ifm_block : l.ifm;
  const long ob = plan.ofm_block ? plan.ofm_block : l.ofm;
  DenseTensor out = make_tensor({N, l.ofm, l.out_h, l.out_w},
                                Layout::N_Cb_H_W_SW, SW);
  for (long n = 0; n < N; ++n)
    for (long ic0 = 0; ic0 < l.ifm; ic0 += ib)
      for (long oc0 = 0; oc0 < l.ofm; oc0 += ob)
        for (long og = oc0; og < std::min(oc0 + ob, l.ofm); og += SW)
          for (long y0 = 0; y0 < l.out_h; y0 += plan.rb_h)
            for (long x0 = 0; x0 < l.out_w; x0 += plan.rb_w) {
              // register tile, with remainder clamping at the edges
              long yl = std::min(plan.rb_h, l.out_h - y0);
              long xl = std::min(plan.rb_w, l.out_w - x0);
              for (long i = ic0; i < std::min(ic0 + ib, l.ifm); ++i)
                for (long kh = 0; kh < l.k_h; ++kh)
                  for (long kw = 0; kw < l.k_w; ++kw)
                    for (long ry = 0; ry < yl; ++ry) {
                      long iy = (y0 + ry) * l.stride + kh;
                      if (iy < 0 || iy >= l.in_h) continue;
                      for (long rx = 0; rx < xl; ++rx) {
                        long ix = (x0 + rx) * l.stride + kw;
                        if (ix < 0 || ix >= l.in_w) continue;
                        float in_v = input(n, i, iy, ix);
                        for (long v = 0; v < SW; ++v)
                          out(n, og + v, y0 + ry, x0 + rx) +=
                              in_v * wts(i, og + v, kh, kw);
                      }
                    }
            }
  return out;
}

}  // namespace sgdplan
