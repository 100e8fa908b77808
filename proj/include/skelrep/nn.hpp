#pragma once

// Differentiable layer primitives on the autodiff tape: 2-d convolution and
// transposed convolution, max pooling with recorded argmax indices and its
// unpooling inverse, batch normalization, affine (dense) layers and the
// training losses. Layout is row-major [N, C, H, W] throughout.

#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "skelrep/autodiff.hpp"

namespace skelrep {

inline Eigen::Index div_floor(Eigen::Index a, Eigen::Index b) {
  Eigen::Index q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}
inline Eigen::Index div_ceil(Eigen::Index a, Eigen::Index b) { return -div_floor(-a, b); }

struct Conv2dSpec {
  Eigen::Index stride_h = 1, stride_w = 1;
  Eigen::Index pad_h = 0, pad_w = 0;
};

namespace detail {

inline void check_conv_args(const Shape& in, const Shape& k, const Conv2dSpec& s,
                            const char* who) {
  if (in.size() != 4) fail(std::string(who) + ": input must be rank 4, got " + shape_str(in));
  if (k.size() != 4) fail(std::string(who) + ": kernel must be rank 4, got " + shape_str(k));
  if (s.stride_h <= 0 || s.stride_w <= 0)
    fail(std::string(who) + ": non-positive stride (" + std::to_string(s.stride_h) + "," +
         std::to_string(s.stride_w) + ")");
  if (s.pad_h < 0 || s.pad_w < 0) fail(std::string(who) + ": negative padding");
  if (k[2] < 1 || k[3] < 1) fail(std::string(who) + ": kernel extents must be >= 1");
}

// Fast path for the architecture's layers: 1 x kw kernels at stride 1. Rows
// are copied into width-padded planes so every (channel, tap) contribution
// becomes one long contiguous multiply-add over the whole plane; margin
// columns absorb the row-boundary spill and are dropped on copy-out. The
// per-cell accumulation order (channel-major, then tap) is the same as the
// plain nested loops and the naive oracle, so results stay bit-identical.

inline bool unit_row_conv(const Shape& k, const Conv2dSpec& s) {
  return k[2] == 1 && (k[3] == 1 || k[3] == 3) && s.stride_h == 1 && s.stride_w == 1 &&
         s.pad_h == 0;
}

template <typename S>
inline void axpy(S* __restrict o, const S* __restrict x, S a, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) o[i] += a * x[i];
}

// o[i] += sum_b sum_t k[b*KW+t] * x[b][i+t], accumulated in that exact
// order per element. Fusing blocks of B source channels and all KW taps
// into one pass keeps the loop compute-bound instead of store-bound.
template <typename S, int KW, int B>
inline void fused_axpy(S* __restrict o, const S* const* x, const S* kv, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    S acc = o[i];
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < KW; ++t) acc += kv[b * KW + t] * x[b][i + t];
    o[i] = acc;
  }
}

// Two output planes per pass, sharing every source load.
template <typename S, int KW, int B>
inline void fused_axpy2(S* __restrict o0, S* __restrict o1, const S* const* x, const S* kv0,
                        const S* kv1, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    S a0 = o0[i], a1 = o1[i];
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < KW; ++t) {
        const S v = x[b][i + t];
        a0 += kv0[b * KW + t] * v;
        a1 += kv1[b * KW + t] * v;
      }
    o0[i] = a0;
    o1[i] = a1;
  }
}

// Runs fused_axpy over `channels` source planes in blocks of four, with the
// same (channel ascending, tap ascending-by-pointer) order as one-at-a-time
// passes. `plane(c)` yields the source pointer, `coeff(o, c, t)` the tap
// value for output slot o; `outs` holds one or two output planes.
template <typename S, int KW, typename PlaneFn, typename CoeffFn>
inline void blocked_accumulate(S* const* outs, int n_out, Eigen::Index channels, Eigen::Index n,
                               PlaneFn&& plane, CoeffFn&& coeff) {
  Eigen::Index c = 0;
  for (; c + 4 <= channels; c += 4) {
    const S* x[4] = {plane(c), plane(c + 1), plane(c + 2), plane(c + 3)};
    S kv0[4 * KW], kv1[4 * KW];
    for (int b = 0; b < 4; ++b)
      for (int t = 0; t < KW; ++t) {
        kv0[b * KW + t] = coeff(0, c + b, t);
        if (n_out == 2) kv1[b * KW + t] = coeff(1, c + b, t);
      }
    if (n_out == 2)
      fused_axpy2<S, KW, 4>(outs[0], outs[1], x, kv0, kv1, n);
    else
      fused_axpy<S, KW, 4>(outs[0], x, kv0, n);
  }
  for (; c < channels; ++c) {
    const S* x[1] = {plane(c)};
    S kv0[KW], kv1[KW];
    for (int t = 0; t < KW; ++t) {
      kv0[t] = coeff(0, c, t);
      if (n_out == 2) kv1[t] = coeff(1, c, t);
    }
    if (n_out == 2)
      fused_axpy2<S, KW, 1>(outs[0], outs[1], x, kv0, kv1, n);
    else
      fused_axpy<S, KW, 1>(outs[0], x, kv0, n);
  }
}

// One sample's channel planes, each row widened to `wp` with `margin` zero
// columns on the left and (wp - w - margin) on the right, plus guard zeros
// around the block so shifted flat runs never fault.
template <typename S>
class PaddedPlanes {
 public:
  void reset(Eigen::Index channels, Eigen::Index h, Eigen::Index w, Eigen::Index margin,
             Eigen::Index wp) {
    c_ = channels;
    h_ = h;
    w_ = w;
    margin_ = margin;
    wp_ = wp;
    guard_ = wp;
    const std::size_t needed = static_cast<std::size_t>(channels * h * wp + 2 * guard_);
    if (buf_.capacity() < needed) buf_.reserve(needed + needed / 2);
    buf_.assign(needed, S(0));
  }

  // src points at [C][H*W] planes
  void load(const S* src) {
    std::fill(buf_.begin(), buf_.end(), S(0));
    for (Eigen::Index c = 0; c < c_; ++c)
      for (Eigen::Index r = 0; r < h_; ++r)
        std::copy(src + (c * h_ + r) * w_, src + (c * h_ + r + 1) * w_,
                  plane(c) + r * wp_ + margin_);
  }

  void zero() { std::fill(buf_.begin(), buf_.end(), S(0)); }

  // copies `wo` columns per row starting at padded column `from`
  void store(S* dst, Eigen::Index c, Eigen::Index wo, Eigen::Index from) const {
    for (Eigen::Index r = 0; r < h_; ++r)
      std::copy(plane(c) + r * wp_ + from, plane(c) + r * wp_ + from + wo, dst + r * wo);
  }

  S* plane(Eigen::Index c) { return buf_.data() + guard_ + c * h_ * wp_; }
  const S* plane(Eigen::Index c) const { return buf_.data() + guard_ + c * h_ * wp_; }
  Eigen::Index plane_len() const { return h_ * wp_; }

 private:
  Eigen::Index c_ = 0, h_ = 0, w_ = 0, margin_ = 0, wp_ = 0, guard_ = 0;
  std::vector<S> buf_;
};

// out[wo] = sum_{ci,kwi} k * in[wo - pw + kwi]; padded coords make the read
// column wo + kwi with margin pw on the input side.
template <typename S>
TensorT<S> conv1xk_value(const TensorT<S>& in, const TensorT<S>& k, const Conv2dSpec& s,
                         const Shape& osh) {
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k.shape[0], kw = k.shape[3];
  const Eigen::Index Wo = osh[3];
  const Eigen::Index wp = W + 2 * s.pad_w + kw;  // extra tail swallows tap shifts
  TensorT<S> out(osh);
  static thread_local PaddedPlanes<S> pin, pout;
  pin.reset(Cin, H, W, s.pad_w, wp);
  pout.reset(2, H, Wo, 0, wp);
  const Eigen::Index len = pin.plane_len();
  for (Eigen::Index n = 0; n < N; ++n) {
    pin.load(&in.data[(n * Cin) * H * W]);
    for (Eigen::Index co = 0; co < Cout; co += 2) {
      const int n_out = (co + 1 < Cout) ? 2 : 1;
      pout.zero();
      S* outs[2] = {pout.plane(0), pout.plane(1)};
      auto plane = [&](Eigen::Index ci) { return pin.plane(ci); };
      auto coeff = [&](int o, Eigen::Index ci, int t) {
        return k.data[((co + o) * Cin + ci) * kw + t];
      };
      if (kw == 3)
        blocked_accumulate<S, 3>(outs, n_out, Cin, len, plane, coeff);
      else
        blocked_accumulate<S, 1>(outs, n_out, Cin, len, plane, coeff);
      for (int o = 0; o < n_out; ++o)
        pout.store(&out.data[((n * Cout + co + o) * H) * Wo], o, Wo, 0);
    }
  }
  return out;
}

// din[wi] += sum_{co,kwi} k * go[wi + pw - kwi]; go gets kw margins on both
// sides so every shift stays in bounds.
template <typename S>
TensorT<S> conv1xk_grad_input(const TensorT<S>& grad_out, const TensorT<S>& k,
                              const Shape& in_shape, const Conv2dSpec& s) {
  const Eigen::Index N = in_shape[0], Cin = in_shape[1], H = in_shape[2], W = in_shape[3];
  const Eigen::Index Cout = k.shape[0], kw = k.shape[3];
  const Eigen::Index Wo = grad_out.shape[3];
  const Eigen::Index wp = Wo + 2 * kw;
  TensorT<S> din(in_shape);
  static thread_local PaddedPlanes<S> pgo, pdin;
  pgo.reset(Cout, H, Wo, kw, wp);
  pdin.reset(2, H, W, 0, wp);
  const Eigen::Index len = pdin.plane_len();
  for (Eigen::Index n = 0; n < N; ++n) {
    pgo.load(&grad_out.data[(n * Cout) * H * Wo]);
    for (Eigen::Index ci = 0; ci < Cin; ci += 2) {
      const int n_out = (ci + 1 < Cin) ? 2 : 1;
      pdin.zero();
      S* outs[2] = {pdin.plane(0), pdin.plane(1)};
      // din col j reads go col j + pw - kwi; ascending pointer taps walk the
      // kernel taps in descending order
      auto plane = [&](Eigen::Index co) { return pgo.plane(co) + kw + s.pad_w - (kw - 1); };
      auto coeff = [&](int o, Eigen::Index co, int t) {
        return k.data[(co * Cin + ci + o) * kw + (kw - 1 - t)];
      };
      if (kw == 3)
        blocked_accumulate<S, 3>(outs, n_out, Cout, len, plane, coeff);
      else
        blocked_accumulate<S, 1>(outs, n_out, Cout, len, plane, coeff);
      for (int o = 0; o < n_out; ++o)
        pdin.store(&din.data[((n * Cin + ci + o) * H) * W], o, W, 0);
    }
  }
  return din;
}

// dk[co,ci,kwi] = <go, in shifted by kwi - pw>, as strided dot products over
// the padded planes; four-lane partial sums keep the reduction fast with a
// fixed deterministic order.
template <typename S>
TensorT<S> conv1xk_grad_kernel(const TensorT<S>& grad_out, const TensorT<S>& in,
                               const Shape& k_shape, const Conv2dSpec& s) {
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k_shape[0], kw = k_shape[3];
  const Eigen::Index Wo = grad_out.shape[3];
  const Eigen::Index wp = W + 2 * s.pad_w + kw;
  TensorT<S> dk(k_shape);
  static thread_local PaddedPlanes<S> pin, pgo;
  pin.reset(Cin, H, W, s.pad_w, wp);
  pgo.reset(Cout, H, Wo, 0, wp);
  const Eigen::Index len = pgo.plane_len();
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // dk[co, (ci,t)] = sum_i go[co][i] * in[ci][i + t], one GEMM per sample
  static thread_local std::vector<S> shifted_buf;
  if (shifted_buf.size() < static_cast<std::size_t>(Cin * kw * len))
    shifted_buf.resize(static_cast<std::size_t>(Cin * kw * len));
  Eigen::Map<Mat> shifted(shifted_buf.data(), Cin * kw, len);
  Eigen::Map<Mat> dk_mat(dk.data.data(), Cout, Cin * kw);
  for (Eigen::Index n = 0; n < N; ++n) {
    pin.load(&in.data[(n * Cin) * H * W]);
    pgo.load(&grad_out.data[(n * Cout) * H * Wo]);
    for (Eigen::Index ci = 0; ci < Cin; ++ci)
      for (Eigen::Index t = 0; t < kw; ++t)
        shifted.row(ci * kw + t) = Eigen::Map<const Eigen::RowVectorX<S>>(pin.plane(ci) + t, len);
    Eigen::Map<const Mat> go_mat(pgo.plane(0), Cout, len);
    dk_mat.noalias() += go_mat * shifted.transpose();
  }
  return dk;
}

// Transposed-convolution fast paths, same padded-plane scheme. The value
// pass keeps the summed-channel-outer, tap-inner per-cell order of
// conv1xk_grad_input so the two adjoint routes agree exactly.

template <typename S>
TensorT<S> deconv1xk_value(const TensorT<S>& in, const TensorT<S>& k, const Conv2dSpec& s,
                           const Shape& osh) {
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k.shape[1], kw = k.shape[3];
  const Eigen::Index Wo = osh[3];
  const Eigen::Index wp = W + 2 * kw + 2 * s.pad_w;
  TensorT<S> out(osh);
  static thread_local PaddedPlanes<S> pin, pout;
  pin.reset(Cin, H, W, 0, wp);
  pout.reset(2, H, Wo, s.pad_w, wp);
  const Eigen::Index len = pout.plane_len();
  for (Eigen::Index n = 0; n < N; ++n) {
    pin.load(&in.data[(n * Cin) * H * W]);
    for (Eigen::Index co = 0; co < Cout; co += 2) {
      const int n_out = (co + 1 < Cout) ? 2 : 1;
      pout.zero();
      S* outs[2] = {pout.plane(0), pout.plane(1)};
      // padded-out col j gathers in[j - kwi]; ascending pointer taps walk
      // the kernel taps in descending order
      auto plane = [&](Eigen::Index ci) { return pin.plane(ci) - (kw - 1); };
      auto coeff = [&](int o, Eigen::Index ci, int t) {
        return k.data[(ci * Cout + co + o) * kw + (kw - 1 - t)];
      };
      if (kw == 3)
        blocked_accumulate<S, 3>(outs, n_out, Cin, len, plane, coeff);
      else
        blocked_accumulate<S, 1>(outs, n_out, Cin, len, plane, coeff);
      for (int o = 0; o < n_out; ++o)
        pout.store(&out.data[((n * Cout + co + o) * H) * Wo], o, Wo, s.pad_w);
    }
  }
  return out;
}

template <typename S>
TensorT<S> deconv1xk_grad_input(const TensorT<S>& grad_out, const TensorT<S>& k,
                                const Shape& in_shape, const Conv2dSpec& s) {
  const Eigen::Index N = in_shape[0], Cin = in_shape[1], H = in_shape[2], W = in_shape[3];
  const Eigen::Index Cout = k.shape[1], kw = k.shape[3];
  const Eigen::Index Wo = grad_out.shape[3];
  const Eigen::Index margin = kw + s.pad_w;
  const Eigen::Index wp = Wo + 2 * margin;
  TensorT<S> din(in_shape);
  static thread_local PaddedPlanes<S> pgo, pdin;
  pgo.reset(Cout, H, Wo, margin, wp);
  pdin.reset(2, H, W, 0, wp);
  const Eigen::Index len = pdin.plane_len();
  for (Eigen::Index n = 0; n < N; ++n) {
    pgo.load(&grad_out.data[(n * Cout) * H * Wo]);
    for (Eigen::Index ci = 0; ci < Cin; ci += 2) {
      const int n_out = (ci + 1 < Cin) ? 2 : 1;
      pdin.zero();
      S* outs[2] = {pdin.plane(0), pdin.plane(1)};
      // din col wi reads go col (wi - pw + kwi)
      auto plane = [&](Eigen::Index co) { return pgo.plane(co) + kw; };
      auto coeff = [&](int o, Eigen::Index co, int t) {
        return k.data[((ci + o) * Cout + co) * kw + t];
      };
      if (kw == 3)
        blocked_accumulate<S, 3>(outs, n_out, Cout, len, plane, coeff);
      else
        blocked_accumulate<S, 1>(outs, n_out, Cout, len, plane, coeff);
      for (int o = 0; o < n_out; ++o)
        pdin.store(&din.data[((n * Cin + ci + o) * H) * W], o, W, 0);
    }
  }
  return din;
}

template <typename S>
TensorT<S> deconv1xk_grad_kernel(const TensorT<S>& grad_out, const TensorT<S>& in,
                                 const Shape& k_shape, const Conv2dSpec& s) {
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k_shape[1], kw = k_shape[3];
  const Eigen::Index Wo = grad_out.shape[3];
  const Eigen::Index margin = kw + s.pad_w;
  const Eigen::Index wp = Wo + 2 * margin;
  TensorT<S> dk(k_shape);
  static thread_local PaddedPlanes<S> pin, pgo;
  pin.reset(Cin, H, W, 0, wp);
  pgo.reset(Cout, H, Wo, margin, wp);
  const Eigen::Index len = pin.plane_len();
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // dk[ci, (co,t)] = sum_i in[ci][i] * go[co][i - pw + t], one GEMM per sample
  static thread_local std::vector<S> shifted_buf;
  if (shifted_buf.size() < static_cast<std::size_t>(Cout * kw * len))
    shifted_buf.resize(static_cast<std::size_t>(Cout * kw * len));
  Eigen::Map<Mat> shifted(shifted_buf.data(), Cout * kw, len);
  Eigen::Map<Mat> dk_mat(dk.data.data(), Cin, Cout * kw);
  for (Eigen::Index n = 0; n < N; ++n) {
    pin.load(&in.data[(n * Cin) * H * W]);
    pgo.load(&grad_out.data[(n * Cout) * H * Wo]);
    for (Eigen::Index co = 0; co < Cout; ++co)
      for (Eigen::Index t = 0; t < kw; ++t)
        shifted.row(co * kw + t) =
            Eigen::Map<const Eigen::RowVectorX<S>>(pgo.plane(co) + kw + t, len);
    Eigen::Map<const Mat> in_mat(pin.plane(0), Cin, len);
    dk_mat.noalias() += in_mat * shifted.transpose();
  }
  return dk;
}

}  // namespace detail

// out extents: H' = (H + 2*pad_h - kh) / stride_h + 1 (integer division)
inline Shape conv2d_out_shape(const Shape& in, const Shape& k, const Conv2dSpec& s) {
  detail::check_conv_args(in, k, s, "conv2d");
  if (in[1] != k[1])
    fail("conv2d: input channels (dim 1 = " + std::to_string(in[1]) +
         ") do not match kernel C_in (dim 1 = " + std::to_string(k[1]) + ")");
  if (in[2] + 2 * s.pad_h < k[2])
    fail("conv2d: padded height " + std::to_string(in[2] + 2 * s.pad_h) + " < kernel height " +
         std::to_string(k[2]));
  if (in[3] + 2 * s.pad_w < k[3])
    fail("conv2d: padded width " + std::to_string(in[3] + 2 * s.pad_w) + " < kernel width " +
         std::to_string(k[3]));
  return {in[0], k[0], (in[2] + 2 * s.pad_h - k[2]) / s.stride_h + 1,
          (in[3] + 2 * s.pad_w - k[3]) / s.stride_w + 1};
}

// Plain-value kernels shared by the forward pass and the adjoint passes.
template <typename S>
TensorT<S> conv2d_value(const TensorT<S>& in, const TensorT<S>& k, const Conv2dSpec& s) {
  const Shape osh = conv2d_out_shape(in.shape, k.shape, s);
  if (detail::unit_row_conv(k.shape, s)) return detail::conv1xk_value(in, k, s, osh);
  TensorT<S> out(osh);
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const Eigen::Index Ho = osh[2], Wo = osh[3];
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index co = 0; co < Cout; ++co) {
      S* outp = &out.data[((n * Cout + co) * Ho) * Wo];
      for (Eigen::Index ci = 0; ci < Cin; ++ci) {
        const S* inp = &in.data[((n * Cin + ci) * H) * W];
        for (Eigen::Index khi = 0; khi < kh; ++khi)
          for (Eigen::Index kwi = 0; kwi < kw; ++kwi) {
            const S wgt = k.at(co, ci, khi, kwi);
            if (wgt == S(0)) continue;
            const Eigen::Index off_w = kwi - s.pad_w;
            const Eigen::Index wo_lo = std::max<Eigen::Index>(0, div_ceil(-off_w, s.stride_w));
            const Eigen::Index wo_hi =
                std::min<Eigen::Index>(Wo - 1, div_floor(W - 1 - off_w, s.stride_w));
            for (Eigen::Index ho = 0; ho < Ho; ++ho) {
              const Eigen::Index hi = ho * s.stride_h - s.pad_h + khi;
              if (hi < 0 || hi >= H) continue;
              const S* row = inp + hi * W + off_w;
              S* orow = outp + ho * Wo;
              for (Eigen::Index wo = wo_lo; wo <= wo_hi; ++wo)
                orow[wo] += wgt * row[wo * s.stride_w];
            }
          }
      }
    }
  return out;
}

template <typename S>
TensorT<S> conv2d_grad_input(const TensorT<S>& grad_out, const TensorT<S>& k, const Shape& in_shape,
                             const Conv2dSpec& s) {
  if (detail::unit_row_conv(k.shape, s))
    return detail::conv1xk_grad_input(grad_out, k, in_shape, s);
  TensorT<S> din(in_shape);
  const Eigen::Index N = in_shape[0], Cin = in_shape[1], H = in_shape[2], W = in_shape[3];
  const Eigen::Index Cout = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  const Eigen::Index Ho = grad_out.shape[2], Wo = grad_out.shape[3];
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index co = 0; co < Cout; ++co) {
      const S* gop = &grad_out.data[((n * Cout + co) * Ho) * Wo];
      for (Eigen::Index ci = 0; ci < Cin; ++ci) {
        S* dinp = &din.data[((n * Cin + ci) * H) * W];
        for (Eigen::Index khi = 0; khi < kh; ++khi)
          for (Eigen::Index kwi = 0; kwi < kw; ++kwi) {
            const S wgt = k.at(co, ci, khi, kwi);
            if (wgt == S(0)) continue;
            const Eigen::Index off_w = kwi - s.pad_w;
            const Eigen::Index wo_lo = std::max<Eigen::Index>(0, div_ceil(-off_w, s.stride_w));
            const Eigen::Index wo_hi =
                std::min<Eigen::Index>(Wo - 1, div_floor(W - 1 - off_w, s.stride_w));
            for (Eigen::Index ho = 0; ho < Ho; ++ho) {
              const Eigen::Index hi = ho * s.stride_h - s.pad_h + khi;
              if (hi < 0 || hi >= H) continue;
              S* row = dinp + hi * W + off_w;
              const S* grow = gop + ho * Wo;
              for (Eigen::Index wo = wo_lo; wo <= wo_hi; ++wo)
                row[wo * s.stride_w] += wgt * grow[wo];
            }
          }
      }
    }
  return din;
}

template <typename S>
TensorT<S> conv2d_grad_kernel(const TensorT<S>& grad_out, const TensorT<S>& in,
                              const Shape& k_shape, const Conv2dSpec& s) {
  if (detail::unit_row_conv(k_shape, s))
    return detail::conv1xk_grad_kernel(grad_out, in, k_shape, s);
  TensorT<S> dk(k_shape);
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k_shape[0], kh = k_shape[2], kw = k_shape[3];
  const Eigen::Index Ho = grad_out.shape[2], Wo = grad_out.shape[3];
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index co = 0; co < Cout; ++co) {
      const S* gop = &grad_out.data[((n * Cout + co) * Ho) * Wo];
      for (Eigen::Index ci = 0; ci < Cin; ++ci) {
        const S* inp = &in.data[((n * Cin + ci) * H) * W];
        for (Eigen::Index khi = 0; khi < kh; ++khi)
          for (Eigen::Index kwi = 0; kwi < kw; ++kwi) {
            const Eigen::Index off_w = kwi - s.pad_w;
            const Eigen::Index wo_lo = std::max<Eigen::Index>(0, div_ceil(-off_w, s.stride_w));
            const Eigen::Index wo_hi =
                std::min<Eigen::Index>(Wo - 1, div_floor(W - 1 - off_w, s.stride_w));
            S acc = 0;
            for (Eigen::Index ho = 0; ho < Ho; ++ho) {
              const Eigen::Index hi = ho * s.stride_h - s.pad_h + khi;
              if (hi < 0 || hi >= H) continue;
              const S* row = inp + hi * W + off_w;
              const S* grow = gop + ho * Wo;
              for (Eigen::Index wo = wo_lo; wo <= wo_hi; ++wo)
                acc += grow[wo] * row[wo * s.stride_w];
            }
            dk.at(co, ci, khi, kwi) += acc;
          }
      }
    }
  return dk;
}

// conv2d(input[N,Cin,H,W], kernel[Cout,Cin,kh,kw]) -> [N,Cout,H',W'],
// differentiable w.r.t. input and kernel.
template <typename S>
inline NodePtr<S> conv2d(const NodePtr<S>& in, const NodePtr<S>& kernel, Conv2dSpec spec = {}) {
  auto n = make_node<S>(conv2d_value(in->value, kernel->value, spec), "conv2d", {in, kernel});
  n->backprop = [spec](NodeT<S>& self) {
    const auto& in_n = self.parents[0];
    const auto& k_n = self.parents[1];
    if (in_n->requires_grad)
      in_n->accumulate(conv2d_grad_input(self.grad, k_n->value, in_n->value.shape, spec));
    if (k_n->requires_grad)
      k_n->accumulate(conv2d_grad_kernel(self.grad, in_n->value, k_n->value.shape, spec));
  };
  return n;
}

// Transposed convolution. Kernel layout [Cin, Cout, kh, kw]; output extents
// invert the conv2d formula: H_out = (H - 1) * stride_h + kh - 2 * pad_h.
inline Shape deconv2d_out_shape(const Shape& in, const Shape& k, const Conv2dSpec& s) {
  detail::check_conv_args(in, k, s, "deconv2d");
  if (in[1] != k[0])
    fail("deconv2d: input channels (dim 1 = " + std::to_string(in[1]) +
         ") do not match kernel C_in (dim 0 = " + std::to_string(k[0]) + ")");
  const Eigen::Index ho = (in[2] - 1) * s.stride_h + k[2] - 2 * s.pad_h;
  const Eigen::Index wo = (in[3] - 1) * s.stride_w + k[3] - 2 * s.pad_w;
  if (ho < 1 || wo < 1)
    fail("deconv2d: output extents (" + std::to_string(ho) + "," + std::to_string(wo) +
         ") collapse below 1; padding too large");
  return {in[0], k[1], ho, wo};
}

// Direct scatter implementation, deliberately not routed through the conv2d
// adjoint code path: the test suite compares the two routes against each
// other.
template <typename S>
TensorT<S> deconv2d_value(const TensorT<S>& in, const TensorT<S>& k, const Conv2dSpec& s) {
  const Shape osh = deconv2d_out_shape(in.shape, k.shape, s);
  if (detail::unit_row_conv(k.shape, s)) return detail::deconv1xk_value(in, k, s, osh);
  TensorT<S> out(osh);
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const Eigen::Index Ho = osh[2], Wo = osh[3];
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index ci = 0; ci < Cin; ++ci) {
      const S* inp = &in.data[((n * Cin + ci) * H) * W];
      for (Eigen::Index co = 0; co < Cout; ++co) {
        S* outp = &out.data[((n * Cout + co) * Ho) * Wo];
        for (Eigen::Index khi = 0; khi < kh; ++khi)
          for (Eigen::Index kwi = 0; kwi < kw; ++kwi) {
            const S wgt = k.at(ci, co, khi, kwi);
            if (wgt == S(0)) continue;
            for (Eigen::Index hi = 0; hi < H; ++hi) {
              const Eigen::Index ho = hi * s.stride_h - s.pad_h + khi;
              if (ho < 0 || ho >= Ho) continue;  // cropped by padding
              const S* row = inp + hi * W;
              S* orow = outp + ho * Wo;
              for (Eigen::Index wi = 0; wi < W; ++wi) {
                const Eigen::Index wo = wi * s.stride_w - s.pad_w + kwi;
                if (wo < 0 || wo >= Wo) continue;
                orow[wo] += wgt * row[wi];
              }
            }
          }
      }
    }
  return out;
}

template <typename S>
TensorT<S> deconv2d_grad_input(const TensorT<S>& grad_out, const TensorT<S>& k,
                               const Shape& in_shape, const Conv2dSpec& s) {
  if (detail::unit_row_conv(k.shape, s))
    return detail::deconv1xk_grad_input(grad_out, k, in_shape, s);
  TensorT<S> din(in_shape);
  const Eigen::Index N = in_shape[0], Cin = in_shape[1], H = in_shape[2], W = in_shape[3];
  const Eigen::Index Cout = k.shape[1], kh = k.shape[2], kw = k.shape[3];
  const Eigen::Index Ho = grad_out.shape[2], Wo = grad_out.shape[3];
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index ci = 0; ci < Cin; ++ci) {
      S* dinp = &din.data[((n * Cin + ci) * H) * W];
      for (Eigen::Index co = 0; co < Cout; ++co) {
        const S* gop = &grad_out.data[((n * Cout + co) * Ho) * Wo];
        for (Eigen::Index khi = 0; khi < kh; ++khi)
          for (Eigen::Index kwi = 0; kwi < kw; ++kwi) {
            const S wgt = k.at(ci, co, khi, kwi);
            if (wgt == S(0)) continue;
            for (Eigen::Index hi = 0; hi < H; ++hi) {
              const Eigen::Index ho = hi * s.stride_h - s.pad_h + khi;
              if (ho < 0 || ho >= Ho) continue;
              S* row = dinp + hi * W;
              const S* grow = gop + ho * Wo;
              for (Eigen::Index wi = 0; wi < W; ++wi) {
                const Eigen::Index wo = wi * s.stride_w - s.pad_w + kwi;
                if (wo < 0 || wo >= Wo) continue;
                row[wi] += wgt * grow[wo];
              }
            }
          }
      }
    }
  return din;
}

template <typename S>
TensorT<S> deconv2d_grad_kernel(const TensorT<S>& grad_out, const TensorT<S>& in,
                                const Shape& k_shape, const Conv2dSpec& s) {
  if (detail::unit_row_conv(k_shape, s))
    return detail::deconv1xk_grad_kernel(grad_out, in, k_shape, s);
  TensorT<S> dk(k_shape);
  const Eigen::Index N = in.shape[0], Cin = in.shape[1], H = in.shape[2], W = in.shape[3];
  const Eigen::Index Cout = k_shape[1], kh = k_shape[2], kw = k_shape[3];
  const Eigen::Index Ho = grad_out.shape[2], Wo = grad_out.shape[3];
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index ci = 0; ci < Cin; ++ci) {
      const S* inp = &in.data[((n * Cin + ci) * H) * W];
      for (Eigen::Index co = 0; co < Cout; ++co) {
        const S* gop = &grad_out.data[((n * Cout + co) * Ho) * Wo];
        for (Eigen::Index khi = 0; khi < kh; ++khi)
          for (Eigen::Index kwi = 0; kwi < kw; ++kwi) {
            S acc = 0;
            for (Eigen::Index hi = 0; hi < H; ++hi) {
              const Eigen::Index ho = hi * s.stride_h - s.pad_h + khi;
              if (ho < 0 || ho >= Ho) continue;
              const S* row = inp + hi * W;
              const S* grow = gop + ho * Wo;
              for (Eigen::Index wi = 0; wi < W; ++wi) {
                const Eigen::Index wo = wi * s.stride_w - s.pad_w + kwi;
                if (wo < 0 || wo >= Wo) continue;
                acc += row[wi] * grow[wo];
              }
            }
            dk.at(ci, co, khi, kwi) += acc;
          }
      }
    }
  return dk;
}

template <typename S>
inline NodePtr<S> deconv2d(const NodePtr<S>& in, const NodePtr<S>& kernel, Conv2dSpec spec = {}) {
  auto n = make_node<S>(deconv2d_value(in->value, kernel->value, spec), "deconv2d", {in, kernel});
  n->backprop = [spec](NodeT<S>& self) {
    const auto& in_n = self.parents[0];
    const auto& k_n = self.parents[1];
    if (in_n->requires_grad)
      in_n->accumulate(deconv2d_grad_input(self.grad, k_n->value, in_n->value.shape, spec));
    if (k_n->requires_grad)
      k_n->accumulate(deconv2d_grad_kernel(self.grad, in_n->value, k_n->value.shape, spec));
  };
  return n;
}

// Per-channel bias on a [N,C,H,W] map.
template <typename S>
inline NodePtr<S> bias_add(const NodePtr<S>& x, const NodePtr<S>& b) {
  const auto& sh = x->value.shape;
  if (sh.size() != 4) fail("bias_add: input must be rank 4, got " + shape_str(sh));
  if (b->value.rank() != 1 || b->value.shape[0] != sh[1])
    fail("bias_add: bias shape " + shape_str(b->value.shape) + " does not match channels " +
         std::to_string(sh[1]));
  TensorT<S> v = x->value;
  const Eigen::Index plane = sh[2] * sh[3];
  for (Eigen::Index n = 0; n < sh[0]; ++n)
    for (Eigen::Index c = 0; c < sh[1]; ++c)
      v.data.segment((n * sh[1] + c) * plane, plane) += b->value.data[c];
  auto node = make_node<S>(std::move(v), "bias_add", {x, b});
  node->backprop = [](NodeT<S>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      const auto& sh = self.value.shape;
      const Eigen::Index plane = sh[2] * sh[3];
      TensorT<S> db(self.parents[1]->value.shape);
      for (Eigen::Index n = 0; n < sh[0]; ++n)
        for (Eigen::Index c = 0; c < sh[1]; ++c)
          db.data[c] += self.grad.data.segment((n * sh[1] + c) * plane, plane).sum();
      self.parents[1]->accumulate(db);
    }
  };
  return node;
}

// ---------------------------------------------------------------------------
// max pooling / unpooling
// ---------------------------------------------------------------------------

// Argmax bookkeeping for one pooling op. `idx` stores, per output cell in
// [N,C,Ho,Wo] order, the flat position of the selected element inside the
// (possibly padded) H x W plane. Ties take the lowest flat index.
struct PoolIndexMap {
  Shape out_shape;                 // [N,C,Ho,Wo]
  Eigen::Index src_h = 0, src_w = 0;      // unpadded input plane extents
  Eigen::Index plane_h = 0, plane_w = 0;  // extents the flat indices refer to
  std::vector<std::int64_t> idx;
};

template <typename S>
struct PoolResult {
  NodePtr<S> out;
  std::shared_ptr<PoolIndexMap> indices;
};

// Non-overlapping max pooling with window (wh, ww). Windows must divide the
// extents unless pad_to_fit is set, in which case the plane is extended with
// zeros on the right/bottom edges.
template <typename S>
inline PoolResult<S> maxpool2d(const NodePtr<S>& x, Eigen::Index wh, Eigen::Index ww,
                               bool pad_to_fit = false) {
  const auto& sh = x->value.shape;
  if (sh.size() != 4) fail("maxpool2d: input must be rank 4, got " + shape_str(sh));
  if (wh < 1 || ww < 1) fail("maxpool2d: window extents must be >= 1");
  if (wh > sh[2] || ww > sh[3])
    fail("maxpool2d: window (" + std::to_string(wh) + "," + std::to_string(ww) +
         ") larger than input plane (" + std::to_string(sh[2]) + "," + std::to_string(sh[3]) + ")");
  const bool divides = (sh[2] % wh == 0) && (sh[3] % ww == 0);
  if (!divides && !pad_to_fit)
    fail("maxpool2d: window (" + std::to_string(wh) + "," + std::to_string(ww) +
         ") does not divide plane (" + std::to_string(sh[2]) + "," + std::to_string(sh[3]) +
         "); enable pad_to_fit to zero-pad");
  const Eigen::Index N = sh[0], C = sh[1], H = sh[2], W = sh[3];
  const Eigen::Index Hp = div_ceil(H, wh) * wh, Wp = div_ceil(W, ww) * ww;
  const Eigen::Index Ho = Hp / wh, Wo = Wp / ww;

  auto map = std::make_shared<PoolIndexMap>();
  map->out_shape = {N, C, Ho, Wo};
  map->src_h = H;
  map->src_w = W;
  map->plane_h = Hp;
  map->plane_w = Wp;
  map->idx.assign(static_cast<std::size_t>(N * C * Ho * Wo), 0);

  TensorT<S> out(map->out_shape);
  std::size_t oi = 0;
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index c = 0; c < C; ++c) {
      const S* plane = &x->value.data[((n * C + c) * H) * W];
      for (Eigen::Index ho = 0; ho < Ho; ++ho)
        for (Eigen::Index wo = 0; wo < Wo; ++wo, ++oi) {
          S best = std::numeric_limits<S>::lowest();
          std::int64_t best_idx = -1;
          for (Eigen::Index r = ho * wh; r < (ho + 1) * wh; ++r)
            for (Eigen::Index col = wo * ww; col < (wo + 1) * ww; ++col) {
              const S v = (r < H && col < W) ? plane[r * W + col] : S(0);
              if (v > best) {  // strict: first (lowest flat index) wins ties
                best = v;
                best_idx = r * Wp + col;
              }
            }
          out.data[static_cast<Eigen::Index>(oi)] = best;
          map->idx[oi] = best_idx;
        }
    }

  auto node = make_node<S>(std::move(out), "maxpool2d", {x});
  node->backprop = [map](NodeT<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    const auto& ish = self.parents[0]->value.shape;
    TensorT<S> din(ish);
    const Eigen::Index C = ish[1], H = ish[2], W = ish[3];
    std::size_t oi = 0;
    for (Eigen::Index n = 0; n < ish[0]; ++n)
      for (Eigen::Index c = 0; c < C; ++c) {
        S* plane = &din.data[((n * C + c) * H) * W];
        const Eigen::Index cells = map->out_shape[2] * map->out_shape[3];
        for (Eigen::Index j = 0; j < cells; ++j, ++oi) {
          const std::int64_t fi = map->idx[oi];
          const Eigen::Index r = fi / map->plane_w, col = fi % map->plane_w;
          if (r < H && col < W)  // gradients into zero padding are dropped
            plane[r * W + col] += self.grad.data[static_cast<Eigen::Index>(oi)];
        }
      }
    self.parents[0]->accumulate(din);
  };
  return {node, map};
}

// Scatters pooled values back to their recorded argmax positions; all other
// cells are zero. out_shape is the full [N,C,H,W] target.
template <typename S>
inline NodePtr<S> maxunpool2d(const NodePtr<S>& y, const std::shared_ptr<PoolIndexMap>& indices,
                              Shape out_shape) {
  const auto& sh = y->value.shape;
  if (sh.size() != 4) fail("maxunpool2d: input must be rank 4, got " + shape_str(sh));
  if (out_shape.size() != 4) fail("maxunpool2d: out_shape must be rank 4");
  if (sh != indices->out_shape)
    fail("maxunpool2d: input shape " + shape_str(sh) + " does not match index map " +
         shape_str(indices->out_shape));
  if (out_shape[0] != sh[0] || out_shape[1] != sh[1])
    fail("maxunpool2d: out_shape batch/channel extents must match input");
  const Eigen::Index N = sh[0], C = sh[1], H = out_shape[2], W = out_shape[3];
  TensorT<S> out(out_shape);
  std::size_t oi = 0;
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index c = 0; c < C; ++c) {
      S* plane = &out.data[((n * C + c) * H) * W];
      const Eigen::Index cells = sh[2] * sh[3];
      for (Eigen::Index j = 0; j < cells; ++j, ++oi) {
        const std::int64_t fi = indices->idx[oi];
        const Eigen::Index r = fi / indices->plane_w, col = fi % indices->plane_w;
        if (fi < 0 || r >= H || col >= W)
          fail("maxunpool2d: recorded index " + std::to_string(fi) +
               " out of range for out plane (" + std::to_string(H) + "," + std::to_string(W) + ")");
        plane[r * W + col] = y->value.data[static_cast<Eigen::Index>(oi)];
      }
    }
  auto node = make_node<S>(std::move(out), "maxunpool2d", {y});
  node->backprop = [indices](NodeT<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    const auto& ysh = self.parents[0]->value.shape;
    const Eigen::Index C = ysh[1], H = self.value.shape[2], W = self.value.shape[3];
    TensorT<S> dy(ysh);
    std::size_t oi = 0;
    for (Eigen::Index n = 0; n < ysh[0]; ++n)
      for (Eigen::Index c = 0; c < C; ++c) {
        const S* plane = &self.grad.data[((n * C + c) * H) * W];
        const Eigen::Index cells = ysh[2] * ysh[3];
        for (Eigen::Index j = 0; j < cells; ++j, ++oi) {
          const std::int64_t fi = indices->idx[oi];
          dy.data[static_cast<Eigen::Index>(oi)] =
              plane[(fi / indices->plane_w) * W + fi % indices->plane_w];
        }
      }
    self.parents[0]->accumulate(dy);
  };
  return node;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

enum class BnMode { Train, Eval };

// Exponential-moving-average statistics, one entry per channel. Mutated by
// the forward pass in train mode; plain state, not part of the tape.
template <typename S>
struct BnStats {
  TensorT<S> running_mean;
  TensorT<S> running_var;

  explicit BnStats(Eigen::Index channels = 1)
      : running_mean(TensorT<S>::zeros({channels})),
        running_var(TensorT<S>::full({channels}, S(1))) {}
};

// Normalizes per channel over (N,H,W). Train mode uses batch statistics and
// updates `stats` in place with momentum; eval mode reads `stats`.
template <typename S>
inline NodePtr<S> batchnorm2d(const NodePtr<S>& x, const NodePtr<S>& gamma, const NodePtr<S>& beta,
                              BnStats<S>& stats, BnMode mode, S eps = S(1e-5),
                              S momentum = S(0.1)) {
  const auto& sh = x->value.shape;
  if (sh.size() != 4) fail("batchnorm2d: input must be rank 4, got " + shape_str(sh));
  const Eigen::Index N = sh[0], C = sh[1], H = sh[2], W = sh[3];
  if (gamma->value.rank() != 1 || gamma->value.shape[0] != C)
    fail("batchnorm2d: gamma shape " + shape_str(gamma->value.shape) + " does not match channels " +
         std::to_string(C));
  if (beta->value.rank() != 1 || beta->value.shape[0] != C)
    fail("batchnorm2d: beta shape " + shape_str(beta->value.shape) + " does not match channels " +
         std::to_string(C));
  if (!(eps > S(0))) fail("batchnorm2d: eps must be > 0");

  const Eigen::Index plane = H * W;
  const Eigen::Index M = N * plane;
  auto mean_c = std::make_shared<TensorT<S>>(TensorT<S>::zeros({C}));
  auto var_c = std::make_shared<TensorT<S>>(TensorT<S>::zeros({C}));
  if (mode == BnMode::Train) {
    for (Eigen::Index c = 0; c < C; ++c) {
      S m = 0;
      for (Eigen::Index n = 0; n < N; ++n)
        m += x->value.data.segment((n * C + c) * plane, plane).sum();
      m /= static_cast<S>(M);
      S v = 0;
      for (Eigen::Index n = 0; n < N; ++n)
        v += (x->value.data.segment((n * C + c) * plane, plane) - m).square().sum();
      v /= static_cast<S>(M);
      mean_c->data[c] = m;
      var_c->data[c] = v;
      stats.running_mean.data[c] = (S(1) - momentum) * stats.running_mean.data[c] + momentum * m;
      stats.running_var.data[c] = (S(1) - momentum) * stats.running_var.data[c] + momentum * v;
    }
  } else {
    *mean_c = stats.running_mean;
    *var_c = stats.running_var;
  }

  TensorT<S> out(sh);
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index c = 0; c < C; ++c) {
      const S inv_sd = S(1) / std::sqrt(var_c->data[c] + eps);
      out.data.segment((n * C + c) * plane, plane) =
          (x->value.data.segment((n * C + c) * plane, plane) - mean_c->data[c]) * inv_sd *
              gamma->value.data[c] +
          beta->value.data[c];
    }

  auto node = make_node<S>(std::move(out), "batchnorm2d", {x, gamma, beta});
  node->backprop = [mean_c, var_c, eps, mode, N, C, plane, M](NodeT<S>& self) {
    const auto& xn = self.parents[0];
    const auto& gn = self.parents[1];
    const auto& bn = self.parents[2];
    TensorT<S> dx(xn->value.shape);
    TensorT<S> dgamma({C}), dbeta({C});
    for (Eigen::Index c = 0; c < C; ++c) {
      const S mu = mean_c->data[c];
      const S inv_sd = S(1) / std::sqrt(var_c->data[c] + eps);
      const S g = gn->value.data[c];
      S sum_go = 0, sum_go_xc = 0;
      for (Eigen::Index n = 0; n < N; ++n) {
        auto go = self.grad.data.segment((n * C + c) * plane, plane);
        auto xc = xn->value.data.segment((n * C + c) * plane, plane) - mu;
        sum_go += go.sum();
        sum_go_xc += (go * xc).sum();
      }
      dgamma.data[c] = sum_go_xc * inv_sd;
      dbeta.data[c] = sum_go;
      if (!xn->requires_grad) continue;
      if (mode == BnMode::Eval) {
        // running stats are constants w.r.t. x
        for (Eigen::Index n = 0; n < N; ++n)
          dx.data.segment((n * C + c) * plane, plane) =
              self.grad.data.segment((n * C + c) * plane, plane) * (g * inv_sd);
      } else {
        // dxhat = go * gamma; batch mean/var both depend on x
        const S invM = S(1) / static_cast<S>(M);
        const S dvar_common = g * sum_go_xc * (-S(0.5)) * inv_sd * inv_sd * inv_sd;
        const S dmean = -g * sum_go * inv_sd;
        for (Eigen::Index n = 0; n < N; ++n) {
          auto go = self.grad.data.segment((n * C + c) * plane, plane);
          auto xc = xn->value.data.segment((n * C + c) * plane, plane) - mu;
          dx.data.segment((n * C + c) * plane, plane) =
              go * (g * inv_sd) + xc * (S(2) * dvar_common * invM) + dmean * invM;
        }
      }
    }
    if (xn->requires_grad) xn->accumulate(dx);
    if (gn->requires_grad) gn->accumulate(dgamma);
    if (bn->requires_grad) bn->accumulate(dbeta);
  };
  return node;
}

// ---------------------------------------------------------------------------
// dense layer and losses
// ---------------------------------------------------------------------------

// y[N,Fout] = x[N,Fin] * W[Fin,Fout] + b[Fout]
template <typename S>
inline NodePtr<S> dense(const NodePtr<S>& x, const NodePtr<S>& w, const NodePtr<S>& b) {
  if (x->value.rank() != 2) fail("dense: input must be rank 2, got " + shape_str(x->value.shape));
  if (w->value.rank() != 2) fail("dense: weight must be rank 2, got " + shape_str(w->value.shape));
  if (x->value.shape[1] != w->value.shape[0])
    fail("dense: input features (dim 1 = " + std::to_string(x->value.shape[1]) +
         ") do not match weight rows (" + std::to_string(w->value.shape[0]) + ")");
  if (b->value.rank() != 1 || b->value.shape[0] != w->value.shape[1])
    fail("dense: bias shape " + shape_str(b->value.shape) + " does not match weight cols (" +
         std::to_string(w->value.shape[1]) + ")");
  // row-major friendly loops; both fc layers of the model are wide enough
  // that strided GEMM paths would thrash the cache
  const Eigen::Index N = x->value.shape[0], Fin = w->value.shape[0], Fout = w->value.shape[1];
  TensorT<S> out({N, Fout});
  for (Eigen::Index n = 0; n < N; ++n) {
    S* y = &out.data[n * Fout];
    std::copy(b->value.data.data(), b->value.data.data() + Fout, y);
    const S* xr = &x->value.data[n * Fin];
    for (Eigen::Index i = 0; i < Fin; ++i) {
      const S xi = xr[i];
      if (xi == S(0)) continue;
      detail::axpy(y, &w->value.data[i * Fout], xi, Fout);
    }
  }
  auto node = make_node<S>(std::move(out), "dense", {x, w, b});
  node->backprop = [N, Fin, Fout](NodeT<S>& self) {
    const auto& xn = self.parents[0];
    const auto& wn = self.parents[1];
    const auto& bn = self.parents[2];
    if (xn->requires_grad) {
      TensorT<S> dx(xn->value.shape);
      for (Eigen::Index n = 0; n < N; ++n) {
        const auto go_row = Eigen::Map<const Eigen::RowVectorX<S>>(&self.grad.data[n * Fout], Fout);
        for (Eigen::Index i = 0; i < Fin; ++i)
          dx.data[n * Fin + i] =
              go_row.dot(Eigen::Map<const Eigen::RowVectorX<S>>(&wn->value.data[i * Fout], Fout));
      }
      xn->accumulate(std::move(dx));
    }
    if (wn->requires_grad) {
      TensorT<S> dw(wn->value.shape);
      for (Eigen::Index n = 0; n < N; ++n) {
        const S* xr = &xn->value.data[n * Fin];
        const S* go_row = &self.grad.data[n * Fout];
        for (Eigen::Index i = 0; i < Fin; ++i) {
          if (xr[i] == S(0)) continue;
          detail::axpy(&dw.data[i * Fout], go_row, xr[i], Fout);
        }
      }
      wn->accumulate(std::move(dw));
    }
    if (bn->requires_grad) {
      TensorT<S> db(bn->value.shape);
      for (Eigen::Index n = 0; n < N; ++n)
        db.data += Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>(&self.grad.data[n * Fout],
                                                                        Fout);
      bn->accumulate(std::move(db));
    }
  };
  return node;
}

// 0.5 * mean over batch of || target - pred ||_F^2; gradient w.r.t. pred is
// (pred - target) / N.
template <typename S>
inline NodePtr<S> mse_loss(const NodePtr<S>& target, const NodePtr<S>& pred) {
  if (!target->value.same_shape(pred->value))
    fail("mse_loss: shape mismatch " + shape_str(target->value.shape) + " vs " +
         shape_str(pred->value.shape));
  const Eigen::Index N = target->value.shape[0];
  const S inv_n = S(1) / static_cast<S>(N);
  const S val = S(0.5) * (target->value.data - pred->value.data).square().sum() * inv_n;
  auto node = make_node<S>(TensorT<S>::scalar(val), "mse_loss", {target, pred});
  node->backprop = [inv_n](NodeT<S>& self) {
    const auto& t = self.parents[0];
    const auto& p = self.parents[1];
    const S g = self.grad.data[0] * inv_n;
    if (p->requires_grad)
      p->accumulate(TensorT<S>(p->value.shape, (p->value.data - t->value.data) * g));
    if (t->requires_grad)
      t->accumulate(TensorT<S>(t->value.shape, (t->value.data - p->value.data) * g));
  };
  return node;
}

// mean over batch rows of the L1 distance summed across columns.
template <typename S>
inline NodePtr<S> l1_loss(const NodePtr<S>& pred, const NodePtr<S>& target) {
  if (!pred->value.same_shape(target->value))
    fail("l1_loss: shape mismatch " + shape_str(pred->value.shape) + " vs " +
         shape_str(target->value.shape));
  if (pred->value.rank() != 2) fail("l1_loss: expected rank-2 [batch, features] input");
  const Eigen::Index N = pred->value.shape[0];
  if (N == 0) fail("l1_loss: empty batch");
  const S inv_n = S(1) / static_cast<S>(N);
  const S val = (pred->value.data - target->value.data).abs().sum() * inv_n;
  auto node = make_node<S>(TensorT<S>::scalar(val), "l1_loss", {pred, target});
  node->backprop = [inv_n](NodeT<S>& self) {
    const auto& p = self.parents[0];
    const auto& t = self.parents[1];
    const S g = self.grad.data[0] * inv_n;
    auto sgn = (p->value.data - t->value.data).unaryExpr([](S v) { return S((v > 0) - (v < 0)); });
    if (p->requires_grad) p->accumulate(TensorT<S>(p->value.shape, sgn * g));
    if (t->requires_grad) t->accumulate(TensorT<S>(t->value.shape, -sgn * g));
  };
  return node;
}

// mean over batch of -log softmax(logits)[label]
template <typename S>
inline NodePtr<S> softmax_cross_entropy(const NodePtr<S>& logits, const std::vector<int>& labels) {
  if (logits->value.rank() != 2)
    fail("softmax_cross_entropy: logits must be rank 2, got " + shape_str(logits->value.shape));
  const Eigen::Index N = logits->value.shape[0], C = logits->value.shape[1];
  if (static_cast<Eigen::Index>(labels.size()) != N)
    fail("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
         " does not match batch " + std::to_string(N));
  for (int y : labels)
    if (y < 0 || y >= C) fail("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
  auto probs = std::make_shared<TensorT<S>>(TensorT<S>::zeros({N, C}));
  S loss = 0;
  for (Eigen::Index n = 0; n < N; ++n) {
    auto row = logits->value.data.segment(n * C, C);
    const S mx = row.maxCoeff();
    auto ex = (row - mx).exp();
    const S z = ex.sum();
    probs->data.segment(n * C, C) = ex / z;
    loss += std::log(z) + mx - row[labels[static_cast<std::size_t>(n)]];
  }
  loss /= static_cast<S>(N);
  auto node = make_node<S>(TensorT<S>::scalar(loss), "softmax_cross_entropy", {logits});
  node->backprop = [probs, labels](NodeT<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    const Eigen::Index N = probs->shape[0], C = probs->shape[1];
    TensorT<S> dl({N, C});
    const S g = self.grad.data[0] / static_cast<S>(N);
    for (Eigen::Index n = 0; n < N; ++n) {
      dl.data.segment(n * C, C) = probs->data.segment(n * C, C) * g;
      dl.data[n * C + labels[static_cast<std::size_t>(n)]] -= g;
    }
    self.parents[0]->accumulate(dl);
  };
  return node;
}

}  // namespace skelrep
