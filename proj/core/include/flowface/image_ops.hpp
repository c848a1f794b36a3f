#pragma once

// Differentiable image ops on [N, C, H, W] tensors.
//
// conv2d lowers to im2col + Eigen GEMM per sample; everything else is
// direct loops. Parallel regions split work by sample (or by sample x
// channel) so no two tasks write the same element; per-filter gradient
// partials are reduced serially in sample order to keep results
// bit-stable.

#include "flowface/autodiff.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowface::ad {

namespace detail {

template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* col) {
  // col is [Ho*Wo, C*kh*kw] row-major
  const int K = C * kh * kw;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      T* dst = col + (size_t(oy) * Wo + ox) * K;
      for (int c = 0; c < C; ++c) {
        const T* plane = x + size_t(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? plane[size_t(iy) * W + ix]
                         : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad, int Ho, int Wo, T* gx) {
  const int K = C * kh * kw;
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      const T* src = col + (size_t(oy) * Wo + ox) * K;
      for (int c = 0; c < C; ++c) {
        T* plane = gx + size_t(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              plane[size_t(iy) * W + ix] += *src;
            ++src;
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution, zero padding. x [N,Cin,H,W], w [Cout,Cin,kh,kw],
/// b [Cout] or undefined for no bias.
template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& b,
                int stride, int pad) {
  require_config(x.val().rank() == 4 && w.val().rank() == 4, "conv2d: rank must be 4");
  const int N = x.val().dim(0), Cin = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  const int Cout = w.val().dim(0), kh = w.val().dim(2), kw = w.val().dim(3);
  require_config(w.val().dim(1) == Cin, "conv2d: channel mismatch");
  require_config(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  require_config(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");
  const bool has_bias = b.defined();
  if (has_bias)
    require_config(b.val().numel() == size_t(Cout), "conv2d: bias width mismatch");

  const int K = Cin * kh * kw;
  const size_t plane = size_t(Ho) * Wo;
  Tensor<T> out({N, Cout, Ho, Wo});
  {
    const T* xp = x.val().data();
    T* op = out.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int n = 0; n < N; ++n) {
      std::vector<T> col(plane * size_t(K));
      detail::im2col(xp + size_t(n) * Cin * H * W, Cin, H, W, kh, kw, stride, pad, Ho,
                     Wo, col.data());
      detail::ECMap<T> Wm(w.val().data(), Cout, K);
      detail::ECMap<T> Cm(col.data(), int(plane), K);
      detail::EMap<T> Om(op + size_t(n) * Cout * plane, Cout, int(plane));
      Om.noalias() = Wm * Cm.transpose();
      if (has_bias) {
        for (int co = 0; co < Cout; ++co) {
          const T bv = b.val()[size_t(co)];
          T* row = op + (size_t(n) * Cout + co) * plane;
          for (size_t i = 0; i < plane; ++i) row[i] += bv;
        }
      }
    }
  }

  auto xn = x.node(); auto wn = w.node();
  auto bn = has_bias ? b.node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents = {xn, wn};
  if (bn) parents.push_back(bn);
  return Value<T>(detail::make_node<T>(std::move(out), parents,
    [xn, wn, bn, N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, plane](Node<T>& nd) {
      const T* gy = nd.grad.data();
      // dX: per-sample, independent slices
      if (xn->requires_grad) {
        T* gx = xn->ensure_grad().data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int n = 0; n < N; ++n) {
          std::vector<T> dcol(plane * size_t(K));
          detail::ECMap<T> Gm(gy + size_t(n) * Cout * plane, Cout, int(plane));
          detail::ECMap<T> Wm(wn->val.data(), Cout, K);
          detail::EMap<T> Dm(dcol.data(), int(plane), K);
          Dm.noalias() = Gm.transpose() * Wm;
          detail::col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                             gx + size_t(n) * Cin * H * W);
        }
      }
      // dW: per-sample partials, reduced in sample order
      if (wn->requires_grad) {
        std::vector<T> partials(size_t(N) * Cout * K);
        const T* xp = xn->val.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int n = 0; n < N; ++n) {
          std::vector<T> col(plane * size_t(K));
          detail::im2col(xp + size_t(n) * Cin * H * W, Cin, H, W, kh, kw, stride,
                         pad, Ho, Wo, col.data());
          detail::ECMap<T> Gm(gy + size_t(n) * Cout * plane, Cout, int(plane));
          detail::ECMap<T> Cm(col.data(), int(plane), K);
          detail::EMap<T> Pm(partials.data() + size_t(n) * Cout * K, Cout, K);
          Pm.noalias() = Gm * Cm;
        }
        T* gw = wn->ensure_grad().data();
        for (int n = 0; n < N; ++n) {
          const T* p = partials.data() + size_t(n) * Cout * K;
          for (size_t i = 0; i < size_t(Cout) * K; ++i) gw[i] += p[i];
        }
      }
      if (bn && bn->requires_grad) {
        T* gb = bn->ensure_grad().data();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Cout; ++co) {
            const T* row = gy + (size_t(n) * Cout + co) * plane;
            T s = 0;
            for (size_t i = 0; i < plane; ++i) s += row[i];
            gb[co] += s;
          }
      }
    }));
}

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, int stride, int pad) {
  return conv2d(x, w, Value<T>(), stride, pad);
}

/// Replicate-pad the two spatial axes by p.
template <typename T>
Value<T> pad_replicate2d(const Value<T>& x, int p) {
  require_config(x.val().rank() == 4, "pad_replicate2d: rank must be 4");
  const int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  const int Ho = H + 2 * p, Wo = W + 2 * p;
  Tensor<T> out({N, C, Ho, Wo});
  const T* xp = x.val().data();
  T* op = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* in = xp + size_t(nc) * H * W;
    T* o = op + size_t(nc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y) {
      const int iy = std::clamp(y - p, 0, H - 1);
      for (int x2 = 0; x2 < Wo; ++x2) {
        const int ix = std::clamp(x2 - p, 0, W - 1);
        o[size_t(y) * Wo + x2] = in[size_t(iy) * W + ix];
      }
    }
  }
  auto xn = x.node();
  return Value<T>(detail::make_node<T>(std::move(out), {xn}, [xn, N, C, H, W, p, Ho, Wo](Node<T>& nd) {
    T* gx = xn->ensure_grad().data();
    const T* gy = nd.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      T* g = gx + size_t(nc) * H * W;
      const T* gyp = gy + size_t(nc) * Ho * Wo;
      for (int y = 0; y < Ho; ++y) {
        const int iy = std::clamp(y - p, 0, H - 1);
        for (int x2 = 0; x2 < Wo; ++x2) {
          const int ix = std::clamp(x2 - p, 0, W - 1);
          g[size_t(iy) * W + ix] += gyp[size_t(y) * Wo + x2];
        }
      }
    }
  }));
}

template <typename T>
Value<T> upsample2x_nearest(const Value<T>& x) {
  require_config(x.val().rank() == 4, "upsample2x: rank must be 4");
  const int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  Tensor<T> out({N, C, 2 * H, 2 * W});
  const T* xp = x.val().data();
  T* op = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* in = xp + size_t(nc) * H * W;
    T* o = op + size_t(nc) * 4 * H * W;
    for (int y = 0; y < 2 * H; ++y)
      for (int x2 = 0; x2 < 2 * W; ++x2)
        o[size_t(y) * 2 * W + x2] = in[size_t(y / 2) * W + x2 / 2];
  }
  auto xn = x.node();
  return Value<T>(detail::make_node<T>(std::move(out), {xn}, [xn, N, C, H, W](Node<T>& nd) {
    T* gx = xn->ensure_grad().data();
    const T* gy = nd.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      T* g = gx + size_t(nc) * H * W;
      const T* gyp = gy + size_t(nc) * 4 * H * W;
      for (int y = 0; y < 2 * H; ++y)
        for (int x2 = 0; x2 < 2 * W; ++x2)
          g[size_t(y / 2) * W + x2 / 2] += gyp[size_t(y) * 2 * W + x2];
    }
  }));
}

/// 2x2 average pooling; spatial dims must be even.
template <typename T>
Value<T> avgpool2x2(const Value<T>& x) {
  require_config(x.val().rank() == 4, "avgpool2x2: rank must be 4");
  const int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  require_config(H % 2 == 0 && W % 2 == 0, "avgpool2x2: odd spatial dims");
  Tensor<T> out({N, C, H / 2, W / 2});
  const T* xp = x.val().data();
  T* op = out.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* in = xp + size_t(nc) * H * W;
    T* o = op + size_t(nc) * (H / 2) * (W / 2);
    for (int y = 0; y < H / 2; ++y)
      for (int x2 = 0; x2 < W / 2; ++x2)
        o[size_t(y) * (W / 2) + x2] =
            (in[size_t(2 * y) * W + 2 * x2] + in[size_t(2 * y) * W + 2 * x2 + 1] +
             in[size_t(2 * y + 1) * W + 2 * x2] + in[size_t(2 * y + 1) * W + 2 * x2 + 1]) /
            T(4);
  }
  auto xn = x.node();
  return Value<T>(detail::make_node<T>(std::move(out), {xn}, [xn, N, C, H, W](Node<T>& nd) {
    T* gx = xn->ensure_grad().data();
    const T* gy = nd.grad.data();
    for (int nc = 0; nc < N * C; ++nc) {
      T* g = gx + size_t(nc) * H * W;
      const T* gyp = gy + size_t(nc) * (H / 2) * (W / 2);
      for (int y = 0; y < H / 2; ++y)
        for (int x2 = 0; x2 < W / 2; ++x2) {
          const T q = gyp[size_t(y) * (W / 2) + x2] / T(4);
          g[size_t(2 * y) * W + 2 * x2] += q;
          g[size_t(2 * y) * W + 2 * x2 + 1] += q;
          g[size_t(2 * y + 1) * W + 2 * x2] += q;
          g[size_t(2 * y + 1) * W + 2 * x2 + 1] += q;
        }
    }
  }));
}

/// Backward bilinear warp: out(y,x) = img(y + v(y,x), x + u(y,x)),
/// samples clamped to the border. flow is [N,2,H,W] with u first.
/// Differentiable in both the image and the flow.
template <typename T>
Value<T> bilinear_warp(const Value<T>& img, const Value<T>& flow) {
  require_config(img.val().rank() == 4 && flow.val().rank() == 4,
                 "bilinear_warp: rank must be 4");
  const int N = img.val().dim(0), C = img.val().dim(1), H = img.val().dim(2),
            W = img.val().dim(3);
  require_config(flow.val().dim(0) == N && flow.val().dim(1) == 2 &&
                     flow.val().dim(2) == H && flow.val().dim(3) == W,
                 "bilinear_warp: flow shape mismatch");
  Tensor<T> out({N, C, H, W});
  const T* ip = img.val().data();
  const T* fp = flow.val().data();
  T* op = out.data();
  const size_t hw = size_t(H) * W;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int n = 0; n < N; ++n) {
    const T* u = fp + size_t(n) * 2 * hw;
    const T* v = u + hw;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const size_t i = size_t(y) * W + x;
        T xs = T(x) + u[i], ys = T(y) + v[i];
        xs = std::clamp(xs, T(0), T(W - 1));
        ys = std::clamp(ys, T(0), T(H - 1));
        const int x0 = std::min(int(std::floor(xs)), W - 2 >= 0 ? W - 2 : 0);
        const int y0 = std::min(int(std::floor(ys)), H - 2 >= 0 ? H - 2 : 0);
        const T fx = xs - T(x0), fy = ys - T(y0);
        for (int c = 0; c < C; ++c) {
          const T* pl = ip + (size_t(n) * C + c) * hw;
          const T i00 = pl[size_t(y0) * W + x0];
          const T i01 = pl[size_t(y0) * W + std::min(x0 + 1, W - 1)];
          const T i10 = pl[size_t(std::min(y0 + 1, H - 1)) * W + x0];
          const T i11 = pl[size_t(std::min(y0 + 1, H - 1)) * W + std::min(x0 + 1, W - 1)];
          op[(size_t(n) * C + c) * hw + i] =
              (T(1) - fy) * ((T(1) - fx) * i00 + fx * i01) +
              fy * ((T(1) - fx) * i10 + fx * i11);
        }
      }
  }
  auto in_ = img.node(); auto fn = flow.node();
  return Value<T>(detail::make_node<T>(std::move(out), {in_, fn},
    [in_, fn, N, C, H, W, hw](Node<T>& nd) {
      const T* gy = nd.grad.data();
      T* gimg = in_->requires_grad ? in_->ensure_grad().data() : nullptr;
      T* gflow = fn->requires_grad ? fn->ensure_grad().data() : nullptr;
      // sample-n slices of both gradients are private to iteration n
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (int n = 0; n < N; ++n) {
        const T* u = fn->val.data() + size_t(n) * 2 * hw;
        const T* v = u + hw;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const size_t i = size_t(y) * W + x;
            T xs = T(x) + u[i], ys = T(y) + v[i];
            const bool cx = xs <= T(0) || xs >= T(W - 1);
            const bool cy = ys <= T(0) || ys >= T(H - 1);
            xs = std::clamp(xs, T(0), T(W - 1));
            ys = std::clamp(ys, T(0), T(H - 1));
            const int x0 = std::min(int(std::floor(xs)), W - 2 >= 0 ? W - 2 : 0);
            const int y0 = std::min(int(std::floor(ys)), H - 2 >= 0 ? H - 2 : 0);
            const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const T fx = xs - T(x0), fy = ys - T(y0);
            T du = 0, dv = 0;
            for (int c = 0; c < C; ++c) {
              const T g = gy[(size_t(n) * C + c) * hw + i];
              if (g == T(0)) continue;
              const T* pl = in_->val.data() + (size_t(n) * C + c) * hw;
              const T i00 = pl[size_t(y0) * W + x0], i01 = pl[size_t(y0) * W + x1];
              const T i10 = pl[size_t(y1) * W + x0], i11 = pl[size_t(y1) * W + x1];
              if (gimg) {
                T* gp = gimg + (size_t(n) * C + c) * hw;
                gp[size_t(y0) * W + x0] += g * (T(1) - fy) * (T(1) - fx);
                gp[size_t(y0) * W + x1] += g * (T(1) - fy) * fx;
                gp[size_t(y1) * W + x0] += g * fy * (T(1) - fx);
                gp[size_t(y1) * W + x1] += g * fy * fx;
              }
              du += g * ((T(1) - fy) * (i01 - i00) + fy * (i11 - i10));
              dv += g * ((T(1) - fx) * (i10 - i00) + fx * (i11 - i01));
            }
            if (gflow) {
              if (!cx) gflow[size_t(n) * 2 * hw + i] += du;
              if (!cy) gflow[(size_t(n) * 2 + 1) * hw + i] += dv;
            }
          }
      }
    }));
}

/// Weighted sum over the channel axis: [N,C,H,W] -> [N,1,H,W].
template <typename T>
Value<T> channel_weighted_sum(const Value<T>& x, const std::vector<T>& weights) {
  require_config(x.val().rank() == 4, "channel_weighted_sum: rank must be 4");
  const int N = x.val().dim(0), C = x.val().dim(1), H = x.val().dim(2), W = x.val().dim(3);
  require_config(int(weights.size()) == C, "channel_weighted_sum: weight count");
  const size_t hw = size_t(H) * W;
  Tensor<T> out({N, 1, H, W});
  const T* xp = x.val().data();
  for (int n = 0; n < N; ++n) {
    T* o = out.data() + size_t(n) * hw;
    for (size_t i = 0; i < hw; ++i) o[i] = T(0);
    for (int c = 0; c < C; ++c) {
      const T wv = weights[size_t(c)];
      const T* in = xp + (size_t(n) * C + c) * hw;
      for (size_t i = 0; i < hw; ++i) o[i] += wv * in[i];
    }
  }
  auto xn = x.node();
  return Value<T>(detail::make_node<T>(std::move(out), {xn}, [xn, weights, N, C, hw](Node<T>& nd) {
    T* gx = xn->ensure_grad().data();
    const T* gy = nd.grad.data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const T wv = weights[size_t(c)];
        T* g = gx + (size_t(n) * C + c) * hw;
        const T* gyp = gy + size_t(n) * hw;
        for (size_t i = 0; i < hw; ++i) g[i] += wv * gyp[i];
      }
  }));
}

}  // namespace flowface::ad
