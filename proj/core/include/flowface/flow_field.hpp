#pragma once

#include <algorithm>
#include <cmath>

#include "flowface/tensor.hpp"

namespace flowface {

/// Axis-aligned integer rectangle, half-open: [x0,x1) x [y0,y1).
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return width() <= 0 || height() <= 0; }
  Rect clamped(int w, int h) const {
    return {std::clamp(x0, 0, w), std::clamp(y0, 0, h), std::clamp(x1, 0, w),
            std::clamp(y1, 0, h)};
  }
  bool inside(int w, int h) const {
    return x0 >= 0 && y0 >= 0 && x1 <= w && y1 <= h && x0 <= x1 && y0 <= y1;
  }
  Rect union_with(const Rect& o) const {
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1),
            std::max(y1, o.y1)};
  }
};

/// Dense displacement field in pixels/frame. For a frame pair (t, t+1)
/// the convention is warp(frame_t, flow) == frame_{t+1}: the vector at
/// (y,x) points from the frame_{t+1} pixel back to where that content
/// sat in frame_t.
struct FlowField {
  Tensor<float> u, v;  // each H x W

  FlowField() = default;
  FlowField(int h, int w) : u({h, w}), v({h, w}) {}
  int height() const { return u.rank() == 2 ? u.dim(0) : 0; }
  int width() const { return u.rank() == 2 ? u.dim(1) : 0; }
};

/// Sub-rectangle copy. The box must sit inside the field bounds.
inline FlowField crop_flow(const FlowField& f, const Rect& box) {
  require_config(box.inside(f.width(), f.height()),
                 "crop_flow: box outside field bounds");
  FlowField out(box.height(), box.width());
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) {
      out.u.at(y - box.y0, x - box.x0) = f.u.at(y, x);
      out.v.at(y - box.y0, x - box.x0) = f.v.at(y, x);
    }
  return out;
}

/// Bilinear backward warp with border clamp: out(y,x) = img(y+v, x+u).
/// img is H x W x C.
template <typename T>
Tensor<T> warp(const Tensor<T>& img, const FlowField& flow) {
  require_config(img.rank() == 3, "warp: image must be HxWxC");
  const int H = img.dim(0), W = img.dim(1), C = img.dim(2);
  require_config(flow.height() == H && flow.width() == W,
                 "warp: flow shape does not match image");
  Tensor<T> out({H, W, C});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double xs = double(x) + double(flow.u.at(y, x));
      double ys = double(y) + double(flow.v.at(y, x));
      xs = std::clamp(xs, 0.0, double(W - 1));
      ys = std::clamp(ys, 0.0, double(H - 1));
      const int x0 = std::min(int(std::floor(xs)), std::max(W - 2, 0));
      const int y0 = std::min(int(std::floor(ys)), std::max(H - 2, 0));
      const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double fx = xs - x0, fy = ys - y0;
      for (int c = 0; c < C; ++c) {
        const double i00 = double(img.at(y0, x0, c)), i01 = double(img.at(y0, x1, c));
        const double i10 = double(img.at(y1, x0, c)), i11 = double(img.at(y1, x1, c));
        out.at(y, x, c) = T((1 - fy) * ((1 - fx) * i00 + fx * i01) +
                            fy * ((1 - fx) * i10 + fx * i11));
      }
    }
  return out;
}

/// Cosine similarity of two fields flattened to (u..., v...) vectors.
/// Returns 0 when either field is (near) all-zero.
inline double flow_cosine(const FlowField& a, const FlowField& b) {
  require_config(a.u.same_shape(b.u), "flow_cosine: shape mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.u.numel(); ++i) {
    dot += double(a.u[i]) * b.u[i] + double(a.v[i]) * b.v[i];
    na += double(a.u[i]) * a.u[i] + double(a.v[i]) * a.v[i];
    nb += double(b.u[i]) * b.u[i] + double(b.v[i]) * b.v[i];
  }
  if (na < 1e-20 || nb < 1e-20) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double flow_max_magnitude(const FlowField& f) {
  double m = 0;
  for (size_t i = 0; i < f.u.numel(); ++i)
    m = std::max(m, std::hypot(double(f.u[i]), double(f.v[i])));
  return m;
}

}  // namespace flowface
