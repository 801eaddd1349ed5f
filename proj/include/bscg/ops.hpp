#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "bscg/autodiff.hpp"
#include "bscg/params.hpp"
#include "bscg/tensor.hpp"

namespace bscg {
namespace detail {

// ---------------------------------------------------------------- conv2d ---
// Cross-correlation, weight layout [out_c, in_c, kh, kw], bias [1, out_c, 1, 1].

inline int conv_out_extent(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

template <class T>
Tensor4<T> conv2d_fwd(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b,
                      int s, int p, int d) {
  const int oh = conv_out_extent(x.h, w.h, s, p, d);
  const int ow = conv_out_extent(x.w, w.w, s, p, d);
  Tensor4<T> y(x.n, w.n, oh, ow);
  for (int in = 0; in < x.n; ++in)
    for (int oc = 0; oc < w.n; ++oc) {
      T bias = b.data[oc];
      T* plane = y.row(in, oc, 0);
      std::fill(plane, plane + size_t(oh) * ow, bias);
    }
  for (int in = 0; in < x.n; ++in)
    for (int oc = 0; oc < w.n; ++oc)
      for (int ic = 0; ic < x.c; ++ic)
        for (int kh = 0; kh < w.h; ++kh)
          for (int kw = 0; kw < w.w; ++kw) {
            const T wv = w.at(oc, ic, kh, kw);
            const int xoff = kw * d - p;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * s + kh * d - p;
              if (iy < 0 || iy >= x.h) continue;
              const T* xr = x.row(in, ic, iy);
              T* yr = y.row(in, oc, oy);
              // valid ox range: 0 <= ox*s + xoff < x.w
              int ox0 = xoff < 0 ? (-xoff + s - 1) / s : 0;
              int ox1 = std::min(ow, (x.w - xoff + s - 1) / s);
              if (s == 1) {
                const T* xs = xr + xoff;
                for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xs[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[ox * s + xoff];
              }
            }
          }
  return y;
}

template <class T>
void conv2d_bwd_x(const Tensor4<T>& gy, const Tensor4<T>& w, Tensor4<T>& gx,
                  int s, int p, int d) {
  for (int in = 0; in < gx.n; ++in)
    for (int oc = 0; oc < w.n; ++oc)
      for (int ic = 0; ic < gx.c; ++ic)
        for (int kh = 0; kh < w.h; ++kh)
          for (int kw = 0; kw < w.w; ++kw) {
            const T wv = w.at(oc, ic, kh, kw);
            const int xoff = kw * d - p;
            for (int oy = 0; oy < gy.h; ++oy) {
              const int iy = oy * s + kh * d - p;
              if (iy < 0 || iy >= gx.h) continue;
              T* gxr = gx.row(in, ic, iy);
              const T* gyr = gy.row(in, oc, oy);
              int ox0 = xoff < 0 ? (-xoff + s - 1) / s : 0;
              int ox1 = std::min(gy.w, (gx.w - xoff + s - 1) / s);
              if (s == 1) {
                T* gxs = gxr + xoff;
                for (int ox = ox0; ox < ox1; ++ox) gxs[ox] += wv * gyr[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox) gxr[ox * s + xoff] += wv * gyr[ox];
              }
            }
          }
}

template <class T>
void conv2d_bwd_w(const Tensor4<T>& gy, const Tensor4<T>& x, Tensor4<T>& gw,
                  int s, int p, int d) {
  for (int in = 0; in < x.n; ++in)
    for (int oc = 0; oc < gw.n; ++oc)
      for (int ic = 0; ic < gw.c; ++ic)
        for (int kh = 0; kh < gw.h; ++kh)
          for (int kw = 0; kw < gw.w; ++kw) {
            const int xoff = kw * d - p;
            T acc = 0;
            for (int oy = 0; oy < gy.h; ++oy) {
              const int iy = oy * s + kh * d - p;
              if (iy < 0 || iy >= x.h) continue;
              const T* xr = x.row(in, ic, iy);
              const T* gyr = gy.row(in, oc, oy);
              int ox0 = xoff < 0 ? (-xoff + s - 1) / s : 0;
              int ox1 = std::min(gy.w, (x.w - xoff + s - 1) / s);
              if (s == 1) {
                const T* xs = xr + xoff;
                for (int ox = ox0; ox < ox1; ++ox) acc += gyr[ox] * xs[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox) acc += gyr[ox] * xr[ox * s + xoff];
              }
            }
            gw.at(oc, ic, kh, kw) += acc;
          }
}

template <class T>
void conv2d_bwd_b(const Tensor4<T>& gy, Tensor4<T>& gb) {
  for (int in = 0; in < gy.n; ++in)
    for (int oc = 0; oc < gy.c; ++oc) {
      const T* plane = gy.row(in, oc, 0);
      T acc = 0;
      for (size_t i = 0; i < gy.plane(); ++i) acc += plane[i];
      gb.data[oc] += acc;
    }
}

// ------------------------------------------------------- conv_transpose2d ---
// Weight layout [in_c, out_c, kh, kw]; output extent (in-1)*stride + k.

template <class T>
Tensor4<T> tconv_fwd(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b, int s) {
  const int oh = (x.h - 1) * s + w.h;
  const int ow = (x.w - 1) * s + w.w;
  Tensor4<T> y(x.n, w.c, oh, ow);
  for (int in = 0; in < x.n; ++in)
    for (int oc = 0; oc < w.c; ++oc) {
      T bias = b.data[oc];
      T* plane = y.row(in, oc, 0);
      std::fill(plane, plane + size_t(oh) * ow, bias);
    }
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oc = 0; oc < w.c; ++oc)
        for (int kh = 0; kh < w.h; ++kh)
          for (int kw = 0; kw < w.w; ++kw) {
            const T wv = w.at(ic, oc, kh, kw);
            for (int iy = 0; iy < x.h; ++iy) {
              const T* xr = x.row(in, ic, iy);
              T* yr = y.row(in, oc, iy * s + kh) + kw;
              for (int ix = 0; ix < x.w; ++ix) yr[ix * s] += wv * xr[ix];
            }
          }
  return y;
}

template <class T>
void tconv_bwd_x(const Tensor4<T>& gy, const Tensor4<T>& w, Tensor4<T>& gx, int s) {
  for (int in = 0; in < gx.n; ++in)
    for (int ic = 0; ic < gx.c; ++ic)
      for (int oc = 0; oc < w.c; ++oc)
        for (int kh = 0; kh < w.h; ++kh)
          for (int kw = 0; kw < w.w; ++kw) {
            const T wv = w.at(ic, oc, kh, kw);
            for (int iy = 0; iy < gx.h; ++iy) {
              T* gxr = gx.row(in, ic, iy);
              const T* gyr = gy.row(in, oc, iy * s + kh) + kw;
              for (int ix = 0; ix < gx.w; ++ix) gxr[ix] += wv * gyr[ix * s];
            }
          }
}

template <class T>
void tconv_bwd_w(const Tensor4<T>& gy, const Tensor4<T>& x, Tensor4<T>& gw, int s) {
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oc = 0; oc < gw.c; ++oc)
        for (int kh = 0; kh < gw.h; ++kh)
          for (int kw = 0; kw < gw.w; ++kw) {
            T acc = 0;
            for (int iy = 0; iy < x.h; ++iy) {
              const T* xr = x.row(in, ic, iy);
              const T* gyr = gy.row(in, oc, iy * s + kh) + kw;
              for (int ix = 0; ix < x.w; ++ix) acc += xr[ix] * gyr[ix * s];
            }
            gw.at(ic, oc, kh, kw) += acc;
          }
}

// -------------------------------------------------------- bilinear_resize ---
// Half-pixel source mapping (align_corners = false) with border replication.

template <class T>
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<T> f;
};

template <class T>
LerpAxis<T> make_lerp_axis(int in, int out) {
  LerpAxis<T> ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.f.resize(out);
  const T scale = T(in) / T(out);
  for (int o = 0; o < out; ++o) {
    T s = (T(o) + T(0.5)) * scale - T(0.5);
    T fl = std::floor(s);
    int i = int(fl);
    ax.f[o] = s - fl;
    ax.i0[o] = std::clamp(i, 0, in - 1);
    ax.i1[o] = std::clamp(i + 1, 0, in - 1);
  }
  return ax;
}

template <class T>
Tensor4<T> resize_fwd(const Tensor4<T>& x, int oh, int ow) {
  if (oh == x.h && ow == x.w) return x;  // identity, bitwise
  Tensor4<T> y(x.n, x.c, oh, ow);
  const LerpAxis<T> ay = make_lerp_axis<T>(x.h, oh);
  const LerpAxis<T> axw = make_lerp_axis<T>(x.w, ow);
  for (int in = 0; in < x.n; ++in)
    for (int ic = 0; ic < x.c; ++ic)
      for (int oy = 0; oy < oh; ++oy) {
        const T* r0 = x.row(in, ic, ay.i0[oy]);
        const T* r1 = x.row(in, ic, ay.i1[oy]);
        const T fy = ay.f[oy];
        T* yr = y.row(in, ic, oy);
        for (int ox = 0; ox < ow; ++ox) {
          const int x0 = axw.i0[ox], x1 = axw.i1[ox];
          const T fx = axw.f[ox];
          const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
          const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
          yr[ox] = top + fy * (bot - top);
        }
      }
  return y;
}

template <class T>
void resize_bwd(const Tensor4<T>& gy, Tensor4<T>& gx) {
  if (gy.h == gx.h && gy.w == gx.w) {
    for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += gy.data[i];
    return;
  }
  const LerpAxis<T> ay = make_lerp_axis<T>(gx.h, gy.h);
  const LerpAxis<T> axw = make_lerp_axis<T>(gx.w, gy.w);
  for (int in = 0; in < gy.n; ++in)
    for (int ic = 0; ic < gy.c; ++ic)
      for (int oy = 0; oy < gy.h; ++oy) {
        T* r0 = gx.row(in, ic, ay.i0[oy]);
        T* r1 = gx.row(in, ic, ay.i1[oy]);
        const T fy = ay.f[oy];
        const T* gyr = gy.row(in, ic, oy);
        for (int ox = 0; ox < gy.w; ++ox) {
          const int x0 = axw.i0[ox], x1 = axw.i1[ox];
          const T fx = axw.f[ox];
          const T g = gyr[ox];
          r0[x0] += (T(1) - fy) * (T(1) - fx) * g;
          r0[x1] += (T(1) - fy) * fx * g;
          r1[x0] += fy * (T(1) - fx) * g;
          r1[x1] += fy * fx * g;
        }
      }
}

// ------------------------------------------------------------ grid_sample ---
// Flow-field warp: out[n,c,i,j] samples x at (i + dy, j + dx) where the flow
// holds raw pixel displacements, channel 0 = dx, channel 1 = dy. Sample
// coordinates are clamped to the border (replication); the clamp kills the
// flow gradient outside the valid range, matching the forward's flat region.

template <class T>
Tensor4<T> grid_fwd(const Tensor4<T>& x, const Tensor4<T>& flow) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  for (int in = 0; in < x.n; ++in)
    for (int i = 0; i < x.h; ++i) {
      const T* fdx = flow.row(in, 0, i);
      const T* fdy = flow.row(in, 1, i);
      for (int j = 0; j < x.w; ++j) {
        T sy = T(i) + fdy[j];
        T sx = T(j) + fdx[j];
        sy = std::clamp(sy, T(0), T(x.h - 1));
        sx = std::clamp(sx, T(0), T(x.w - 1));
        const int y0 = int(std::floor(sy));
        const int x0 = int(std::floor(sx));
        const T fy = sy - T(y0);
        const T fx = sx - T(x0);
        const int y1 = std::min(y0 + 1, x.h - 1);
        const int x1 = std::min(x0 + 1, x.w - 1);
        for (int ic = 0; ic < x.c; ++ic) {
          const T* r0 = x.row(in, ic, y0);
          const T* r1 = x.row(in, ic, y1);
          const T top = r0[x0] + fx * (r0[x1] - r0[x0]);
          const T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
          y.row(in, ic, i)[j] = top + fy * (bot - top);
        }
      }
    }
  return y;
}

template <class T>
void grid_bwd(const Tensor4<T>& gy, const Tensor4<T>& x, const Tensor4<T>& flow,
              Tensor4<T>* gx, Tensor4<T>* gflow) {
  for (int in = 0; in < x.n; ++in)
    for (int i = 0; i < x.h; ++i) {
      const T* fdx = flow.row(in, 0, i);
      const T* fdy = flow.row(in, 1, i);
      for (int j = 0; j < x.w; ++j) {
        T sy = T(i) + fdy[j];
        T sx = T(j) + fdx[j];
        const bool cy = sy < T(0) || sy > T(x.h - 1);
        const bool cx = sx < T(0) || sx > T(x.w - 1);
        sy = std::clamp(sy, T(0), T(x.h - 1));
        sx = std::clamp(sx, T(0), T(x.w - 1));
        const int y0 = int(std::floor(sy));
        const int x0 = int(std::floor(sx));
        const T fy = sy - T(y0);
        const T fx = sx - T(x0);
        const int y1 = std::min(y0 + 1, x.h - 1);
        const int x1 = std::min(x0 + 1, x.w - 1);
        T dsx = 0, dsy = 0;
        for (int ic = 0; ic < x.c; ++ic) {
          const T g = gy.row(in, ic, i)[j];
          const T* r0 = x.row(in, ic, y0);
          const T* r1 = x.row(in, ic, y1);
          if (gx) {
            T* q0 = gx->row(in, ic, y0);
            T* q1 = gx->row(in, ic, y1);
            q0[x0] += (T(1) - fy) * (T(1) - fx) * g;
            q0[x1] += (T(1) - fy) * fx * g;
            q1[x0] += fy * (T(1) - fx) * g;
            q1[x1] += fy * fx * g;
          }
          if (gflow) {
            dsx += g * ((T(1) - fy) * (r0[x1] - r0[x0]) + fy * (r1[x1] - r1[x0]));
            dsy += g * ((T(1) - fx) * (r1[x0] - r0[x0]) + fx * (r1[x1] - r0[x1]));
          }
        }
        if (gflow) {
          if (!cx) gflow->row(in, 0, i)[j] += dsx;
          if (!cy) gflow->row(in, 1, i)[j] += dsy;
        }
      }
    }
}

}  // namespace detail

// ------------------------------------------------------------- graph ops ---

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
              int padding = 0, int dilation = 1) {
  const Tensor4<T>& Xv = x.value();
  const Tensor4<T>& W = w.value();
  const Tensor4<T>& B = b.value();
  require(stride >= 1 && padding >= 0 && dilation >= 1, "conv2d: bad geometry");
  require(W.c == Xv.c, "conv2d: channel mismatch, input " + Xv.shape_str() +
                            " vs weight " + W.shape_str());
  require(B.c == W.n && B.n == 1 && B.h == 1 && B.w == 1,
          "conv2d: bias must be 1x" + std::to_string(W.n) + "x1x1, got " + B.shape_str());
  require(detail::conv_out_extent(Xv.h, W.h, stride, padding, dilation) >= 1 &&
              detail::conv_out_extent(Xv.w, W.w, stride, padding, dilation) >= 1,
          "conv2d: output would be empty for input " + Xv.shape_str() + " weight " +
              W.shape_str());

  auto out = std::make_shared<Node<T>>();
  out->value = detail::conv2d_fwd(Xv, W, B, stride, padding, dilation);
  out->parents = {x.node, w.node, b.node};
  out->needs_grad = x.node->needs_grad || w.node->needs_grad || b.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node, wn = w.node, bn = b.node;
    const int s = stride, p = padding, d = dilation;
    out->backprop = [xn, wn, bn, s, p, d](Node<T>& self) {
      if (xn->needs_grad) {
        xn->ensure_grad();
        detail::conv2d_bwd_x(self.grad, wn->value, xn->grad, s, p, d);
      }
      if (wn->needs_grad) {
        wn->ensure_grad();
        detail::conv2d_bwd_w(self.grad, xn->value, wn->grad, s, p, d);
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        detail::conv2d_bwd_b(self.grad, bn->grad);
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride) {
  const Tensor4<T>& Xv = x.value();
  const Tensor4<T>& W = w.value();
  const Tensor4<T>& B = b.value();
  require(stride >= 1, "conv_transpose2d: bad stride");
  require(W.n == Xv.c, "conv_transpose2d: channel mismatch, input " + Xv.shape_str() +
                            " vs weight " + W.shape_str());
  require(B.c == W.c && B.n == 1 && B.h == 1 && B.w == 1,
          "conv_transpose2d: bias must be 1x" + std::to_string(W.c) + "x1x1, got " +
              B.shape_str());

  auto out = std::make_shared<Node<T>>();
  out->value = detail::tconv_fwd(Xv, W, B, stride);
  out->parents = {x.node, w.node, b.node};
  out->needs_grad = x.node->needs_grad || w.node->needs_grad || b.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node, wn = w.node, bn = b.node;
    const int s = stride;
    out->backprop = [xn, wn, bn, s](Node<T>& self) {
      if (xn->needs_grad) {
        xn->ensure_grad();
        detail::tconv_bwd_x(self.grad, wn->value, xn->grad, s);
      }
      if (wn->needs_grad) {
        wn->ensure_grad();
        detail::tconv_bwd_w(self.grad, xn->value, wn->grad, s);
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        detail::conv2d_bwd_b(self.grad, bn->grad);
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> bilinear_resize(const Var<T>& x, int oh, int ow) {
  require(oh >= 1 && ow >= 1, "bilinear_resize: target must be at least 1x1");
  auto out = std::make_shared<Node<T>>();
  out->value = detail::resize_fwd(x.value(), oh, ow);
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn](Node<T>& self) {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      detail::resize_bwd(self.grad, xn->grad);
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> grid_sample(const Var<T>& x, const Var<T>& flow) {
  const Tensor4<T>& Xv = x.value();
  const Tensor4<T>& F = flow.value();
  require(F.c == 2, "grid_sample: flow must have 2 channels (dx, dy), got " + F.shape_str());
  require(F.n == Xv.n && F.h == Xv.h && F.w == Xv.w,
          "grid_sample: flow " + F.shape_str() + " does not match input " + Xv.shape_str());

  auto out = std::make_shared<Node<T>>();
  out->value = detail::grid_fwd(Xv, F);
  out->parents = {x.node, flow.node};
  out->needs_grad = x.node->needs_grad || flow.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node, fn = flow.node;
    out->backprop = [xn, fn](Node<T>& self) {
      Tensor4<T>* gx = nullptr;
      Tensor4<T>* gf = nullptr;
      if (xn->needs_grad) {
        xn->ensure_grad();
        gx = &xn->grad;
      }
      if (fn->needs_grad) {
        fn->ensure_grad();
        gf = &fn->grad;
      }
      detail::grid_bwd(self.grad, xn->value, fn->value, gx, gf);
    };
  }
  return Var<T>(out);
}

// Validates the limited broadcast: shapes equal, or one operand has c == 1
// with n/h/w matching (a single-channel map applied across channels).
template <class T>
void check_binary_shapes(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
  if (a.same_shape(b)) return;
  const bool bc = (a.c == 1 || b.c == 1) && a.n == b.n && a.h == b.h && a.w == b.w;
  require(bc, std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                  " neither match nor single-channel-broadcast");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Tensor4<T>& A = a.value();
  const Tensor4<T>& B = b.value();
  check_binary_shapes(A, B, "add");
  const bool bcast_b = B.c == 1 && A.c != 1;
  const bool bcast_a = A.c == 1 && B.c != 1;
  const Tensor4<T>& big = bcast_a ? B : A;
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>::zeros_like(big);
  for (int in = 0; in < big.n; ++in)
    for (int ic = 0; ic < big.c; ++ic) {
      const T* ra = a.value().row(in, bcast_a ? 0 : ic, 0);
      const T* rb = b.value().row(in, bcast_b ? 0 : ic, 0);
      T* ro = out->value.row(in, ic, 0);
      for (size_t i = 0; i < big.plane(); ++i) ro[i] = ra[i] + rb[i];
    }
  out->parents = {a.node, b.node};
  out->needs_grad = a.node->needs_grad || b.node->needs_grad;
  if (out->needs_grad) {
    auto an = a.node, bn = b.node;
    out->backprop = [an, bn, bcast_a, bcast_b](Node<T>& self) {
      const Tensor4<T>& g = self.grad;
      auto acc = [&](const std::shared_ptr<Node<T>>& n, bool bcast) {
        n->ensure_grad();
        if (!bcast) {
          for (size_t i = 0; i < g.size(); ++i) n->grad.data[i] += g.data[i];
        } else {
          for (int in = 0; in < g.n; ++in)
            for (int ic = 0; ic < g.c; ++ic) {
              const T* gr = g.row(in, ic, 0);
              T* nr = n->grad.row(in, 0, 0);
              for (size_t i = 0; i < g.plane(); ++i) nr[i] += gr[i];
            }
        }
      };
      if (an->needs_grad) acc(an, bcast_a);
      if (bn->needs_grad) acc(bn, bcast_b);
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Tensor4<T>& A = a.value();
  const Tensor4<T>& B = b.value();
  check_binary_shapes(A, B, "mul");
  const bool bcast_b = B.c == 1 && A.c != 1;
  const bool bcast_a = A.c == 1 && B.c != 1;
  const Tensor4<T>& big = bcast_a ? B : A;
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>::zeros_like(big);
  for (int in = 0; in < big.n; ++in)
    for (int ic = 0; ic < big.c; ++ic) {
      const T* ra = A.row(in, bcast_a ? 0 : ic, 0);
      const T* rb = B.row(in, bcast_b ? 0 : ic, 0);
      T* ro = out->value.row(in, ic, 0);
      for (size_t i = 0; i < big.plane(); ++i) ro[i] = ra[i] * rb[i];
    }
  out->parents = {a.node, b.node};
  out->needs_grad = a.node->needs_grad || b.node->needs_grad;
  if (out->needs_grad) {
    auto an = a.node, bn = b.node;
    out->backprop = [an, bn, bcast_a, bcast_b](Node<T>& self) {
      const Tensor4<T>& g = self.grad;
      const Tensor4<T>& A2 = an->value;
      const Tensor4<T>& B2 = bn->value;
      if (an->needs_grad) {
        an->ensure_grad();
        for (int in = 0; in < g.n; ++in)
          for (int ic = 0; ic < g.c; ++ic) {
            const T* gr = g.row(in, ic, 0);
            const T* rb = B2.row(in, bcast_b ? 0 : ic, 0);
            T* ra = an->grad.row(in, bcast_a ? 0 : ic, 0);
            for (size_t i = 0; i < g.plane(); ++i) ra[i] += gr[i] * rb[i];
          }
      }
      if (bn->needs_grad) {
        bn->ensure_grad();
        for (int in = 0; in < g.n; ++in)
          for (int ic = 0; ic < g.c; ++ic) {
            const T* gr = g.row(in, ic, 0);
            const T* ra = A2.row(in, bcast_a ? 0 : ic, 0);
            T* rb = bn->grad.row(in, bcast_b ? 0 : ic, 0);
            for (size_t i = 0; i < g.plane(); ++i) rb[i] += gr[i] * ra[i];
          }
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> add_scalar(const Var<T>& x, T k) {
  auto out = std::make_shared<Node<T>>();
  out->value = x.value();
  for (T& v : out->value.data) v += k;
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn](Node<T>& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad.data[i] += self.grad.data[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> mul_scalar(const Var<T>& x, T k) {
  auto out = std::make_shared<Node<T>>();
  out->value = x.value();
  for (T& v : out->value.data) v *= k;
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn, k](Node<T>& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad.data[i] += k * self.grad.data[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> relu(const Var<T>& x) {
  auto out = std::make_shared<Node<T>>();
  out->value = x.value();
  for (T& v : out->value.data) v = v > T(0) ? v : T(0);
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn](Node<T>& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (xn->value.data[i] > T(0)) xn->grad.data[i] += self.grad.data[i];
    };
  }
  return Var<T>(out);
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  auto out = std::make_shared<Node<T>>();
  out->value = x.value();
  for (T& v : out->value.data) v = sigmoid_scalar(v);
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn](Node<T>& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        const T s = self.value.data[i];
        xn->grad.data[i] += self.grad.data[i] * s * (T(1) - s);
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_channels: no operands");
  const Tensor4<T>& first = parts[0].value();
  int total_c = 0;
  for (const auto& p : parts) {
    const Tensor4<T>& v = p.value();
    require(v.n == first.n && v.h == first.h && v.w == first.w,
            "concat_channels: operand " + v.shape_str() + " does not align with " +
                first.shape_str());
    total_c += v.c;
  }
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>(first.n, total_c, first.h, first.w);
  int base = 0;
  for (const auto& p : parts) {
    const Tensor4<T>& v = p.value();
    for (int in = 0; in < v.n; ++in)
      for (int ic = 0; ic < v.c; ++ic)
        std::copy(v.row(in, ic, 0), v.row(in, ic, 0) + v.plane(),
                  out->value.row(in, base + ic, 0));
    base += v.c;
  }
  out->needs_grad = false;
  for (const auto& p : parts) {
    out->parents.push_back(p.node);
    out->needs_grad = out->needs_grad || p.node->needs_grad;
  }
  if (out->needs_grad) {
    auto nodes = out->parents;  // copy of handles, in order
    out->backprop = [nodes](Node<T>& self) {
      int base = 0;
      for (auto& pn : nodes) {
        const int pc = pn->value.c;
        if (pn->needs_grad) {
          pn->ensure_grad();
          for (int in = 0; in < pn->value.n; ++in)
            for (int ic = 0; ic < pc; ++ic) {
              const T* gr = self.grad.row(in, base + ic, 0);
              T* pr = pn->grad.row(in, ic, 0);
              for (size_t i = 0; i < pn->value.plane(); ++i) pr[i] += gr[i];
            }
        }
        base += pc;
      }
    };
  }
  return Var<T>(out);
}

// 2x2 max pooling, stride 2; ties resolve to the first occurrence in row-major
// window order.
template <class T>
Var<T> maxpool2(const Var<T>& x) {
  const Tensor4<T>& X = x.value();
  require(X.h % 2 == 0 && X.w % 2 == 0,
          "maxpool2: spatial dims must be even, got " + X.shape_str());
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>(X.n, X.c, X.h / 2, X.w / 2);
  auto arg = std::make_shared<std::vector<size_t>>(out->value.size());
  size_t oi = 0;
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic)
      for (int oy = 0; oy < X.h / 2; ++oy)
        for (int ox = 0; ox < X.w / 2; ++ox, ++oi) {
          const size_t base = X.index(in, ic, 2 * oy, 2 * ox);
          size_t best = base;
          T bv = X.data[base];
          const size_t cand[3] = {base + 1, base + X.w, base + X.w + 1};
          for (size_t k = 0; k < 3; ++k)
            if (X.data[cand[k]] > bv) {
              bv = X.data[cand[k]];
              best = cand[k];
            }
          out->value.data[oi] = bv;
          (*arg)[oi] = best;
        }
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn, arg](Node<T>& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad.data[(*arg)[i]] += self.grad.data[i];
    };
  }
  return Var<T>(out);
}

// Global average pool to [n, c, 1, 1].
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Tensor4<T>& X = x.value();
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>(X.n, X.c, 1, 1);
  const T inv = T(1) / T(X.plane());
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic) {
      const T* r = X.row(in, ic, 0);
      T acc = 0;
      for (size_t i = 0; i < X.plane(); ++i) acc += r[i];
      out->value.at(in, ic, 0, 0) = acc * inv;
    }
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn, inv](Node<T>& self) {
      xn->ensure_grad();
      for (int in = 0; in < xn->value.n; ++in)
        for (int ic = 0; ic < xn->value.c; ++ic) {
          const T g = self.grad.at(in, ic, 0, 0) * inv;
          T* r = xn->grad.row(in, ic, 0);
          for (size_t i = 0; i < xn->value.plane(); ++i) r[i] += g;
        }
    };
  }
  return Var<T>(out);
}

// Per-channel scaling: x[n,c,h,w] * s[n,c,1,1]. Backbone of the SE block.
template <class T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const Tensor4<T>& X = x.value();
  const Tensor4<T>& S = s.value();
  require(S.n == X.n && S.c == X.c && S.h == 1 && S.w == 1,
          "scale_channels: scale " + S.shape_str() + " does not match input " + X.shape_str());
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>::zeros_like(X);
  for (int in = 0; in < X.n; ++in)
    for (int ic = 0; ic < X.c; ++ic) {
      const T sc = S.at(in, ic, 0, 0);
      const T* r = X.row(in, ic, 0);
      T* o = out->value.row(in, ic, 0);
      for (size_t i = 0; i < X.plane(); ++i) o[i] = r[i] * sc;
    }
  out->parents = {x.node, s.node};
  out->needs_grad = x.node->needs_grad || s.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node, sn = s.node;
    out->backprop = [xn, sn](Node<T>& self) {
      const Tensor4<T>& g = self.grad;
      if (xn->needs_grad) {
        xn->ensure_grad();
        for (int in = 0; in < g.n; ++in)
          for (int ic = 0; ic < g.c; ++ic) {
            const T sc = sn->value.at(in, ic, 0, 0);
            const T* gr = g.row(in, ic, 0);
            T* xr = xn->grad.row(in, ic, 0);
            for (size_t i = 0; i < g.plane(); ++i) xr[i] += gr[i] * sc;
          }
      }
      if (sn->needs_grad) {
        sn->ensure_grad();
        for (int in = 0; in < g.n; ++in)
          for (int ic = 0; ic < g.c; ++ic) {
            const T* gr = g.row(in, ic, 0);
            const T* xr = xn->value.row(in, ic, 0);
            T acc = 0;
            for (size_t i = 0; i < g.plane(); ++i) acc += gr[i] * xr[i];
            sn->grad.at(in, ic, 0, 0) += acc;
          }
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  auto out = std::make_shared<Node<T>>();
  T acc = 0;
  for (const T& v : x.value().data) acc += v;
  out->value = Tensor4<T>::scalar(acc);
  out->parents = {x.node};
  out->needs_grad = x.node->needs_grad;
  if (out->needs_grad) {
    auto xn = x.node;
    out->backprop = [xn](Node<T>& self) {
      xn->ensure_grad();
      const T g = self.grad.data[0];
      for (T& v : xn->grad.data) v += g;
    };
  }
  return Var<T>(out);
}

}  // namespace bscg
