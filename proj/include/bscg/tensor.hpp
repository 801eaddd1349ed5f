#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "bscg/errors.hpp"

namespace bscg {

// Dense rank-4 tensor, NCHW, row-major, contiguous. The scalar type is a
// template parameter: float for training/inference, double for gradient
// checking and metric oracles.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(size_t(n_) * c_ * h_ * w_, T(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw ShapeError("Tensor4: negative dimension in " + shape_str(n_, c_, h_, w_));
  }

  static Tensor4 zeros(int n, int c, int h, int w) { return Tensor4(n, c, h, w); }

  static Tensor4 zeros_like(const Tensor4& other) {
    return Tensor4(other.n, other.c, other.h, other.w);
  }

  static Tensor4 full(int n, int c, int h, int w, T v) {
    Tensor4 t(n, c, h, w);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor4 scalar(T v) { return full(1, 1, 1, 1, v); }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  size_t plane() const { return size_t(h) * w; }

  size_t index(int in, int ic, int iy, int ix) const {
    return ((size_t(in) * c + ic) * h + iy) * w + ix;
  }

  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  T at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  T* row(int in, int ic, int iy) { return data.data() + index(in, ic, iy, 0); }
  const T* row(int in, int ic, int iy) const { return data.data() + index(in, ic, iy, 0); }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  bool is_scalar() const { return n == 1 && c == 1 && h == 1 && w == 1; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  std::string shape_str() const { return shape_str(n, c, h, w); }

  static std::string shape_str(int n, int c, int h, int w) {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

template <class Dst, class Src>
Tensor4<Dst> tensor_cast(const Tensor4<Src>& x) {
  Tensor4<Dst> out(x.n, x.c, x.h, x.w);
  for (size_t i = 0; i < x.size(); ++i) out.data[i] = Dst(x.data[i]);
  return out;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace bscg
