#pragma once

#include <array>
#include <string>

#include "bscg/backbone.hpp"
#include "bscg/layers.hpp"

namespace bscg {

// Saliency-prior modulation of the encoder. The calibrated shallow map M1 and
// a reduced, upsampled E5 are fused into a single-channel prior P'; each
// encoder layer is scaled by (P' + 1) at its own resolution — a gain in
// (1, 2) — and passed through a per-layer SE block.
template <class T>
struct DualAttention {
  Var<T> p;        // cat(M1, up(reduce(E5))), 2*cb channels, full resolution
  Var<T> p_prime;  // sigmoid(1x1 conv), single channel
};

template <class T>
class DffcAttention {
 public:
  DffcAttention() = default;
  DffcAttention(ParameterStore<T>& ps, RandomSource& rng, const std::string& name,
                const BackboneConfig& bk, int cb) {
    reduce_e5_ = Conv2d<T>(ps, rng, name + ".reduce_e5", bk.widths[4], cb, 1);
    att_ = Conv2d<T>(ps, rng, name + ".prior", 2 * cb, 1, 1);
    for (int i = 0; i < 5; ++i)
      se_[i] = SELayer<T>(ps, rng, name + ".se" + std::to_string(i + 1), bk.widths[i],
                          se_reduction_for(bk.widths[i]));
  }

  DualAttention<T> attention(const Var<T>& m1, const Var<T>& e5) const {
    const int H = m1.value().h;
    const int W = m1.value().w;
    DualAttention<T> out;
    Var<T> e5r = bilinear_resize(reduce_e5_(e5), H, W);
    out.p = concat_channels<T>({m1, e5r});
    out.p_prime = sigmoid(att_(out.p));
    return out;
  }

  std::array<Var<T>, 5> modulate(const Var<T>& p_prime, const EncoderPyramid<T>& enc) const {
    std::array<Var<T>, 5> g;
    for (int i = 0; i < 5; ++i) {
      const Var<T>& e = enc.level(i + 1);
      Var<T> prior = bilinear_resize(p_prime, e.value().h, e.value().w);
      Var<T> gated = mul(add_scalar(prior, T(1)), e);
      g[i] = se_[i](gated);
    }
    return g;
  }

 private:
  Conv2d<T> reduce_e5_;
  Conv2d<T> att_;
  std::array<SELayer<T>, 5> se_;
};

// Top-down decoder: project each pyramid level to the working width, start a
// head at 1/16, then four stages of (2x transposed conv, concat with the
// lateral projection, 3x3 fuse) producing d8, d4, d2, d1.
template <class T>
struct DecoderPyramid {
  Var<T> d8, d4, d2, d1;
  const Var<T>& level(int i) const {  // i in {8,4,2,1}
    switch (i) {
      case 8: return d8;
      case 4: return d4;
      case 2: return d2;
      default: return d1;
    }
  }
};

template <class T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore<T>& ps, RandomSource& rng, const std::string& name,
          const BackboneConfig& bk, int cb) {
    for (int i = 0; i < 5; ++i)
      g_[i] = Conv2d<T>(ps, rng, name + ".g" + std::to_string(i + 1), bk.widths[i], cb, 1);
    head_ = Conv2d<T>(ps, rng, name + ".head", cb, cb, 3, 1, Act::relu);
    for (int k = 0; k < 4; ++k) {
      up_[k] = ConvTranspose2d<T>(ps, rng, name + ".up" + std::to_string(k), cb, cb, 2, 2);
      fuse_[k] = Conv2d<T>(ps, rng, name + ".fuse" + std::to_string(k), 2 * cb, cb, 3, 1,
                           Act::relu);
    }
  }

  // feats are the (possibly modulated) pyramid features at encoder widths.
  DecoderPyramid<T> operator()(const std::array<Var<T>, 5>& feats) const {
    std::array<Var<T>, 5> g;
    for (int i = 0; i < 5; ++i) g[i] = g_[i](feats[i]);
    DecoderPyramid<T> out;
    Var<T> x = head_(g[4]);
    for (int k = 0; k < 4; ++k) {
      const int lateral = 3 - k;  // g4, g3, g2, g1
      x = fuse_[k](concat_channels<T>({up_[k](x), g[lateral]}));
      switch (k) {
        case 0: out.d8 = x; break;
        case 1: out.d4 = x; break;
        case 2: out.d2 = x; break;
        case 3: out.d1 = x; break;
      }
    }
    return out;
  }

 private:
  std::array<Conv2d<T>, 5> g_;
  Conv2d<T> head_;
  std::array<ConvTranspose2d<T>, 4> up_;
  std::array<Conv2d<T>, 4> fuse_;
};

}  // namespace bscg
