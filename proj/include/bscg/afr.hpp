#pragma once

#include <array>
#include <string>

#include "bscg/dffc.hpp"
#include "bscg/layers.hpp"

namespace bscg {

// Cross-scale interactive refinement between two adjacent pyramid levels. The
// coarser feature is upsampled one octave, each side derives a single-channel
// sigmoid attention map, and each side's features are amplified by the OTHER
// side's gain (1 + a), a factor confined to (1, 2). The two amplified branches
// are fused by a 1x1 conv back to the working width.
template <class T>
struct CrossState {
  Var<T> coarse_up;
  Var<T> a_coarse, a_fine;  // sigmoid maps, single channel
  Var<T> c1, c2;
  Var<T> fused;
};

template <class T>
class IirCross {
 public:
  IirCross() = default;
  IirCross(ParameterStore<T>& ps, RandomSource& rng, const std::string& name, int cb) {
    att_coarse_a_ = Conv2d<T>(ps, rng, name + ".att_coarse.c0", cb, 1, 3, 1, Act::relu);
    att_coarse_b_ = Conv2d<T>(ps, rng, name + ".att_coarse.c1", 1, 1, 3, 1);
    att_fine_a_ = Conv2d<T>(ps, rng, name + ".att_fine.c0", cb, 1, 3, 1, Act::relu);
    att_fine_b_ = Conv2d<T>(ps, rng, name + ".att_fine.c1", 1, 1, 3, 1);
    pre_fine_ = Conv2d<T>(ps, rng, name + ".pre_fine", cb, cb, 3, 1, Act::relu);
    post_c1_ = Conv2d<T>(ps, rng, name + ".post_c1", cb, cb, 3, 1, Act::relu);
    pre_coarse_ = Conv2d<T>(ps, rng, name + ".pre_coarse", cb, cb, 3, 1, Act::relu);
    post_c2_ = Conv2d<T>(ps, rng, name + ".post_c2", cb, cb, 3, 1, Act::relu);
    merge_ = Conv2d<T>(ps, rng, name + ".merge", 2 * cb, cb, 1);
  }

  CrossState<T> operator()(const Var<T>& coarse, const Var<T>& fine) const {
    const Tensor4<T>& cv = coarse.value();
    const Tensor4<T>& fv = fine.value();
    require(fv.h == 2 * cv.h && fv.w == 2 * cv.w,
            "iir_cross: coarse " + cv.shape_str() + " must be exactly one octave below fine " +
                fv.shape_str());
    CrossState<T> st;
    st.coarse_up = bilinear_resize(coarse, fv.h, fv.w);
    st.a_coarse = sigmoid(att_coarse_b_(att_coarse_a_(st.coarse_up)));
    st.a_fine = sigmoid(att_fine_b_(att_fine_a_(fine)));
    st.c1 = post_c1_(mul(add_scalar(st.a_coarse, T(1)), pre_fine_(fine)));
    st.c2 = post_c2_(mul(add_scalar(st.a_fine, T(1)), pre_coarse_(st.coarse_up)));
    st.fused = merge_(concat_channels<T>({st.c1, st.c2}));
    return st;
  }

 private:
  Conv2d<T> att_coarse_a_, att_coarse_b_, att_fine_a_, att_fine_b_;
  Conv2d<T> pre_fine_, post_c1_, pre_coarse_, post_c2_;
  Conv2d<T> merge_;
};

// Chain of four dilated 3x3 ConvReLU blocks with rates 1..4; each block's
// output is summed with the chain input before feeding the next block (so the
// input shortcuts to every depth) and the receptive field radius tops out at
// 1+2+3+4 = 10 pixels.
template <class T>
class DenseDilated {
 public:
  DenseDilated() = default;
  DenseDilated(ParameterStore<T>& ps, RandomSource& rng, const std::string& name, int cb) {
    for (int r = 1; r <= 4; ++r)
      conv_[r - 1] = Conv2d<T>(ps, rng, name + ".d" + std::to_string(r), cb, cb, 3, r,
                               Act::relu, r);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> prev = x;
    for (int r = 0; r < 4; ++r) prev = add(conv_[r](prev), x);
    return prev;
  }

 private:
  std::array<Conv2d<T>, 4> conv_;
};

// Feedback refinement: the full-resolution decoder output d1 is fed back to
// the coarser decoder scales, the pyramid is compressed by two cross-scale
// refinements (1/8 x 1/4 -> 1/4, then 1/4 x 1/2 -> 1/2), sharpened by the
// dilated chain, and fused with d1 and the calibrated shallow map M1 into the
// final logit.
template <class T>
struct AfrOutputs {
  Var<T> f8, f4, f2;      // feedback-enriched decoder features
  CrossState<T> cross1, cross2;
  Var<T> refined;          // dilated output at 1/2
  Var<T> refined_logit;    // head on refined, native scale
  Var<T> fused_logit;      // final logit, full resolution
};

template <class T>
class AfrModule {
 public:
  AfrModule() = default;
  AfrModule(ParameterStore<T>& ps, RandomSource& rng, const std::string& name, int cb)
      : fb8_(ps, rng, name + ".fb8", cb, cb, 1),
        fb4_(ps, rng, name + ".fb4", cb, cb, 1),
        fb2_(ps, rng, name + ".fb2", cb, cb, 1),
        cross1_(ps, rng, name + ".cross1", cb),
        cross2_(ps, rng, name + ".cross2", cb),
        dilated_(ps, rng, name + ".dilated", cb),
        refined_head_(ps, rng, name + ".refined_head", cb, 1, 1),
        fused_(ps, rng, name + ".fused", 3 * cb, 1, 1) {}

  // fb_s = resize(d1, scale of d_s); f_s = fb_s + Conv1x1(d_s)
  std::array<Var<T>, 3> feedback(const DecoderPyramid<T>& dp) const {
    auto f = [&](const Var<T>& d, const Conv2d<T>& proj) {
      Var<T> fb = bilinear_resize(dp.d1, d.value().h, d.value().w);
      return add(fb, proj(d));
    };
    return {f(dp.d8, fb8_), f(dp.d4, fb4_), f(dp.d2, fb2_)};
  }

  AfrOutputs<T> operator()(const DecoderPyramid<T>& dp, const Var<T>& m1) const {
    AfrOutputs<T> out;
    auto fs = feedback(dp);
    out.f8 = fs[0];
    out.f4 = fs[1];
    out.f2 = fs[2];
    out.cross1 = cross1_(out.f8, out.f4);
    out.cross2 = cross2_(out.cross1.fused, out.f2);
    out.refined = dilated_(out.cross2.fused);
    out.refined_logit = refined_head_(out.refined);
    const int H = dp.d1.value().h;
    const int W = dp.d1.value().w;
    Var<T> refined_up = bilinear_resize(out.refined, H, W);
    out.fused_logit = fused_(concat_channels<T>({dp.d1, m1, refined_up}));
    return out;
  }

 private:
  Conv2d<T> fb8_, fb4_, fb2_;
  IirCross<T> cross1_, cross2_;
  DenseDilated<T> dilated_;
  Conv2d<T> refined_head_;
  Conv2d<T> fused_;
};

}  // namespace bscg
