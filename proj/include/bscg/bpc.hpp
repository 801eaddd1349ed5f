#pragma once

#include <array>
#include <string>

#include "bscg/backbone.hpp"
#include "bscg/layers.hpp"

namespace bscg {

// y = x + ConvReLU(ConvReLU(x)), 3x3, channel-preserving.
template <class T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterStore<T>& ps, RandomSource& rng, const std::string& name, int c)
      : c0_(ps, rng, name + ".c0", c, c, 3, 1, Act::relu),
        c1_(ps, rng, name + ".c1", c, c, 3, 1, Act::relu) {}

  Var<T> operator()(const Var<T>& x) const { return add(x, c1_(c0_(x))); }

 private:
  Conv2d<T> c0_, c1_;
};

// Boundary calibration over the shallow pyramid. All four encoder layers are
// brought to full resolution and projected to the working width; level k
// aligns the next-deeper projection against the running carry with a learned
// flow field and accumulates it additively:
//
//   f1res = Res0(proj(E1))
//   carry = f1res
//   for k = 1..3:
//     refined = Res_k(carry)          (flow branch only)
//     f_a     = SE_k(cat(refined, proj(E_{k+1})))
//     flow_k  = Conv3x3(f_a) -> 2ch   (zero-initialized)
//     I_k     = warp(proj(E_{k+1}), flow_k) + carry
//
// The additive path uses the un-refined carry; M1 is I_3. Flow convs start at
// zero, so a fresh module is exactly additive fusion of the projections.
template <class T>
struct CalibrationState {
  Var<T> f1res;
  std::array<Var<T>, 3> flows;
  std::array<Var<T>, 3> outputs;  // I1, I2, I3
  std::array<Var<T>, 4> projected;
  const Var<T>& m1() const { return outputs[2]; }
};

template <class T>
class BpcModule {
 public:
  BpcModule() = default;
  BpcModule(ParameterStore<T>& ps, RandomSource& rng, const std::string& name,
            const BackboneConfig& bk, int cb)
      : cb_(cb) {
    for (int i = 0; i < 4; ++i)
      proj_[i] = Conv2d<T>(ps, rng, name + ".proj" + std::to_string(i + 1), bk.widths[i],
                           cb, 1);
    for (int i = 0; i < 4; ++i)
      res_[i] = ResidualBlock<T>(ps, rng, name + ".res" + std::to_string(i), cb);
    for (int i = 0; i < 3; ++i) {
      se_[i] = SELayer<T>(ps, rng, name + ".afa" + std::to_string(i + 1), 2 * cb,
                          se_reduction_for(2 * cb));
      flow_[i] = Conv2d<T>(ps, rng, name + ".flow" + std::to_string(i + 1), 2 * cb, 2, 3,
                           1, Act::none, 1, /*zero_init=*/true);
    }
  }

  // Attention-fused concat feeding the flow predictor.
  Var<T> afa(const Var<T>& refined, const Var<T>& next_proj, int k) const {
    return se_[k](concat_channels<T>({refined, next_proj}));
  }

  CalibrationState<T> operator()(const EncoderPyramid<T>& enc) const {
    const int H = enc.e1.value().h;
    const int W = enc.e1.value().w;
    CalibrationState<T> st;
    for (int i = 0; i < 4; ++i) {
      Var<T> up = bilinear_resize(enc.level(i + 1), H, W);
      st.projected[i] = proj_[i](up);
    }
    st.f1res = res_[0](st.projected[0]);
    Var<T> carry = st.f1res;
    for (int k = 0; k < 3; ++k) {
      Var<T> refined = res_[k + 1](carry);
      Var<T> fa = afa(refined, st.projected[k + 1], k);
      st.flows[k] = flow_[k](fa);
      st.outputs[k] = add(grid_sample(st.projected[k + 1], st.flows[k]), carry);
      carry = st.outputs[k];
    }
    return st;
  }

  int cb() const { return cb_; }

 private:
  std::array<Conv2d<T>, 4> proj_;
  std::array<ResidualBlock<T>, 4> res_;
  std::array<SELayer<T>, 3> se_;
  std::array<Conv2d<T>, 3> flow_;
  int cb_ = 0;
};

}  // namespace bscg
