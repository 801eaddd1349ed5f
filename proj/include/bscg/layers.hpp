#pragma once

#include <string>

#include "bscg/ops.hpp"
#include "bscg/params.hpp"

namespace bscg {

enum class Act { none, relu };

// Convolution layer owning weight + bias in a ParameterStore. `zero_init`
// produces an exactly-zero layer (used by flow predictors so the calibration
// starts as an identity warp).
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& ps, RandomSource& rng, const std::string& name, int in_c,
         int out_c, int k, int pad = 0, Act act = Act::none, int dilation = 1,
         bool zero_init = false, int stride = 1)
      : stride_(stride), pad_(pad), dil_(dilation), act_(act) {
    w_ = &ps.create(name + ".w", out_c, in_c, k, k);
    b_ = &ps.create(name + ".b", 1, out_c, 1, 1);
    if (!zero_init) kaiming_init(*w_, in_c * k * k, rng);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = conv2d(x, param_leaf(*w_), param_leaf(*b_), stride_, pad_, dil_);
    return act_ == Act::relu ? relu(y) : y;
  }

  Parameter<T>& weight() { return *w_; }
  Parameter<T>& bias() { return *b_; }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  int stride_ = 1, pad_ = 0, dil_ = 1;
  Act act_ = Act::none;
};

template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore<T>& ps, RandomSource& rng, const std::string& name,
                  int in_c, int out_c, int k, int stride)
      : stride_(stride) {
    w_ = &ps.create(name + ".w", in_c, out_c, k, k);
    b_ = &ps.create(name + ".b", 1, out_c, 1, 1);
    kaiming_init(*w_, in_c * k * k, rng);
  }

  Var<T> operator()(const Var<T>& x) const {
    return conv_transpose2d(x, param_leaf(*w_), param_leaf(*b_), stride_);
  }

 private:
  Parameter<T>* w_ = nullptr;
  Parameter<T>* b_ = nullptr;
  int stride_ = 2;
};

// Squeeze-and-excitation: global average pool, bottleneck affine + ReLU,
// expand affine + sigmoid, per-channel rescale. The bottleneck width is
// max(1, channels / reduction); every instance owns its own parameters.
template <class T>
class SELayer {
 public:
  SELayer() = default;
  SELayer(ParameterStore<T>& ps, RandomSource& rng, const std::string& name, int channels,
          int reduction)
      : channels_(channels), bottleneck_(std::max(1, channels / reduction)) {
    w1_ = &ps.create(name + ".fc1.w", bottleneck_, channels_, 1, 1);
    b1_ = &ps.create(name + ".fc1.b", 1, bottleneck_, 1, 1);
    w2_ = &ps.create(name + ".fc2.w", channels_, bottleneck_, 1, 1);
    b2_ = &ps.create(name + ".fc2.b", 1, channels_, 1, 1);
    kaiming_init(*w1_, channels_, rng);
    kaiming_init(*w2_, bottleneck_, rng);
  }

  Var<T> operator()(const Var<T>& x) const {
    require(x.value().c == channels_,
            "se_layer: expected " + std::to_string(channels_) + " channels, got " +
                x.value().shape_str());
    Var<T> pooled = global_avg_pool(x);
    Var<T> z = relu(conv2d(pooled, param_leaf(*w1_), param_leaf(*b1_)));
    Var<T> s = sigmoid(conv2d(z, param_leaf(*w2_), param_leaf(*b2_)));
    return scale_channels(x, s);
  }

  int bottleneck() const { return bottleneck_; }

 private:
  Parameter<T>* w1_ = nullptr;
  Parameter<T>* b1_ = nullptr;
  Parameter<T>* w2_ = nullptr;
  Parameter<T>* b2_ = nullptr;
  int channels_ = 0, bottleneck_ = 0;
};

// Channel attention reduction rule used across the network.
inline int se_reduction_for(int channels) { return std::min(16, channels); }

}  // namespace bscg
