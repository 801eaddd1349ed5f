#pragma once

#include <array>
#include <string>
#include <vector>

#include "bscg/layers.hpp"

namespace bscg {

// VGG-style encoder: five stages of (3x3 conv + ReLU) blocks with 2x2 max
// pooling between stages. E1..E5 are the post-convolution outputs of each
// stage, at scales 1, 1/2, 1/4, 1/8, 1/16 of the input.
struct BackboneConfig {
  std::array<int, 5> widths{64, 128, 256, 512, 512};
  std::array<int, 5> convs_per_stage{2, 2, 3, 3, 3};

  static BackboneConfig full() { return BackboneConfig{}; }

  static BackboneConfig tiny() {
    BackboneConfig c;
    c.widths = {8, 16, 32, 64, 64};
    return c;
  }
};

template <class T>
struct EncoderPyramid {
  Var<T> e1, e2, e3, e4, e5;
  const Var<T>& level(int i) const {
    switch (i) {
      case 1: return e1;
      case 2: return e2;
      case 3: return e3;
      case 4: return e4;
      default: return e5;
    }
  }
};

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterStore<T>& ps, RandomSource& rng, const std::string& name,
          const BackboneConfig& cfg)
      : cfg_(cfg) {
    int in_c = 3;
    for (int s = 0; s < 5; ++s) {
      for (int k = 0; k < cfg.convs_per_stage[s]; ++k) {
        convs_.emplace_back(ps, rng,
                            name + ".s" + std::to_string(s + 1) + ".c" + std::to_string(k),
                            in_c, cfg.widths[s], 3, 1, Act::relu);
        in_c = cfg.widths[s];
      }
    }
  }

  EncoderPyramid<T> operator()(const Var<T>& image) const {
    const Tensor4<T>& img = image.value();
    require(img.c == 3, "encode: expected a 3-channel image, got " + img.shape_str());
    require(img.h >= 16 && img.w >= 16 && img.h % 16 == 0 && img.w % 16 == 0,
            "encode: spatial dims must be multiples of 16 and at least 16, got " +
                img.shape_str());
    EncoderPyramid<T> out;
    Var<T> x = image;
    int ci = 0;
    for (int s = 0; s < 5; ++s) {
      for (int k = 0; k < cfg_.convs_per_stage[s]; ++k) x = convs_[ci++](x);
      switch (s) {
        case 0: out.e1 = x; break;
        case 1: out.e2 = x; break;
        case 2: out.e3 = x; break;
        case 3: out.e4 = x; break;
        case 4: out.e5 = x; break;
      }
      if (s < 4) x = maxpool2(x);
    }
    return out;
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<Conv2d<T>> convs_;
};

}  // namespace bscg
