#pragma once

#include <array>
#include <string>
#include <vector>

#include "bscg/afr.hpp"
#include "bscg/backbone.hpp"
#include "bscg/bpc.hpp"
#include "bscg/dffc.hpp"

namespace bscg {

// Full-model configuration. `fingerprint()` covers exactly the fields that
// determine the parameter set (widths, depth, working width, module toggles),
// so checkpoints stay loadable across input sizes and loss settings.
struct ModelConfig {
  BackboneConfig backbone;
  int cb = 64;  // common working width: calibration, decoder, refinement
  bool use_bpc = true;
  bool use_dffc = true;
  bool use_afr = true;
  bool use_iou_loss = true;
  int input_size = 256;           // declared training resolution, multiple of 16
  unsigned long long seed = 1;    // parameter-init stream

  static ModelConfig full() { return ModelConfig{}; }

  static ModelConfig tiny() {
    ModelConfig c;
    c.backbone = BackboneConfig::tiny();
    c.cb = 8;
    c.input_size = 64;
    return c;
  }

  std::string fingerprint() const {
    std::string fp = "bscg.v1|w";
    for (int i = 0; i < 5; ++i) fp += (i ? "," : "") + std::to_string(backbone.widths[i]);
    fp += "|d";
    for (int i = 0; i < 5; ++i)
      fp += (i ? "," : "") + std::to_string(backbone.convs_per_stage[i]);
    fp += "|cb" + std::to_string(cb);
    fp += "|bpc" + std::to_string(int(use_bpc));
    fp += "|dffc" + std::to_string(int(use_dffc));
    fp += "|afr" + std::to_string(int(use_afr));
    return fp;
  }
};

// Everything a forward pass produced. `logits` are all supervised outputs at
// full resolution, final output last: one d1 head for the bare baseline, the
// four decoder-stage heads otherwise, plus the refinement head and the fused
// head when refinement is enabled (six total).
template <class T>
struct ForwardState {
  EncoderPyramid<T> enc;
  CalibrationState<T> calib;  // populated iff use_bpc
  Var<T> m1;                  // calibrated boundary map, or zero substitute
  DualAttention<T> dual;      // populated iff use_dffc
  DecoderPyramid<T> dec;
  AfrOutputs<T> afr;          // populated iff use_afr
  std::vector<Var<T>> logits;
  Var<T> final_prob;
  const Var<T>& final_logit() const { return logits.back(); }
};

template <class T>
class BscgNet {
 public:
  explicit BscgNet(const ModelConfig& cfg) : cfg_(cfg) {
    require(cfg.cb > 0, "model: working width must be positive");
    require(cfg.input_size >= 16 && cfg.input_size % 16 == 0,
            "model: input size must be a positive multiple of 16");
    RandomSource rng(cfg.seed);
    encoder_ = Encoder<T>(ps_, rng, "enc", cfg.backbone);
    if (cfg.use_bpc) bpc_ = BpcModule<T>(ps_, rng, "bpc", cfg.backbone, cfg.cb);
    if (cfg.use_dffc) dffc_ = DffcAttention<T>(ps_, rng, "dffc", cfg.backbone, cfg.cb);
    decoder_ = Decoder<T>(ps_, rng, "dec", cfg.backbone, cfg.cb);
    if (cfg.use_afr) afr_ = AfrModule<T>(ps_, rng, "afr", cfg.cb);
    if (!single_head()) {
      head_d8_ = Conv2d<T>(ps_, rng, "head.d8", cfg.cb, 1, 1);
      head_d4_ = Conv2d<T>(ps_, rng, "head.d4", cfg.cb, 1, 1);
      head_d2_ = Conv2d<T>(ps_, rng, "head.d2", cfg.cb, 1, 1);
    }
    head_d1_ = Conv2d<T>(ps_, rng, "head.d1", cfg.cb, 1, 1);
  }

  // Bare baseline (all modules off) supervises only the last decoder stage.
  bool single_head() const { return !cfg_.use_bpc && !cfg_.use_dffc && !cfg_.use_afr; }

  ForwardState<T> forward(const Tensor4<T>& image) const {
    ForwardState<T> st;
    st.enc = encoder_(Var<T>(image));
    const int n = image.n, H = image.h, W = image.w;

    if (cfg_.use_bpc) {
      st.calib = bpc_(st.enc);
      st.m1 = st.calib.m1();
    } else {
      st.m1 = Var<T>(Tensor4<T>::zeros(n, cfg_.cb, H, W));
    }

    std::array<Var<T>, 5> feats;
    if (cfg_.use_dffc) {
      st.dual = dffc_.attention(st.m1, st.enc.e5);
      feats = dffc_.modulate(st.dual.p_prime, st.enc);
    } else {
      for (int i = 0; i < 5; ++i) feats[i] = st.enc.level(i + 1);
    }
    st.dec = decoder_(feats);

    auto at_full = [&](const Var<T>& v) { return bilinear_resize(v, H, W); };
    if (!single_head()) {
      st.logits.push_back(at_full(head_d8_(st.dec.d8)));
      st.logits.push_back(at_full(head_d4_(st.dec.d4)));
      st.logits.push_back(at_full(head_d2_(st.dec.d2)));
    }
    st.logits.push_back(at_full(head_d1_(st.dec.d1)));
    if (cfg_.use_afr) {
      st.afr = afr_(st.dec, st.m1);
      st.logits.push_back(at_full(st.afr.refined_logit));
      st.logits.push_back(at_full(st.afr.fused_logit));
    }
    st.final_prob = sigmoid(st.logits.back());
    return st;
  }

  size_t count_params() const { return ps_.scalar_count(); }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return ps_; }
  const ParameterStore<T>& params() const { return ps_; }

 private:
  ModelConfig cfg_;
  ParameterStore<T> ps_;
  Encoder<T> encoder_;
  BpcModule<T> bpc_;
  DffcAttention<T> dffc_;
  Decoder<T> decoder_;
  AfrModule<T> afr_;
  Conv2d<T> head_d8_, head_d4_, head_d2_, head_d1_;
};

// Exact learned-scalar count for a configuration.
inline size_t count_params(const ModelConfig& cfg) {
  return BscgNet<float>(cfg).count_params();
}

// ----------------------------------------------------------- cost walker ---
// Static per-layer cost model mirroring the forward wiring. Conventions
// (documented in the README): one multiply-accumulate (MAC) = 2 FLOPs; conv
// and transposed-conv MACs = output elements x in_c x k x k (bias and
// activation not counted); bilinear resize = 3 MACs per output element (three
// lerps); warp = 4; standalone elementwise steps = 1 per element per op; max
// pooling and concatenation are free. A test pins the walker's parameter
// total to the real ParameterStore, which also guards the MAC wiring.

struct LayerCost {
  std::string name;
  std::string kind;  // conv | tconv | se | resize | warp | eltwise
  int out_c = 0, out_h = 0, out_w = 0;
  long long params = 0;
  long long macs = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  long long total_params = 0;
  long long total_macs = 0;
  long long flops() const { return 2 * total_macs; }
};

namespace detail {

struct CostWalk {
  CostReport rep;
  long long batch = 1;

  void push(LayerCost lc) {
    rep.total_params += lc.params;
    rep.total_macs += lc.macs;
    rep.layers.push_back(std::move(lc));
  }
  void conv(const std::string& name, int in_c, int out_c, int k, int oh, int ow) {
    LayerCost lc{name, "conv", out_c, oh, ow};
    lc.params = (long long)(out_c)*in_c * k * k + out_c;
    lc.macs = batch * (long long)(out_c)*oh * ow * in_c * k * k;
    push(std::move(lc));
  }
  void tconv(const std::string& name, int in_c, int out_c, int k, int ih, int iw,
             int stride) {
    LayerCost lc{name, "tconv", out_c, ih * stride, iw * stride};
    lc.params = (long long)(in_c)*out_c * k * k + out_c;
    lc.macs = batch * (long long)(in_c)*ih * iw * out_c * k * k;
    push(std::move(lc));
  }
  void se(const std::string& name, int c, int h, int w) {
    const int b = std::max(1, c / se_reduction_for(c));
    LayerCost lc{name, "se", c, h, w};
    lc.params = 2LL * b * c + b + c;
    // pool reduction + two 1x1 affines + channel rescale
    lc.macs = batch * (2LL * c * h * w + 2LL * b * c);
    push(std::move(lc));
  }
  void resize(const std::string& name, int c, int ih, int iw, int oh, int ow) {
    if (ih == oh && iw == ow) return;  // forwarded unchanged at runtime
    LayerCost lc{name, "resize", c, oh, ow};
    lc.macs = batch * 3LL * c * oh * ow;
    push(std::move(lc));
  }
  void warp(const std::string& name, int c, int h, int w) {
    LayerCost lc{name, "warp", c, h, w};
    lc.macs = batch * 4LL * c * h * w;
    push(std::move(lc));
  }
  void eltwise(const std::string& name, int c, int h, int w, int ops_per_elem) {
    LayerCost lc{name, "eltwise", c, h, w};
    lc.macs = batch * (long long)(ops_per_elem)*c * h * w;
    push(std::move(lc));
  }
  // One residual block: two 3x3 convs plus the skip addition.
  void res_block(const std::string& name, int cb, int h, int w) {
    conv(name + ".c0", cb, cb, 3, h, w);
    conv(name + ".c1", cb, cb, 3, h, w);
    eltwise(name + ".skip", cb, h, w, 1);
  }
  void iir_cross(const std::string& name, int cb, int ch, int cw) {
    const int fh = 2 * ch, fw = 2 * cw;
    resize(name + ".up", cb, ch, cw, fh, fw);
    conv(name + ".att_coarse.c0", cb, 1, 3, fh, fw);
    conv(name + ".att_coarse.c1", 1, 1, 3, fh, fw);
    eltwise(name + ".att_coarse.sig", 1, fh, fw, 1);
    conv(name + ".att_fine.c0", cb, 1, 3, fh, fw);
    conv(name + ".att_fine.c1", 1, 1, 3, fh, fw);
    eltwise(name + ".att_fine.sig", 1, fh, fw, 1);
    conv(name + ".pre_fine", cb, cb, 3, fh, fw);
    eltwise(name + ".gain1", cb, fh, fw, 2);  // (a+1) then per-pixel product
    conv(name + ".post_c1", cb, cb, 3, fh, fw);
    conv(name + ".pre_coarse", cb, cb, 3, fh, fw);
    eltwise(name + ".gain2", cb, fh, fw, 2);
    conv(name + ".post_c2", cb, cb, 3, fh, fw);
    conv(name + ".merge", 2 * cb, cb, 1, fh, fw);
  }
};

}  // namespace detail

inline CostReport estimate_cost(const ModelConfig& cfg, int input_size, int batch = 1) {
  require(input_size >= 16 && input_size % 16 == 0,
          "estimate_cost: input size must be a positive multiple of 16");
  detail::CostWalk wk;
  wk.batch = batch;
  const auto& bk = cfg.backbone;
  const int S = input_size;
  const int cb = cfg.cb;
  auto sc = [&](int level) { return S >> level; };  // spatial size of E_{level+1}

  for (int i = 0; i < 5; ++i) {
    const int sp = sc(i);
    for (int k = 0; k < bk.convs_per_stage[i]; ++k) {
      const int in_c = k ? bk.widths[i] : (i ? bk.widths[i - 1] : 3);
      wk.conv("enc.s" + std::to_string(i + 1) + ".c" + std::to_string(k), in_c,
              bk.widths[i], 3, sp, sp);
    }
  }

  if (cfg.use_bpc) {
    for (int i = 0; i < 4; ++i) {
      wk.resize("bpc.up" + std::to_string(i + 1), bk.widths[i], sc(i), sc(i), S, S);
      wk.conv("bpc.proj" + std::to_string(i + 1), bk.widths[i], cb, 1, S, S);
    }
    for (int i = 0; i < 4; ++i) wk.res_block("bpc.res" + std::to_string(i), cb, S, S);
    for (int k = 1; k <= 3; ++k) {
      wk.se("bpc.afa" + std::to_string(k), 2 * cb, S, S);
      wk.conv("bpc.flow" + std::to_string(k), 2 * cb, 2, 3, S, S);
      wk.warp("bpc.warp" + std::to_string(k), cb, S, S);
      wk.eltwise("bpc.carry" + std::to_string(k), cb, S, S, 1);
    }
  }

  if (cfg.use_dffc) {
    wk.conv("dffc.reduce_e5", bk.widths[4], cb, 1, sc(4), sc(4));
    wk.resize("dffc.up_e5", cb, sc(4), sc(4), S, S);
    wk.conv("dffc.prior", 2 * cb, 1, 1, S, S);
    wk.eltwise("dffc.prior.sig", 1, S, S, 1);
    for (int i = 0; i < 5; ++i) {
      const int sp = sc(i);
      wk.resize("dffc.prior.down" + std::to_string(i + 1), 1, S, S, sp, sp);
      wk.eltwise("dffc.gate" + std::to_string(i + 1), bk.widths[i], sp, sp, 2);
      wk.se("dffc.se" + std::to_string(i + 1), bk.widths[i], sp, sp);
    }
  }

  for (int i = 0; i < 5; ++i)
    wk.conv("dec.g" + std::to_string(i + 1), bk.widths[i], cb, 1, sc(i), sc(i));
  wk.conv("dec.head", cb, cb, 3, sc(4), sc(4));
  for (int k = 0; k < 4; ++k) {
    const int ih = sc(4 - k);
    wk.tconv("dec.up" + std::to_string(k), cb, cb, 2, ih, ih, 2);
    wk.conv("dec.fuse" + std::to_string(k), 2 * cb, cb, 3, 2 * ih, 2 * ih);
  }

  const bool four_heads = cfg.use_bpc || cfg.use_dffc || cfg.use_afr;
  if (four_heads) {
    wk.conv("head.d8", cb, 1, 1, sc(3), sc(3));
    wk.resize("head.d8.up", 1, sc(3), sc(3), S, S);
    wk.conv("head.d4", cb, 1, 1, sc(2), sc(2));
    wk.resize("head.d4.up", 1, sc(2), sc(2), S, S);
    wk.conv("head.d2", cb, 1, 1, sc(1), sc(1));
    wk.resize("head.d2.up", 1, sc(1), sc(1), S, S);
  }
  wk.conv("head.d1", cb, 1, 1, S, S);

  if (cfg.use_afr) {
    wk.resize("afr.fb8.feedback", cb, S, S, sc(3), sc(3));
    wk.conv("afr.fb8", cb, cb, 1, sc(3), sc(3));
    wk.eltwise("afr.fb8.add", cb, sc(3), sc(3), 1);
    wk.resize("afr.fb4.feedback", cb, S, S, sc(2), sc(2));
    wk.conv("afr.fb4", cb, cb, 1, sc(2), sc(2));
    wk.eltwise("afr.fb4.add", cb, sc(2), sc(2), 1);
    wk.resize("afr.fb2.feedback", cb, S, S, sc(1), sc(1));
    wk.conv("afr.fb2", cb, cb, 1, sc(1), sc(1));
    wk.eltwise("afr.fb2.add", cb, sc(1), sc(1), 1);
    wk.iir_cross("afr.cross1", cb, sc(3), sc(3));
    wk.iir_cross("afr.cross2", cb, sc(2), sc(2));
    for (int r = 1; r <= 4; ++r) {
      wk.conv("afr.dilated.d" + std::to_string(r), cb, cb, 3, sc(1), sc(1));
      wk.eltwise("afr.dilated.skip" + std::to_string(r), cb, sc(1), sc(1), 1);
    }
    wk.conv("afr.refined_head", cb, 1, 1, sc(1), sc(1));
    wk.resize("afr.refined_head.up", 1, sc(1), sc(1), S, S);
    wk.resize("afr.refined.up", cb, sc(1), sc(1), S, S);
    wk.conv("afr.fused", 3 * cb, 1, 1, S, S);
  }

  wk.eltwise("final.sig", 1, S, S, 1);
  return wk.rep;
}

inline long long estimate_flops(const ModelConfig& cfg, int input_size) {
  return estimate_cost(cfg, input_size).flops();
}

}  // namespace bscg
