#pragma once

#include <array>
#include <functional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bscg/afr.hpp"
#include "bscg/bpc.hpp"
#include "bscg/dffc.hpp"
#include "bscg/objective.hpp"

namespace bscg {

// Central finite-difference verification of every differentiable operation
// family, plus end-to-end sweeps through the calibration, decoder, and
// refinement modules. Runs in double; a probe passes when
// |analytic - numeric| <= max(1e-8, 1e-4 * max(|analytic|, |numeric|)).

struct FdFamilyResult {
  std::string family;
  int instances = 0;
  long long probes = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradReport {
  std::vector<FdFamilyResult> families;
  double worst = 0.0;
  bool pass = true;
};

namespace fd {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;

// Floored relative error; <= kRelTol is exactly the acceptance rule above.
inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
}

inline Tensor4<double> rand_tensor(RandomSource& rng, int n, int c, int h, int w,
                                   double lo = -1.0, double hi = 1.0) {
  Tensor4<double> t(n, c, h, w);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Random +-[0.5, 1.5] projection; the scalar loss <y, r> is linear in y, so
// central differences are exact up to roundoff.
inline Tensor4<double> rand_proj(RandomSource& rng, const Tensor4<double>& like) {
  Tensor4<double> r(like.n, like.c, like.h, like.w);
  for (double& v : r.data) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
  return r;
}

inline Var<double> proj_loss(const Var<double>& y, const Tensor4<double>& r) {
  return sum_all(mul(y, Var<double>(r)));
}

inline std::vector<size_t> probe_indices(size_t size, size_t want, RandomSource& rng) {
  std::vector<size_t> out;
  if (size <= want) {
    for (size_t i = 0; i < size; ++i) out.push_back(i);
    return out;
  }
  std::unordered_set<size_t> seen;
  while (seen.size() < want) seen.insert(size_t(rng.uniform_int(0, int(size - 1))));
  out.assign(seen.begin(), seen.end());
  return out;
}

// step is tunable per call site: composite graphs with thousands of relu
// units use a smaller step so a probe straddles a kink only when one sits
// within that distance of the evaluation point; roundoff stays orders of
// magnitude below tolerance in double.
template <class F>
double central_diff(Tensor4<double>& t, size_t i, F&& f, double step = kStep) {
  const double keep = t.data[i];
  t.data[i] = keep + step;
  const double fp = f();
  t.data[i] = keep - step;
  const double fm = f();
  t.data[i] = keep;
  return (fp - fm) / (2.0 * step);
}

// Forward and backward secants around the current point. When they disagree
// beyond tolerance the loss has a kink exactly at the evaluation point and
// only a one-sided derivative exists there.
template <class F>
std::pair<double, double> one_sided_diffs(Tensor4<double>& t, size_t i, F&& f,
                                          double step = kStep) {
  const double keep = t.data[i];
  const double f0 = f();
  t.data[i] = keep + step;
  const double fp = f();
  t.data[i] = keep - step;
  const double fm = f();
  t.data[i] = keep;
  return {(fp - f0) / step, (f0 - fm) / step};
}

// One op-family instance: leaf tensors plus a builder that assembles the
// graph from them and returns the scalar loss.
struct LeafProblem {
  std::vector<Tensor4<double>> slots;
  std::function<Var<double>(std::vector<Var<double>>&)> build;
};

inline void check_leaf_problem(LeafProblem& pb, RandomSource& rng, size_t probes_per_slot,
                               FdFamilyResult& fam) {
  std::vector<Var<double>> leaves;
  leaves.reserve(pb.slots.size());
  for (auto& t : pb.slots) leaves.push_back(Var<double>(t, /*track=*/true));
  Var<double> loss = pb.build(leaves);
  backward(loss);

  auto eval = [&]() {
    std::vector<Var<double>> ls;
    ls.reserve(pb.slots.size());
    for (auto& t : pb.slots) ls.push_back(Var<double>(t, false));
    return pb.build(ls).value().data[0];
  };
  for (size_t s = 0; s < pb.slots.size(); ++s) {
    const Tensor4<double>& g = leaves[s].node->grad;
    for (size_t i : probe_indices(pb.slots[s].size(), probes_per_slot, rng)) {
      const double analytic = g.empty() ? 0.0 : g.data[i];
      const double numeric = central_diff(pb.slots[s], i, eval);
      fam.max_rel_err = std::max(fam.max_rel_err, rel_err(analytic, numeric));
      ++fam.probes;
    }
  }
  ++fam.instances;
}

// ------------------------------------------------------------ op families ---

inline void family_conv2d(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 6; ++inst) {
    const int n = rng.uniform_int(1, 2), ic = rng.uniform_int(1, 3),
              oc = rng.uniform_int(1, 3);
    const int k = inst % 2 ? 3 : 1;
    const int stride = inst == 3 ? 2 : 1;
    const int dil = (k == 3 && inst == 5) ? 2 : 1;
    const int pad = k == 3 ? rng.uniform_int(0, 1) : 0;
    const int h = rng.uniform_int(7, 9), w = rng.uniform_int(7, 9);
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, ic, h, w), rand_tensor(rng, oc, ic, k, k, -0.7, 0.7),
                rand_tensor(rng, 1, oc, 1, 1, -0.3, 0.3)};
    const int oh = detail::conv_out_extent(h, k, stride, pad, dil);
    const int ow = detail::conv_out_extent(w, k, stride, pad, dil);
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, oc, oh, ow));
    pb.build = [=](std::vector<Var<double>>& L) {
      return proj_loss(conv2d(L[0], L[1], L[2], stride, pad, dil), r);
    };
    check_leaf_problem(pb, rng, 6, fam);
  }
}

inline void family_conv_transpose2d(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 5; ++inst) {
    const int n = rng.uniform_int(1, 2), ic = rng.uniform_int(1, 3),
              oc = rng.uniform_int(1, 3);
    const int k = inst % 2 ? 3 : 2;
    const int stride = inst < 2 ? 2 : (inst == 2 ? 1 : 2);
    const int h = rng.uniform_int(3, 5), w = rng.uniform_int(3, 5);
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, ic, h, w), rand_tensor(rng, ic, oc, k, k, -0.7, 0.7),
                rand_tensor(rng, 1, oc, 1, 1, -0.3, 0.3)};
    const int oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, oc, oh, ow));
    pb.build = [=](std::vector<Var<double>>& L) {
      return proj_loss(conv_transpose2d(L[0], L[1], L[2], stride), r);
    };
    check_leaf_problem(pb, rng, 6, fam);
  }
}

inline void family_bilinear_resize(FdFamilyResult& fam, RandomSource& rng) {
  const int shapes[6][4] = {{5, 5, 8, 8},  {8, 8, 5, 5},  {4, 6, 9, 5},
                            {6, 4, 6, 4},  {3, 7, 7, 3},  {5, 8, 10, 16}};
  for (auto& sh : shapes) {
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, sh[0], sh[1])};
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, c, sh[2], sh[3]));
    const int oh = sh[2], ow = sh[3];
    pb.build = [=](std::vector<Var<double>>& L) {
      return proj_loss(bilinear_resize(L[0], oh, ow), r);
    };
    check_leaf_problem(pb, rng, 6, fam);
  }
}

// Flow targets are kept strictly interior with fractional parts in
// [0.15, 0.35]: far from both the border clamp and the integer-lattice kinks
// of bilinear sampling, so central differences stay valid.
inline void family_grid_sample(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 5; ++inst) {
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(4, 7), w = rng.uniform_int(4, 7);
    Tensor4<double> x = rand_tensor(rng, n, c, h, w);
    Tensor4<double> flow(n, 2, h, w);
    for (int in = 0; in < n; ++in)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double tx = rng.uniform_int(0, w - 2) + rng.uniform(0.15, 0.35);
          const double ty = rng.uniform_int(0, h - 2) + rng.uniform(0.15, 0.35);
          flow.at(in, 0, i, j) = tx - j;
          flow.at(in, 1, i, j) = ty - i;
        }
    LeafProblem pb;
    pb.slots = {std::move(x), std::move(flow)};
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, c, h, w));
    pb.build = [=](std::vector<Var<double>>& L) {
      return proj_loss(grid_sample(L[0], L[1]), r);
    };
    check_leaf_problem(pb, rng, 6, fam);
  }
}

inline void family_se_layer(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 5; ++inst) {
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(2, 5);
    const int b = std::max(1, c / se_reduction_for(c));
    const int h = rng.uniform_int(3, 5), w = rng.uniform_int(3, 5);
    Tensor4<double> x = rand_tensor(rng, n, c, h, w);
    Tensor4<double> w1 = rand_tensor(rng, b, c, 1, 1, -0.8, 0.8);
    Tensor4<double> b1 = rand_tensor(rng, 1, b, 1, 1, -0.3, 0.3);
    Tensor4<double> w2 = rand_tensor(rng, c, b, 1, 1, -0.8, 0.8);
    Tensor4<double> b2 = rand_tensor(rng, 1, c, 1, 1, -0.3, 0.3);
    // Keep the bottleneck pre-activation away from the ReLU kink.
    for (int in = 0; in < n; ++in)
      for (int k = 0; k < b; ++k) {
        double z = b1.at(0, k, 0, 0);
        for (int cc = 0; cc < c; ++cc) {
          double gap = 0.0;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) gap += x.at(in, cc, y, xx);
          z += w1.at(k, cc, 0, 0) * gap / double(h * w);
        }
        if (std::abs(z) < 0.02) b1.at(0, k, 0, 0) += (z >= 0.0 ? 0.05 : -0.05);
      }
    LeafProblem pb;
    pb.slots = {std::move(x), std::move(w1), std::move(b1), std::move(w2), std::move(b2)};
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, c, h, w));
    pb.build = [=](std::vector<Var<double>>& L) {
      Var<double> z = relu(conv2d(global_avg_pool(L[0]), L[1], L[2]));
      Var<double> s = sigmoid(conv2d(z, L[3], L[4]));
      return proj_loss(scale_channels(L[0], s), r);
    };
    check_leaf_problem(pb, rng, 6, fam);
  }
}

inline void family_maxpool2(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 5; ++inst) {
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    const int h = 2 * rng.uniform_int(2, 4), w = 2 * rng.uniform_int(2, 4);
    Tensor4<double> x(n, c, h, w);
    // Every 2x2 window gets a clear argmax margin so the probe step cannot
    // flip the winner.
    for (int in = 0; in < n; ++in)
      for (int cc = 0; cc < c; ++cc)
        for (int i = 0; i < h; i += 2)
          for (int j = 0; j < w; j += 2) {
            double v[4];
            bool ok = false;
            while (!ok) {
              for (double& e : v) e = rng.uniform(-1.0, 1.0);
              double top1 = -2.0, top2 = -2.0;
              for (double e : v) {
                if (e > top1) {
                  top2 = top1;
                  top1 = e;
                } else if (e > top2) {
                  top2 = e;
                }
              }
              ok = top1 - top2 > 1e-3;
            }
            x.at(in, cc, i, j) = v[0];
            x.at(in, cc, i, j + 1) = v[1];
            x.at(in, cc, i + 1, j) = v[2];
            x.at(in, cc, i + 1, j + 1) = v[3];
          }
    LeafProblem pb;
    pb.slots = {std::move(x)};
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, c, h / 2, w / 2));
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(maxpool2(L[0]), r); };
    check_leaf_problem(pb, rng, 8, fam);
  }
}

inline void family_elementwise(FdFamilyResult& fam, RandomSource& rng) {
  const int n = 2, c = 3, h = 4, w = 5;
  auto run = [&](LeafProblem& pb) { check_leaf_problem(pb, rng, 6, fam); };

  {  // add, equal shapes
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, h, w), rand_tensor(rng, n, c, h, w)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(add(L[0], L[1]), r); };
    run(pb);
  }
  {  // add, single-channel broadcast
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, h, w), rand_tensor(rng, n, 1, h, w)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(add(L[0], L[1]), r); };
    run(pb);
  }
  {  // mul, equal shapes
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, h, w), rand_tensor(rng, n, c, h, w)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(mul(L[0], L[1]), r); };
    run(pb);
  }
  {  // mul, broadcast gate
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, 1, h, w), rand_tensor(rng, n, c, h, w)};
    Tensor4<double> r = rand_proj(rng, pb.slots[1]);
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(mul(L[0], L[1]), r); };
    run(pb);
  }
  {  // scalar affine chain
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, h, w)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) {
      return proj_loss(mul_scalar(add_scalar(L[0], 0.7), 1.3), r);
    };
    run(pb);
  }
  {  // relu, inputs nudged off the kink
    LeafProblem pb;
    Tensor4<double> x(n, c, h, w);
    for (double& v : x.data)
      v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
    pb.slots = {std::move(x)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(relu(L[0]), r); };
    run(pb);
  }
  {  // sigmoid
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, h, w, -3.0, 3.0)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) { return proj_loss(sigmoid(L[0]), r); };
    run(pb);
  }
  {  // global average pool + channel rescale
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, c, h, w), rand_tensor(rng, n, c, 1, 1)};
    Tensor4<double> r = rand_proj(rng, pb.slots[0]);
    pb.build = [=](std::vector<Var<double>>& L) {
      Var<double> scaled = scale_channels(L[0], L[1]);
      Var<double> pooled = global_avg_pool(scaled);
      return proj_loss(scale_channels(scaled, pooled), r);
    };
    run(pb);
  }
}

inline void family_concat(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 5; ++inst) {
    const int n = rng.uniform_int(1, 2), h = rng.uniform_int(3, 5),
              w = rng.uniform_int(3, 5);
    const int parts = rng.uniform_int(2, 4);
    LeafProblem pb;
    int total_c = 0;
    for (int p = 0; p < parts; ++p) {
      const int c = rng.uniform_int(1, 3);
      total_c += c;
      pb.slots.push_back(rand_tensor(rng, n, c, h, w));
    }
    Tensor4<double> r = rand_proj(rng, Tensor4<double>(n, total_c, h, w));
    pb.build = [=](std::vector<Var<double>>& L) {
      return proj_loss(concat_channels<double>(L), r);
    };
    check_leaf_problem(pb, rng, 6, fam);
  }
}

// Logits confined to [-2, 2] keep probabilities far inside the BCE clamp.
inline void family_losses(FdFamilyResult& fam, RandomSource& rng) {
  for (int inst = 0; inst < 6; ++inst) {
    const int n = rng.uniform_int(1, 2), h = rng.uniform_int(4, 6),
              w = rng.uniform_int(4, 6);
    Tensor4<double> target(n, 1, h, w);
    for (double& v : target.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    LeafProblem pb;
    pb.slots = {rand_tensor(rng, n, 1, h, w, -2.0, 2.0)};
    const bool use_iou = inst >= 3;
    pb.build = [=](std::vector<Var<double>>& L) {
      Var<double> p = sigmoid(L[0]);
      return use_iou ? iou_loss(p, target) : bce_loss(p, target);
    };
    check_leaf_problem(pb, rng, 8, fam);
  }
}

// --------------------------------------------------------- module sweeps ---

// Probes every parameter tensor of `ps` (a few indices each) plus the given
// input tensors against finite differences of `value()`, with analytic grads
// from one tracked backward already performed by the caller.
inline void probe_store_and_inputs(ParameterStore<double>& ps,
                                   std::vector<std::pair<Tensor4<double>*, const Tensor4<double>*>> inputs,
                                   const std::function<double()>& value,
                                   RandomSource& rng, FdFamilyResult& fam,
                                   size_t probes_per_tensor, double step = kStep) {
  for (auto& up : ps.items()) {
    Parameter<double>& p = *up;
    for (size_t i : probe_indices(p.value.size(), probes_per_tensor, rng)) {
      const double analytic = p.grad.empty() ? 0.0 : p.grad.data[i];
      const double numeric = central_diff(p.value, i, value, step);
      fam.max_rel_err = std::max(fam.max_rel_err, rel_err(analytic, numeric));
      ++fam.probes;
    }
  }
  for (auto& [storage, gradsrc] : inputs) {
    for (size_t i : probe_indices(storage->size(), probes_per_tensor, rng)) {
      const double analytic = gradsrc->empty() ? 0.0 : gradsrc->data[i];
      const double numeric = central_diff(*storage, i, value, step);
      fam.max_rel_err = std::max(fam.max_rel_err, rel_err(analytic, numeric));
      ++fam.probes;
    }
  }
  ++fam.instances;
}

inline void e2e_bpc(FdFamilyResult& fam, RandomSource& rng) {
  const BackboneConfig bk = BackboneConfig::tiny();
  const int S = 32, cb = 8;
  ParameterStore<double> ps;
  RandomSource init(rng.next_u64());
  BpcModule<double> bpc(ps, init, "bpc", bk, cb);
  // Zero-initialized flow convs would hide the warp path; give them life.
  for (int k = 1; k <= 3; ++k) {
    Parameter<double>* w = ps.find("bpc.flow" + std::to_string(k) + ".w");
    for (double& v : w->value.data) v = rng.uniform(-0.02, 0.02);
  }

  std::array<Tensor4<double>, 5> feats;
  for (int i = 0; i < 5; ++i)
    feats[i] = rand_tensor(rng, 1, bk.widths[i], S >> i, S >> i, -0.5, 0.5);
  std::array<Tensor4<double>, 3> projs;
  for (int k = 0; k < 3; ++k) projs[k] = rand_proj(rng, Tensor4<double>(1, cb, S, S));

  std::array<Var<double>, 5> leaves;
  auto build = [&](bool track) {
    EncoderPyramid<double> enc;
    for (int i = 0; i < 5; ++i) leaves[i] = Var<double>(feats[i], track);
    enc.e1 = leaves[0];
    enc.e2 = leaves[1];
    enc.e3 = leaves[2];
    enc.e4 = leaves[3];
    enc.e5 = leaves[4];
    CalibrationState<double> st = bpc(enc);
    Var<double> loss = proj_loss(st.outputs[0], projs[0]);
    loss = add(loss, proj_loss(st.outputs[1], projs[1]));
    return add(loss, proj_loss(st.outputs[2], projs[2]));
  };

  ps.zero_grads();
  Var<double> loss = build(true);
  std::array<Var<double>, 5> tracked = leaves;
  backward(loss);
  auto value = [&]() { return build(false).value().data[0]; };
  std::vector<std::pair<Tensor4<double>*, const Tensor4<double>*>> inputs;
  for (int i = 0; i < 5; ++i) inputs.emplace_back(&feats[i], &tracked[i].node->grad);
  probe_store_and_inputs(ps, std::move(inputs), value, rng, fam, 3, 1e-6);
}

inline void e2e_decode(FdFamilyResult& fam, RandomSource& rng) {
  const BackboneConfig bk = BackboneConfig::tiny();
  const int S = 32, cb = 8;
  ParameterStore<double> ps;
  RandomSource init(rng.next_u64());
  Decoder<double> dec(ps, init, "dec", bk, cb);

  std::array<Tensor4<double>, 5> feats;
  for (int i = 0; i < 5; ++i)
    feats[i] = rand_tensor(rng, 1, bk.widths[i], S >> i, S >> i, -0.5, 0.5);
  std::array<Tensor4<double>, 4> projs;
  for (int k = 0; k < 4; ++k)
    projs[k] = rand_proj(rng, Tensor4<double>(1, cb, S >> (3 - k), S >> (3 - k)));

  std::array<Var<double>, 5> leaves;
  auto build = [&](bool track) {
    std::array<Var<double>, 5> f;
    for (int i = 0; i < 5; ++i) f[i] = leaves[i] = Var<double>(feats[i], track);
    DecoderPyramid<double> dp = dec(f);
    Var<double> loss = proj_loss(dp.d8, projs[0]);
    loss = add(loss, proj_loss(dp.d4, projs[1]));
    loss = add(loss, proj_loss(dp.d2, projs[2]));
    return add(loss, proj_loss(dp.d1, projs[3]));
  };

  ps.zero_grads();
  Var<double> loss = build(true);
  std::array<Var<double>, 5> tracked = leaves;
  backward(loss);
  auto value = [&]() { return build(false).value().data[0]; };
  std::vector<std::pair<Tensor4<double>*, const Tensor4<double>*>> inputs;
  for (int i = 0; i < 5; ++i) inputs.emplace_back(&feats[i], &tracked[i].node->grad);
  probe_store_and_inputs(ps, std::move(inputs), value, rng, fam, 3, 1e-6);
}

inline void e2e_afr(FdFamilyResult& fam, RandomSource& rng) {
  const int S = 32, cb = 8;
  ParameterStore<double> ps;
  RandomSource init(rng.next_u64());
  AfrModule<double> afr(ps, init, "afr", cb);

  Tensor4<double> d8 = rand_tensor(rng, 1, cb, S / 8, S / 8, -0.5, 0.5);
  Tensor4<double> d4 = rand_tensor(rng, 1, cb, S / 4, S / 4, -0.5, 0.5);
  Tensor4<double> d2 = rand_tensor(rng, 1, cb, S / 2, S / 2, -0.5, 0.5);
  Tensor4<double> d1 = rand_tensor(rng, 1, cb, S, S, -0.5, 0.5);
  Tensor4<double> m1 = rand_tensor(rng, 1, cb, S, S, -0.5, 0.5);
  Tensor4<double> r_refined = rand_proj(rng, Tensor4<double>(1, 1, S / 2, S / 2));
  Tensor4<double> r_fused = rand_proj(rng, Tensor4<double>(1, 1, S, S));

  std::array<Var<double>, 5> leaves;
  std::array<Tensor4<double>*, 5> storage = {&d8, &d4, &d2, &d1, &m1};
  auto build = [&](bool track) {
    for (int i = 0; i < 5; ++i) leaves[i] = Var<double>(*storage[i], track);
    DecoderPyramid<double> dp;
    dp.d8 = leaves[0];
    dp.d4 = leaves[1];
    dp.d2 = leaves[2];
    dp.d1 = leaves[3];
    AfrOutputs<double> out = afr(dp, leaves[4]);
    return add(proj_loss(out.refined_logit, r_refined), proj_loss(out.fused_logit, r_fused));
  };

  ps.zero_grads();
  Var<double> loss = build(true);
  std::array<Var<double>, 5> tracked = leaves;
  backward(loss);
  auto value = [&]() { return build(false).value().data[0]; };
  std::vector<std::pair<Tensor4<double>*, const Tensor4<double>*>> inputs;
  for (int i = 0; i < 5; ++i) inputs.emplace_back(storage[i], &tracked[i].node->grad);
  probe_store_and_inputs(ps, std::move(inputs), value, rng, fam, 3, 1e-6);
}

}  // namespace fd

inline GradReport run_gradient_suite(unsigned long long seed) {
  RandomSource rng(seed);
  GradReport rep;
  auto run = [&](const char* name, auto&& fn) {
    FdFamilyResult fam;
    fam.family = name;
    fn(fam, rng);
    fam.pass = fam.max_rel_err <= fd::kRelTol;
    rep.worst = std::max(rep.worst, fam.max_rel_err);
    rep.pass = rep.pass && fam.pass;
    rep.families.push_back(std::move(fam));
  };
  run("conv2d", [](auto& f, auto& r) { fd::family_conv2d(f, r); });
  run("conv_transpose2d", [](auto& f, auto& r) { fd::family_conv_transpose2d(f, r); });
  run("bilinear_resize", [](auto& f, auto& r) { fd::family_bilinear_resize(f, r); });
  run("grid_sample", [](auto& f, auto& r) { fd::family_grid_sample(f, r); });
  run("se_layer", [](auto& f, auto& r) { fd::family_se_layer(f, r); });
  run("maxpool2", [](auto& f, auto& r) { fd::family_maxpool2(f, r); });
  run("elementwise", [](auto& f, auto& r) { fd::family_elementwise(f, r); });
  run("concat", [](auto& f, auto& r) { fd::family_concat(f, r); });
  run("losses", [](auto& f, auto& r) { fd::family_losses(f, r); });
  run("bpc_forward", [](auto& f, auto& r) { fd::e2e_bpc(f, r); });
  run("decode", [](auto& f, auto& r) { fd::e2e_decode(f, r); });
  run("afr_forward", [](auto& f, auto& r) { fd::e2e_afr(f, r); });
  return rep;
}

}  // namespace bscg
