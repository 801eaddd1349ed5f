#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "bscg/ops.hpp"

namespace bscg {

// --------------------------------------------------------------- losses ---

// Pixel-mean binary cross-entropy on probabilities; probabilities are clamped
// to [1e-7, 1-1e-7] and the gradient is zero in the clamped region.
template <class T>
Var<T> bce_loss(const Var<T>& p, const Tensor4<T>& target) {
  const Tensor4<T>& P = p.value();
  require(P.same_shape(target), "bce_loss: prediction " + P.shape_str() +
                                     " vs target " + target.shape_str());
  constexpr double kEps = 1e-7;
  const size_t N = P.size();
  double acc = 0.0;
  for (size_t i = 0; i < N; ++i) {
    double pc = std::clamp(double(P.data[i]), kEps, 1.0 - kEps);
    double y = double(target.data[i]);
    acc -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
  }
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>::scalar(T(acc / double(N)));
  out->parents = {p.node};
  out->needs_grad = p.node->needs_grad;
  if (out->needs_grad) {
    auto pn = p.node;
    auto tgt = std::make_shared<Tensor4<T>>(target);
    out->backprop = [pn, tgt, N](Node<T>& self) {
      pn->ensure_grad();
      const double g = double(self.grad.data[0]) / double(N);
      for (size_t i = 0; i < N; ++i) {
        const double pv = double(pn->value.data[i]);
        if (pv < kEps || pv > 1.0 - kEps) continue;  // clamped: flat
        const double y = double(tgt->data[i]);
        pn->grad.data[i] += T(g * (pv - y) / (pv * (1.0 - pv)));
      }
    };
  }
  return Var<T>(out);
}

// Soft IoU loss, computed per image and averaged over the batch:
// 1 - sum(p*y) / (sum(p + y - p*y) + 1e-7).
template <class T>
Var<T> iou_loss(const Var<T>& p, const Tensor4<T>& target) {
  const Tensor4<T>& P = p.value();
  require(P.same_shape(target), "iou_loss: prediction " + P.shape_str() +
                                     " vs target " + target.shape_str());
  constexpr double kEps = 1e-7;
  const size_t per_image = size_t(P.c) * P.h * P.w;
  std::vector<double> nums(P.n), dens(P.n);
  double total = 0.0;
  for (int b = 0; b < P.n; ++b) {
    const T* pp = P.data.data() + size_t(b) * per_image;
    const T* yy = target.data.data() + size_t(b) * per_image;
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < per_image; ++i) {
      const double pv = double(pp[i]);
      const double yv = double(yy[i]);
      num += pv * yv;
      den += pv + yv - pv * yv;
    }
    nums[b] = num;
    dens[b] = den + kEps;
    total += 1.0 - num / dens[b];
  }
  auto out = std::make_shared<Node<T>>();
  out->value = Tensor4<T>::scalar(T(total / double(P.n)));
  out->parents = {p.node};
  out->needs_grad = p.node->needs_grad;
  if (out->needs_grad) {
    auto pn = p.node;
    auto tgt = std::make_shared<Tensor4<T>>(target);
    out->backprop = [pn, tgt, nums, dens, per_image](Node<T>& self) {
      pn->ensure_grad();
      const int B = pn->value.n;
      const double g = double(self.grad.data[0]) / double(B);
      for (int b = 0; b < B; ++b) {
        const T* yy = tgt->data.data() + size_t(b) * per_image;
        T* gp = pn->grad.data.data() + size_t(b) * per_image;
        const double den = dens[b], num = nums[b];
        for (size_t i = 0; i < per_image; ++i) {
          const double y = double(yy[i]);
          gp[i] += T(g * (num * (1.0 - y) - y * den) / (den * den));
        }
      }
    };
  }
  return Var<T>(out);
}

// Joint deep-supervision objective: each logit map goes through sigmoid, then
// BCE (+ soft IoU unless disabled); every output carries equal weight 1.
template <class T>
struct LossTerms {
  Var<T> joint;  // scalar graph node
  double bce = 0.0, iou = 0.0, total = 0.0;
  std::vector<double> per_output_bce, per_output_iou;
};

template <class T>
LossTerms<T> joint_loss(const std::vector<Var<T>>& logits, const Tensor4<T>& target,
                        bool use_iou = true) {
  require(!logits.empty(), "joint_loss: wrong output count (0)");
  LossTerms<T> terms;
  Var<T> acc;
  for (const Var<T>& logit : logits) {
    const Tensor4<T>& L = logit.value();
    require(L.same_shape(target), "joint_loss: logit " + L.shape_str() +
                                       " does not match target shape");
    Var<T> p = sigmoid(logit);
    Var<T> b = bce_loss(p, target);
    terms.per_output_bce.push_back(double(b.value().data[0]));
    Var<T> term = b;
    if (use_iou) {
      Var<T> j = iou_loss(p, target);
      terms.per_output_iou.push_back(double(j.value().data[0]));
      term = add(b, j);
    } else {
      terms.per_output_iou.push_back(0.0);
    }
    acc = acc.valid() ? add(acc, term) : term;
  }
  terms.joint = acc;
  for (double v : terms.per_output_bce) terms.bce += v;
  for (double v : terms.per_output_iou) terms.iou += v;
  terms.total = double(acc.value().data[0]);
  return terms;
}

// -------------------------------------------------------------- metrics ---
// All metrics run in double on single-plane maps: prediction in [0,1],
// ground truth binary {0,1}.

inline void check_metric_pair(const Tensor4<double>& s, const Tensor4<double>& g) {
  require(s.n == 1 && s.c == 1, "metric: prediction must be 1x1xHxW, got " + s.shape_str());
  require(s.same_shape(g),
          "metric: prediction " + s.shape_str() + " vs ground truth " + g.shape_str());
}

inline double metric_mae(const Tensor4<double>& s, const Tensor4<double>& g) {
  check_metric_pair(s, g);
  double acc = 0.0;
  for (size_t i = 0; i < s.size(); ++i) acc += std::abs(s.data[i] - g.data[i]);
  return acc / double(s.size());
}

struct FCurve {
  std::array<double, 256> precision{}, recall{}, f{};
  double max_f = 0.0;
};

// 256-threshold F-measure sweep with beta^2 = 0.3: a pixel is predicted
// salient at threshold t iff S > t/255. Empty-prediction precision and
// empty-GT recall are defined as 0, as is F when its denominator vanishes.
inline FCurve f_measure_curve(const Tensor4<double>& s, const Tensor4<double>& g,
                              double beta2 = 0.3) {
  check_metric_pair(s, g);
  FCurve out;
  size_t gt_pos = 0;
  for (size_t i = 0; i < g.size(); ++i)
    if (g.data[i] > 0.5) ++gt_pos;
  for (int t = 0; t < 256; ++t) {
    const double thr = double(t) / 255.0;
    size_t tp = 0, pred_pos = 0;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s.data[i] > thr) {
        ++pred_pos;
        if (g.data[i] > 0.5) ++tp;
      }
    }
    const double precision = pred_pos > 0 ? double(tp) / double(pred_pos) : 0.0;
    const double recall = gt_pos > 0 ? double(tp) / double(gt_pos) : 0.0;
    const double denom = beta2 * precision + recall;
    const double f = denom > 0.0 ? (1.0 + beta2) * precision * recall / denom : 0.0;
    out.precision[t] = precision;
    out.recall[t] = recall;
    out.f[t] = f;
    out.max_f = std::max(out.max_f, f);
  }
  return out;
}

namespace detail {

constexpr double kMatEps = 2.220446049250313e-16;

// 2x/(x^2 + 1 + sigma) similarity over a masked region; sample std (N-1).
inline double object_score(const Tensor4<double>& pred, const Tensor4<double>& g,
                           bool fg, bool invert) {
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool in = (g.data[i] > 0.5) == fg;
    if (!in) continue;
    sum += invert ? 1.0 - pred.data[i] : pred.data[i];
    ++count;
  }
  if (count == 0) return 0.0;
  const double mean = sum / double(count);
  double varacc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool in = (g.data[i] > 0.5) == fg;
    if (!in) continue;
    const double v = (invert ? 1.0 - pred.data[i] : pred.data[i]) - mean;
    varacc += v * v;
  }
  const double sdev = count > 1 ? std::sqrt(varacc / double(count - 1)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sdev + kMatEps);
}

// SSIM-style block similarity used by the region term.
inline double block_ssim(const std::vector<double>& p, const std::vector<double>& g) {
  const double N = double(p.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    mx += p[i];
    my += g[i];
  }
  mx /= N;
  my /= N;
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    sx += (p[i] - mx) * (p[i] - mx);
    sy += (g[i] - my) * (g[i] - my);
    sxy += (p[i] - mx) * (g[i] - my);
  }
  const double denom_n = N - 1.0 + kMatEps;
  sx /= denom_n;
  sy /= denom_n;
  sxy /= denom_n;
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sx + sy);
  if (alpha != 0.0) return alpha / (beta + kMatEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

struct SParts {
  double s = 0.0;
  double s_object = 0.0;
  double s_region = 0.0;
  bool degenerate = false;
};

// Structure measure S = alpha*S_object + (1-alpha)*S_region. Degenerate
// ground truths fall back to 1-mean(S) / mean(S); the result is clamped to
// [0,1]. The region split is taken at the GT centroid, computed with 1-based
// indices and round-half-away-from-zero to match the reference semantics.
inline SParts s_measure(const Tensor4<double>& s, const Tensor4<double>& g,
                        double alpha = 0.5) {
  check_metric_pair(s, g);
  SParts out;
  const int H = g.h, W = g.w;
  double gt_sum = 0.0;
  for (size_t i = 0; i < g.size(); ++i) gt_sum += (g.data[i] > 0.5) ? 1.0 : 0.0;
  const double area = double(H) * double(W);

  if (gt_sum == 0.0 || gt_sum == area) {
    double mean_s = 0.0;
    for (size_t i = 0; i < s.size(); ++i) mean_s += s.data[i];
    mean_s /= area;
    out.degenerate = true;
    out.s = gt_sum == 0.0 ? 1.0 - mean_s : mean_s;
    out.s = std::clamp(out.s, 0.0, 1.0);
    return out;
  }

  // Object term: foreground weighted by GT coverage.
  const double mu = gt_sum / area;
  const double o_fg = detail::object_score(s, g, /*fg=*/true, /*invert=*/false);
  const double o_bg = detail::object_score(s, g, /*fg=*/false, /*invert=*/true);
  out.s_object = mu * o_fg + (1.0 - mu) * o_bg;

  // Region term: centroid split (1-based rounding), area-weighted block SSIM.
  double cx = 0.0, cy = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (g.at(0, 0, y, x) > 0.5) {
        cx += double(x + 1);
        cy += double(y + 1);
      }
  const int X = int(std::llround(cx / gt_sum));
  const int Y = int(std::llround(cy / gt_sum));

  struct Block {
    int y0, y1, x0, x1;  // half-open, 0-based
  };
  const Block blocks[4] = {
      {0, Y, 0, X}, {0, Y, X, W}, {Y, H, 0, X}, {Y, H, X, W}};
  out.s_region = 0.0;
  for (const Block& b : blocks) {
    const int bh = b.y1 - b.y0, bw = b.x1 - b.x0;
    if (bh <= 0 || bw <= 0) continue;  // zero-weight block
    std::vector<double> bp, bg;
    bp.reserve(size_t(bh) * bw);
    bg.reserve(size_t(bh) * bw);
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        bp.push_back(s.at(0, 0, y, x));
        bg.push_back(g.at(0, 0, y, x) > 0.5 ? 1.0 : 0.0);
      }
    const double wgt = double(bh) * double(bw) / area;
    out.s_region += wgt * detail::block_ssim(bp, bg);
  }

  out.s = alpha * out.s_object + (1.0 - alpha) * out.s_region;
  out.s = std::clamp(out.s, 0.0, 1.0);
  return out;
}

// ------------------------------------------------------------- aggregate ---

struct ImageMetrics {
  std::string stem;
  double mae = 0.0;
  SParts s;
  FCurve curve;
};

struct Quartiles {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// Linear-interpolation quantile over a sorted vector (numpy default).
inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  if (v.size() == 1) return v[0];
  const double pos = q * double(v.size() - 1);
  const size_t lo = size_t(pos);
  const double frac = pos - double(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

struct MetricsReport {
  std::vector<ImageMetrics> per_image;  // sorted by stem
  size_t count = 0;
  double mean_mae = 0.0, mean_s = 0.0, mean_max_f = 0.0;
  Quartiles mae_quartiles;
  std::array<double, 256> mean_precision{}, mean_recall{}, mean_f{};
};

inline MetricsReport aggregate(std::vector<ImageMetrics> records) {
  std::sort(records.begin(), records.end(),
            [](const ImageMetrics& a, const ImageMetrics& b) { return a.stem < b.stem; });
  MetricsReport rep;
  rep.count = records.size();
  if (records.empty()) {
    rep.per_image = std::move(records);
    return rep;
  }
  std::vector<double> maes;
  maes.reserve(records.size());
  for (const auto& r : records) {
    rep.mean_mae += r.mae;
    rep.mean_s += r.s.s;
    rep.mean_max_f += r.curve.max_f;
    maes.push_back(r.mae);
    for (int t = 0; t < 256; ++t) {
      rep.mean_precision[t] += r.curve.precision[t];
      rep.mean_recall[t] += r.curve.recall[t];
      rep.mean_f[t] += r.curve.f[t];
    }
  }
  const double inv = 1.0 / double(records.size());
  rep.mean_mae *= inv;
  rep.mean_s *= inv;
  rep.mean_max_f *= inv;
  for (int t = 0; t < 256; ++t) {
    rep.mean_precision[t] *= inv;
    rep.mean_recall[t] *= inv;
    rep.mean_f[t] *= inv;
  }
  std::sort(maes.begin(), maes.end());
  rep.mae_quartiles.min = maes.front();
  rep.mae_quartiles.q1 = quantile_sorted(maes, 0.25);
  rep.mae_quartiles.median = quantile_sorted(maes, 0.5);
  rep.mae_quartiles.q3 = quantile_sorted(maes, 0.75);
  rep.mae_quartiles.max = maes.back();
  rep.per_image = std::move(records);
  return rep;
}

}  // namespace bscg
