#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bscg/objective.hpp"

using namespace bscg;

namespace {

Tensor4<double> plane(int h, int w, std::initializer_list<double> vals) {
  Tensor4<double> t(1, 1, h, w);
  size_t i = 0;
  for (double v : vals) t.data[i++] = v;
  return t;
}

// Loop oracle for the thresholded F sweep, written independently of the
// library implementation.
void oracle_f(const Tensor4<double>& s, const Tensor4<double>& g, int t, double& P,
              double& R, double& F) {
  const double thr = t / 255.0;
  int tp = 0, pp = 0, gp = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    const bool pred = s.data[i] > thr;
    const bool gt = g.data[i] > 0.5;
    if (pred) ++pp;
    if (gt) ++gp;
    if (pred && gt) ++tp;
  }
  P = pp ? double(tp) / pp : 0.0;
  R = gp ? double(tp) / gp : 0.0;
  const double den = 0.3 * P + R;
  F = den > 0 ? 1.3 * P * R / den : 0.0;
}

}  // namespace

TEST_CASE("binary cross-entropy matches hand values and survives saturation") {
  Tensor4<double> y = plane(1, 2, {1.0, 0.0});
  Tensor4<double> p = plane(1, 2, {0.8, 0.2});
  Var<double> loss = bce_loss(Var<double>(p), y);
  REQUIRE(loss.value().data[0] == Catch::Approx(-std::log(0.8)).margin(1e-12));

  Tensor4<double> hard = plane(1, 2, {1.0, 0.0});
  Var<double> l2 = bce_loss(Var<double>(hard), y);
  REQUIRE(std::isfinite(l2.value().data[0]));
  REQUIRE(l2.value().data[0] < 1e-5);  // clamped, near zero

  REQUIRE_THROWS_AS(bce_loss(Var<double>(p), plane(2, 1, {1.0, 0.0})), ShapeError);
}

TEST_CASE("soft IoU loss is per-image and batch-averaged") {
  SECTION("perfect binary prediction scores about zero") {
    Tensor4<double> y = plane(2, 2, {1, 0, 1, 0});
    Var<double> loss = iou_loss(Var<double>(y), y);
    REQUIRE(loss.value().data[0] == Catch::Approx(0.0).margin(1e-6));
  }

  SECTION("hand value for a uniform half prediction") {
    Tensor4<double> y = plane(2, 2, {1, 1, 0, 0});
    Tensor4<double> p = Tensor4<double>::full(1, 1, 2, 2, 0.5);
    // num = 1, den = 0.5*4 + 2 - 1 = 3
    Var<double> loss = iou_loss(Var<double>(p), y);
    REQUIRE(loss.value().data[0] == Catch::Approx(1.0 - 1.0 / (3.0 + 1e-7)).margin(1e-12));
  }

  SECTION("batch of two averages the per-image terms") {
    Tensor4<double> y(2, 1, 1, 2);
    y.data = {1, 0, 1, 1};
    Tensor4<double> p(2, 1, 1, 2);
    p.data = {1, 0, 0, 0};  // image 1 perfect, image 2 empty
    Var<double> loss = iou_loss(Var<double>(p), y);
    // (0 + 1) / 2, up to epsilon
    REQUIRE(loss.value().data[0] == Catch::Approx(0.5).margin(1e-6));
  }
}

TEST_CASE("joint objective sums sigmoid-BCE and IoU over every output") {
  Tensor4<double> y = plane(2, 2, {1, 0, 0, 1});
  Tensor4<double> l1 = plane(2, 2, {2.0, -1.0, 0.5, 1.5});
  Tensor4<double> l2 = plane(2, 2, {-0.5, 0.25, 1.0, -2.0});
  std::vector<Var<double>> logits = {Var<double>(l1), Var<double>(l2)};

  LossTerms<double> terms = joint_loss<double>(logits, y, true);
  REQUIRE(terms.per_output_bce.size() == 2);
  REQUIRE(terms.per_output_iou.size() == 2);
  REQUIRE(terms.total ==
          Catch::Approx(terms.bce + terms.iou).margin(1e-9));
  REQUIRE(terms.total == Catch::Approx(terms.per_output_bce[0] + terms.per_output_bce[1] +
                                       terms.per_output_iou[0] + terms.per_output_iou[1])
                             .margin(1e-9));

  LossTerms<double> no_iou = joint_loss<double>(logits, y, false);
  REQUIRE(no_iou.iou == 0.0);
  REQUIRE(no_iou.total == Catch::Approx(no_iou.bce).margin(1e-12));

  REQUIRE_THROWS_AS(joint_loss<double>({}, y, true), ShapeError);
  std::vector<Var<double>> bad = {Var<double>(plane(1, 2, {0, 0}))};
  REQUIRE_THROWS_AS(joint_loss<double>(bad, y, true), ShapeError);
}

TEST_CASE("MAE and the F sweep agree with loop oracles on random maps") {
  RandomSource rng(101);
  for (int trial = 0; trial < 12; ++trial) {
    const int h = 16, w = 16;
    Tensor4<double> s(1, 1, h, w), g(1, 1, h, w);
    for (double& v : s.data) v = rng.uniform(0.0, 1.0);
    for (double& v : g.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;

    double mae = 0.0;
    for (size_t i = 0; i < s.size(); ++i) mae += std::abs(s.data[i] - g.data[i]);
    mae /= double(h * w);
    REQUIRE(metric_mae(s, g) == Catch::Approx(mae).margin(1e-13));

    FCurve c = f_measure_curve(s, g);
    double want_max = 0.0;
    for (int t = 0; t < 256; t += 17) {  // sample the sweep
      double P, R, F;
      oracle_f(s, g, t, P, R, F);
      REQUIRE(c.precision[t] == Catch::Approx(P).margin(1e-13));
      REQUIRE(c.recall[t] == Catch::Approx(R).margin(1e-13));
      REQUIRE(c.f[t] == Catch::Approx(F).margin(1e-13));
    }
    for (int t = 0; t < 256; ++t) want_max = std::max(want_max, c.f[t]);
    REQUIRE(c.max_f == want_max);
  }
}

TEST_CASE("F hand case: precision 1/2 and recall 1 give 0.565217") {
  // prediction salient everywhere, GT covers half the image
  Tensor4<double> s = Tensor4<double>::full(1, 1, 2, 4, 1.0);
  Tensor4<double> g = plane(2, 4, {1, 1, 1, 1, 0, 0, 0, 0});
  FCurve c = f_measure_curve(s, g);
  REQUIRE(c.precision[128] == 0.5);
  REQUIRE(c.recall[128] == 1.0);
  REQUIRE(std::abs(c.max_f - 0.565217) <= 1e-6);
  // at t = 255 nothing clears the strict threshold
  REQUIRE(c.precision[255] == 0.0);
  REQUIRE(c.recall[255] == 0.0);
}

TEST_CASE("degenerate and extreme cases of the F sweep") {
  SECTION("empty ground truth pins recall and F to zero") {
    Tensor4<double> s = Tensor4<double>::full(1, 1, 3, 3, 0.9);
    Tensor4<double> g(1, 1, 3, 3);
    FCurve c = f_measure_curve(s, g);
    for (int t = 0; t < 256; ++t) {
      REQUIRE(c.recall[t] == 0.0);
      REQUIRE(c.f[t] == 0.0);
    }
  }

  SECTION("empty prediction pins precision to zero") {
    Tensor4<double> s(1, 1, 3, 3);
    Tensor4<double> g = Tensor4<double>::full(1, 1, 3, 3, 1.0);
    FCurve c = f_measure_curve(s, g);
    for (int t = 0; t < 256; ++t) REQUIRE(c.precision[t] == 0.0);
  }

  SECTION("ground truth used as prediction is perfect") {
    RandomSource rng(55);
    Tensor4<double> g(1, 1, 8, 8);
    for (double& v : g.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    bool any = false, all = true;
    for (double v : g.data) {
      any = any || v > 0.5;
      all = all && v > 0.5;
    }
    if (any && !all) {
      REQUIRE(metric_mae(g, g) == 0.0);
      REQUIRE(f_measure_curve(g, g).max_f == 1.0);
    }
  }
}

TEST_CASE("structure measure rewards matching structure") {
  RandomSource rng(77);
  Tensor4<double> g(1, 1, 16, 16);
  // centered square object
  for (int y = 5; y < 12; ++y)
    for (int x = 4; x < 11; ++x) g.at(0, 0, y, x) = 1.0;

  SECTION("perfect prediction scores near one") {
    SParts sp = s_measure(g, g);
    REQUIRE_FALSE(sp.degenerate);
    REQUIRE(sp.s >= 0.98);
  }

  SECTION("inverted prediction scores low") {
    Tensor4<double> inv(1, 1, 16, 16);
    for (size_t i = 0; i < g.size(); ++i) inv.data[i] = 1.0 - g.data[i];
    REQUIRE(s_measure(inv, g).s < 0.5);
    REQUIRE(s_measure(inv, g).s < s_measure(g, g).s);
  }

  SECTION("uniform prediction scores below a perfect one") {
    Tensor4<double> flat = Tensor4<double>::full(1, 1, 16, 16, 0.5);
    const double mid = s_measure(flat, g).s;
    REQUIRE(mid > 0.0);
    REQUIRE(mid < s_measure(g, g).s);
  }

  SECTION("scores stay inside [0, 1] on random maps") {
    for (int trial = 0; trial < 25; ++trial) {
      Tensor4<double> s(1, 1, 12, 12), gt(1, 1, 12, 12);
      for (double& v : s.data) v = rng.uniform(0.0, 1.0);
      for (double& v : gt.data) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
      const SParts sp = s_measure(s, gt);
      REQUIRE(sp.s >= 0.0);
      REQUIRE(sp.s <= 1.0);
    }
  }
}

TEST_CASE("structure measure falls back on degenerate ground truth") {
  Tensor4<double> s = Tensor4<double>::full(1, 1, 4, 4, 0.25);

  SECTION("all-background GT scores one minus the mean prediction") {
    Tensor4<double> g(1, 1, 4, 4);
    SParts sp = s_measure(s, g);
    REQUIRE(sp.degenerate);
    REQUIRE(sp.s == Catch::Approx(0.75).margin(1e-12));
  }

  SECTION("all-foreground GT scores the mean prediction") {
    Tensor4<double> g = Tensor4<double>::full(1, 1, 4, 4, 1.0);
    SParts sp = s_measure(s, g);
    REQUIRE(sp.degenerate);
    REQUIRE(sp.s == Catch::Approx(0.25).margin(1e-12));
  }
}

TEST_CASE("quantiles interpolate linearly between order statistics") {
  std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  REQUIRE(quantile_sorted(v, 0.25) == Catch::Approx(1.75).margin(1e-15));
  REQUIRE(quantile_sorted(v, 0.5) == Catch::Approx(2.5).margin(1e-15));
  REQUIRE(quantile_sorted(v, 0.75) == Catch::Approx(3.25).margin(1e-15));
  REQUIRE(quantile_sorted(v, 0.0) == 1.0);
  REQUIRE(quantile_sorted(v, 1.0) == 4.0);
  REQUIRE(quantile_sorted({7.5}, 0.5) == 7.5);
}

TEST_CASE("aggregation sorts by stem and averages every series") {
  auto make = [](const char* stem, double mae, double s, double maxf) {
    ImageMetrics m;
    m.stem = stem;
    m.mae = mae;
    m.s.s = s;
    m.curve.max_f = maxf;
    for (int t = 0; t < 256; ++t) m.curve.f[t] = maxf * 0.5;
    return m;
  };
  std::vector<ImageMetrics> recs = {make("c", 0.3, 0.5, 0.6), make("a", 0.1, 0.9, 0.8),
                                    make("b", 0.2, 0.7, 0.7)};
  MetricsReport rep = aggregate(recs);
  REQUIRE(rep.count == 3);
  REQUIRE(rep.per_image[0].stem == "a");
  REQUIRE(rep.per_image[2].stem == "c");
  REQUIRE(rep.mean_mae == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(rep.mean_s == Catch::Approx(0.7).margin(1e-15));
  REQUIRE(rep.mean_max_f == Catch::Approx(0.7).margin(1e-15));
  REQUIRE(rep.mean_f[100] == Catch::Approx(0.35).margin(1e-15));
  REQUIRE(rep.mae_quartiles.min == 0.1);
  REQUIRE(rep.mae_quartiles.median == Catch::Approx(0.2).margin(1e-15));
  REQUIRE(rep.mae_quartiles.max == 0.3);
  REQUIRE(rep.mae_quartiles.q1 == Catch::Approx(0.15).margin(1e-15));
  REQUIRE(rep.mae_quartiles.q3 == Catch::Approx(0.25).margin(1e-15));
}
