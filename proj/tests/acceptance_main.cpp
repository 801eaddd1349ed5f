// End-to-end acceptance harness. Runs eight checks against the library and
// the command-line binary and prints one verdict line per check. Exits
// nonzero if any gated check fails; the architecture-budget check is a
// report, not a gate.
//
// Usage: acceptance --cli <path-to-bscgnet> --workdir <scratch-dir>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bscg/evalrun.hpp"
#include "bscg/gradcheck.hpp"
#include "bscg/train.hpp"

using namespace bscg;
namespace fs = std::filesystem;

namespace {

struct Harness {
  std::string cli;
  fs::path wd;
  int failures = 0;

  void verdict(int idx, bool ok, const std::string& what) {
    std::printf("[%s] %d. %s\n", ok ? "PASS" : "FAIL", idx, what.c_str());
    if (!ok) ++failures;
  }
  void report(int idx, const std::string& what) {
    std::printf("[REPORT] %d. %s\n", idx, what.c_str());
  }

  // Runs the CLI, capturing child output into a per-step log file.
  int run(const std::string& args, const std::string& log_name) {
    const std::string log = (wd / (log_name + ".log")).string();
    const std::string cmd = cli + " " + args + " > '" + log + "' 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) std::printf("  command failed (%d): %s %s\n", rc, cli.c_str(), args.c_str());
    return rc;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  const std::string sa = slurp(a), sb = slurp(b);
  return !sa.empty() && sa == sb;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- check 1 --

void check_gradients(Harness& h) {
  const auto t0 = std::chrono::steady_clock::now();
  GradReport rep = run_gradient_suite(1234);
  const double secs = seconds_since(t0);

  const char* op_families[] = {"conv2d",   "conv_transpose2d", "bilinear_resize",
                               "grid_sample", "se_layer",      "maxpool2",
                               "elementwise", "concat",        "losses"};
  const char* e2e[] = {"bpc_forward", "decode", "afr_forward"};

  bool ok = rep.pass && secs <= 120.0;
  std::string missing;
  auto find = [&](const char* name) -> const FdFamilyResult* {
    for (const auto& f : rep.families)
      if (f.family == name) return &f;
    return nullptr;
  };
  for (const char* name : op_families) {
    const FdFamilyResult* f = find(name);
    if (!f || f->instances < 5 || !f->pass) {
      ok = false;
      missing += std::string(" ") + name;
    }
  }
  for (const char* name : e2e) {
    const FdFamilyResult* f = find(name);
    if (!f || f->instances < 1 || !f->pass) {
      ok = false;
      missing += std::string(" ") + name;
    }
  }
  std::string what = "finite-difference gradients: 9 op families (>=5 instances each) + 3 "
                     "module passes, worst rel err " +
                     fmt("%.2e", rep.worst) + " (tol 1e-4), " + fmt("%.1f", secs) +
                     "s (limit 120s)";
  if (!missing.empty()) what += "; failing:" + missing;
  h.verdict(1, ok, what);
}

// ---------------------------------------------------------------- check 2 --

// Loop re-implementations of the two scalar metrics, kept deliberately
// separate from the library code paths.
double oracle_mae(const Tensor4<double>& s, const Tensor4<double>& g) {
  double acc = 0.0;
  for (size_t i = 0; i < s.size(); ++i) acc += std::abs(s.data[i] - g.data[i]);
  return acc / double(s.size());
}

struct OracleCurve {
  std::array<double, 256> p{}, r{}, f{};
};

OracleCurve oracle_curve(const Tensor4<double>& s, const Tensor4<double>& g) {
  OracleCurve out;
  long long gt_pos = 0;
  for (size_t i = 0; i < g.size(); ++i)
    if (g.data[i] > 0.5) ++gt_pos;
  for (int t = 0; t < 256; ++t) {
    long long tp = 0, pred_pos = 0;
    for (size_t i = 0; i < s.size(); ++i)
      if (s.data[i] > double(t) / 255.0) {
        ++pred_pos;
        if (g.data[i] > 0.5) ++tp;
      }
    out.p[t] = pred_pos > 0 ? double(tp) / double(pred_pos) : 0.0;
    out.r[t] = gt_pos > 0 ? double(tp) / double(gt_pos) : 0.0;
    const double den = 0.3 * out.p[t] + out.r[t];
    out.f[t] = den > 0.0 ? 1.3 * out.p[t] * out.r[t] / den : 0.0;
  }
  return out;
}

void check_metric_oracles(Harness& h) {
  RandomSource rng(777);
  bool exact = true;
  for (int trial = 0; trial < 20 && exact; ++trial) {
    Tensor4<double> s(1, 1, 32, 32), g(1, 1, 32, 32);
    for (auto& v : s.data) v = rng.uniform(0.0, 1.0);
    for (auto& v : g.data) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
    if (metric_mae(s, g) != oracle_mae(s, g)) exact = false;
    FCurve c = f_measure_curve(s, g);
    OracleCurve o = oracle_curve(s, g);
    double omax = 0.0;
    for (int t = 0; t < 256; ++t) {
      if (c.precision[t] != o.p[t] || c.recall[t] != o.r[t] || c.f[t] != o.f[t]) exact = false;
      omax = std::max(omax, o.f[t]);
    }
    if (c.max_f != omax) exact = false;
  }

  // half-plane ground truth under an all-ones prediction: precision 1/2,
  // recall 1 at every threshold below saturation
  Tensor4<double> ones(1, 1, 32, 32), half(1, 1, 32, 32);
  for (auto& v : ones.data) v = 1.0;
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) half.at(0, 0, i, j) = j < 16 ? 1.0 : 0.0;
  FCurve c = f_measure_curve(ones, half);
  const bool hand = c.precision[128] == 0.5 && c.recall[128] == 1.0 &&
                    std::abs(c.f[128] - 0.565217) <= 1e-6 &&
                    std::abs(c.max_f - c.f[128]) <= 1e-12;

  h.verdict(2, exact && hand,
            "metric oracles: mae and 256-threshold F curve bit-equal to loop oracles on 20 "
            "random 32x32 pairs; P=0.5,R=1 gives F=" +
                fmt("%.6f", c.f[128]) + " (want 0.565217 +/- 1e-6)");
}

// ---------------------------------------------------------------- check 3 --

void check_structural_invariants(Harness& h) {
  int trials = 0;
  bool ok = true;
  std::string why;
  for (int trial = 0; trial < 100 && ok; ++trial, ++trials) {
    RandomSource rng(5000 + trial);

    // warping with an all-zero flow must reproduce the input bit for bit
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    const int hh = rng.uniform_int(4, 12), ww = rng.uniform_int(4, 12);
    Tensor4<double> x(n, c, hh, ww);
    for (auto& v : x.data) v = rng.uniform(-3.0, 3.0);
    Var<double> warped = grid_sample(Var<double>(x), Var<double>(Tensor4<double>(n, 2, hh, ww)));
    for (size_t i = 0; i < x.size(); ++i)
      if (warped.value().data[i] != x.data[i]) {
        ok = false;
        why = "zero-flow warp not identity";
      }

    // sigmoid at exactly zero is exactly one half
    Var<double> sz = sigmoid(Var<double>(Tensor4<double>(1, 3, 5, 5)));
    for (double v : sz.value().data)
      if (v != 0.5) {
        ok = false;
        why = "sigmoid(0) != 0.5";
      }

    // encoder modulation multiplies by 1 + sigmoid(prior): always in (1,2)
    {
      ParameterStore<double> ps;
      RandomSource wrng(rng.derive(1));
      DffcAttention<double> att(ps, wrng, "dffc", BackboneConfig::tiny(), 4);
      Tensor4<double> m1(1, 4, 16, 16), e5(1, 64, 1, 1);
      for (auto& v : m1.data) v = rng.uniform(-2.0, 2.0);
      for (auto& v : e5.data) v = rng.uniform(-2.0, 2.0);
      DualAttention<double> da = att.attention(Var<double>(m1), Var<double>(e5));
      for (double v : da.p_prime.value().data) {
        const double factor = 1.0 + v;
        if (!(factor > 1.0 && factor < 2.0)) {
          ok = false;
          why = "modulation factor outside (1,2)";
        }
      }
    }

    // cross-refinement gains are 1 + sigmoid(attention): always in (1,2)
    {
      ParameterStore<double> ps;
      RandomSource wrng(rng.derive(2));
      IirCross<double> cross(ps, wrng, "x", 4);
      Tensor4<double> coarse(1, 4, 4, 4), fine(1, 4, 8, 8);
      for (auto& v : coarse.data) v = rng.uniform(-2.0, 2.0);
      for (auto& v : fine.data) v = rng.uniform(-2.0, 2.0);
      CrossState<double> st = cross(Var<double>(coarse), Var<double>(fine));
      for (const Var<double>* a : {&st.a_coarse, &st.a_fine})
        for (double v : a->value().data) {
          const double gain = 1.0 + v;
          if (!(gain > 1.0 && gain < 2.0)) {
            ok = false;
            why = "refinement gain outside (1,2)";
          }
        }
    }
  }
  std::string what = "structural invariants: zero-flow identity, modulation factor and "
                     "refinement gains in (1,2), sigmoid(0)=0.5 over " +
                     std::to_string(trials) + " randomized trials";
  if (!ok) what += "; first failure: " + why;
  h.verdict(3, ok, what);
}

// ------------------------------------------------------------- checks 4+5 --

struct OverfitRun {
  bool ok = false;
  double mae = 1.0, max_f = 0.0, secs = 0.0;
  fs::path out_dir, pred_dir, rep_dir;
};

OverfitRun overfit_via_cli(Harness& h, const fs::path& data, const std::string& tag,
                           int epochs) {
  OverfitRun r;
  r.out_dir = h.wd / (tag + "_run");
  r.pred_dir = h.wd / (tag + "_pred");
  r.rep_dir = h.wd / (tag + "_rep");

  nlohmann::json cfg;
  cfg["model"] = {{"preset", "tiny"}, {"input_size", 64}, {"seed", 7}};
  cfg["lr"] = 1e-3;
  cfg["batch_size"] = 4;
  cfg["epochs"] = epochs;
  cfg["lr_decay"] = 1.0;
  cfg["lr_decay_every"] = 1000000;
  cfg["seed"] = 7;
  cfg["augment"] = false;
  cfg["image_dir"] = (data / "images").string();
  cfg["mask_dir"] = (data / "masks").string();
  cfg["out_dir"] = r.out_dir.string();
  const fs::path cfg_path = h.wd / (tag + "_train.json");
  std::ofstream(cfg_path) << cfg.dump(2) << '\n';

  const auto t0 = std::chrono::steady_clock::now();
  if (h.run("train --config '" + cfg_path.string() + "'", tag + "_train")) return r;
  if (h.run("infer --ckpt '" + (r.out_dir / "final.ckpt").string() + "' --input '" +
                (data / "images").string() + "' --out '" + r.pred_dir.string() + "'",
            tag + "_infer"))
    return r;
  if (h.run("eval --pred '" + r.pred_dir.string() + "' --gt '" + (data / "masks").string() +
                "' --out '" + r.rep_dir.string() + "'",
            tag + "_eval"))
    return r;
  r.secs = seconds_since(t0);

  try {
    nlohmann::json agg = nlohmann::json::parse(slurp(r.rep_dir / "aggregate.json"));
    r.mae = agg.at("mean_mae").get<double>();
    r.max_f = agg.at("mean_max_f").get<double>();
    r.ok = true;
  } catch (const std::exception& e) {
    std::printf("  could not read aggregate.json: %s\n", e.what());
  }
  return r;
}

void check_overfit_and_determinism(Harness& h) {
  const fs::path data = h.wd / "c4_data";
  if (h.run("synth --count 8 --size 64 --seed 91 --out '" + data.string() + "'", "c4_synth")) {
    h.verdict(4, false, "overfit run: synthetic data generation failed");
    h.verdict(5, false, "determinism: skipped (no data)");
    return;
  }

  // 8 images, batch 4: two optimizer steps per epoch, 500 epochs = 1000
  // steps; the run converges to MAE under 1e-4 well before that and still
  // has to finish twice (here and in the determinism rerun) inside the
  // wall-clock budget
  const int epochs = 500;
  OverfitRun a = overfit_via_cli(h, data, "c4", epochs);
  const bool fit_ok = a.ok && a.mae <= 0.05 && a.max_f >= 0.90 && a.secs <= 600.0;
  h.verdict(4, fit_ok,
            "overfit 8 synthetic images (" + std::to_string(2 * epochs) +
                " optimizer steps, limit 2000): mean mae " + fmt("%.4f", a.mae) +
                " (need <= 0.05), mean max-F " + fmt("%.4f", a.max_f) + " (need >= 0.90), " +
                fmt("%.0f", a.secs) + "s (limit 600s)");

  OverfitRun b = overfit_via_cli(h, data, "c5", epochs);
  bool det = a.ok && b.ok;
  std::string parts;
  auto cmp = [&](const fs::path& pa, const fs::path& pb, const char* name) {
    if (!same_bytes(pa, pb)) {
      det = false;
      parts += std::string(" ") + name;
    }
  };
  if (det) {
    cmp(a.out_dir / "final.ckpt", b.out_dir / "final.ckpt", "final.ckpt");
    cmp(a.out_dir / "best.ckpt", b.out_dir / "best.ckpt", "best.ckpt");
    cmp(a.out_dir / "train_log.csv", b.out_dir / "train_log.csv", "train_log.csv");
    cmp(a.rep_dir / "aggregate.json", b.rep_dir / "aggregate.json", "aggregate.json");
    cmp(a.rep_dir / "per_image.csv", b.rep_dir / "per_image.csv", "per_image.csv");
    cmp(a.rep_dir / "curves.csv", b.rep_dir / "curves.csv", "curves.csv");
  }
  std::string what = "determinism: repeated same-seed training and evaluation byte-identical "
                     "(checkpoints, logs, metric reports)";
  if (!parts.empty()) what += "; differing:" + parts;
  h.verdict(5, det, what);
}

// ---------------------------------------------------------------- check 6 --

void report_budgets(Harness& h) {
  const ModelConfig full = ModelConfig::full();
  ModelConfig no_bpc = full;
  no_bpc.use_bpc = false;

  const double params_m = double(count_params(full)) / 1e6;
  const double flops_g = double(estimate_flops(full, 256)) / 1e9;
  const double bpc_m = double(count_params(full) - count_params(no_bpc)) / 1e6;

  auto band = [](double v, double ref, double tol) {
    const bool in = v >= ref * (1.0 - tol) && v <= ref * (1.0 + tol);
    return std::string(in ? "inside" : "OUTSIDE");
  };
  h.report(6, "parameters " + fmt("%.2f", params_m) + "M vs reference 26.99M +/-25% (" +
                  band(params_m, 26.99, 0.25) + "), forward cost " + fmt("%.1f", flops_g) +
                  "G FLOPs at 256x256 vs reference 86.35G +/-35% (" +
                  band(flops_g, 86.35, 0.35) + "), boundary-calibration increment +" +
                  fmt("%.2f", bpc_m) + "M vs reference +0.32M");
  h.report(6, "deviations expected: the reference network's internal channel widths are not "
              "fully published, so this implementation fixes one common working width (64) "
              "for calibration, decoding, and refinement; that choice trims parameters in "
              "wide stages and spends extra multiplies on full-resolution refinement");
}

// ---------------------------------------------------------------- check 7 --

void check_ablations(Harness& h) {
  const fs::path data = h.wd / "c7_data";
  synth_generate({.count = 64, .size = 32, .seed = 23, .out_dir = data.string()});

  struct Row {
    const char* name;
    bool bpc, dffc, afr, iou;
  };
  const Row rows[] = {
      {"baseline", false, false, false, true}, {"+boundary-calibration", true, false, false, true},
      {"+encoder-feedback", false, true, false, true}, {"+decoder-refinement", false, false, true, true},
      {"full, bce only", true, true, true, false}, {"full", true, true, true, true},
  };

  bool ok = true;
  double base_mae = -1.0, full_mae = -1.0;
  std::printf("  %-24s %8s %10s %10s %10s\n", "configuration", "params", "mae", "max-F", "S");
  for (const Row& row : rows) {
    TrainConfig tc;
    tc.model = ModelConfig::tiny();
    tc.model.input_size = 32;
    tc.model.use_bpc = row.bpc;
    tc.model.use_dffc = row.dffc;
    tc.model.use_afr = row.afr;
    tc.model.use_iou_loss = row.iou;
    tc.model.seed = 3;
    tc.lr = 1e-3;
    tc.batch_size = 8;
    tc.epochs = 4;
    tc.seed = 3;
    tc.augment = false;
    tc.image_dir = (data / "images").string();
    tc.mask_dir = (data / "masks").string();
    const std::string tag = std::string("c7_") + (row.bpc ? "b" : "") + (row.dffc ? "d" : "") +
                            (row.afr ? "a" : "") + (row.iou ? "i" : "");
    tc.out_dir = (h.wd / tag).string();
    try {
      TrainResult tr = train<float>(tc);
      infer_dir<float>(tr.final_ckpt, tc.image_dir, (h.wd / (tag + "_pred")).string());
      MetricsReport rep = evaluate_dirs((h.wd / (tag + "_pred")).string(), tc.mask_dir,
                                        (h.wd / (tag + "_rep")).string());
      std::printf("  %-24s %7zu %10.4f %10.4f %10.4f\n", row.name, count_params(tc.model),
                  rep.mean_mae, rep.mean_max_f, rep.mean_s);
      if (std::string(row.name) == "baseline") base_mae = rep.mean_mae;
      if (std::string(row.name) == "full") full_mae = rep.mean_mae;
    } catch (const std::exception& e) {
      ok = false;
      std::printf("  %-24s failed: %s\n", row.name, e.what());
    }
  }
  std::string what = "ablations: all six module/loss combinations trained and evaluated on a "
                     "64-image synthetic benchmark";
  h.verdict(7, ok, what);
  if (base_mae >= 0.0 && full_mae >= 0.0)
    std::printf("  expectation (not gated): full mae %.4f vs baseline %.4f -> %s\n", full_mae,
                base_mae,
                full_mae <= base_mae ? "met" : "not met (tiny data may not separate them)");
}

// ---------------------------------------------------------------- check 8 --

void check_cli_contract(Harness& h) {
  const fs::path data = h.wd / "c8_data";
  const fs::path run = h.wd / "c8_run";
  const fs::path pred = h.wd / "c8_pred";
  const fs::path rep = h.wd / "c8_rep";
  const fs::path self = h.wd / "c8_self";

  bool ok = true;
  std::string why;
  auto step = [&](int rc, const std::string& name) {
    if (rc != 0 && ok) {
      ok = false;
      why = name + " failed";
    }
  };

  step(h.run("synth --count 4 --size 32 --seed 31 --out '" + data.string() + "'", "c8_synth"),
       "synth");

  nlohmann::json cfg;
  cfg["model"] = {{"preset", "tiny"}, {"input_size", 32}, {"seed", 2}};
  cfg["lr"] = 1e-3;
  cfg["batch_size"] = 2;
  cfg["epochs"] = 2;
  cfg["seed"] = 2;
  cfg["image_dir"] = (data / "images").string();
  cfg["mask_dir"] = (data / "masks").string();
  cfg["out_dir"] = run.string();
  const fs::path cfg_path = h.wd / "c8_train.json";
  std::ofstream(cfg_path) << cfg.dump(2) << '\n';

  if (ok) step(h.run("train --config '" + cfg_path.string() + "'", "c8_train"), "train");
  if (ok)
    step(h.run("infer --ckpt '" + (run / "final.ckpt").string() + "' --input '" +
                   (data / "images").string() + "' --out '" + pred.string() + "'",
               "c8_infer"),
         "infer");
  if (ok)
    step(h.run("eval --pred '" + pred.string() + "' --gt '" + (data / "masks").string() +
                   "' --out '" + rep.string() + "'",
               "c8_eval"),
         "eval");

  size_t curve_rows = 0;
  if (ok) {
    const std::string curves = slurp(rep / "curves.csv");
    for (char ch : curves)
      if (ch == '\n') ++curve_rows;
    if (curve_rows != 257) {  // header + 256 thresholds
      ok = false;
      why = "curves.csv has " + std::to_string(curve_rows ? curve_rows - 1 : 0) +
            " data rows, want 256";
    }
  }

  double self_mae = -1.0, self_f = -1.0;
  if (ok) {
    step(h.run("eval --pred '" + (data / "masks").string() + "' --gt '" +
                   (data / "masks").string() + "' --out '" + self.string() + "'",
               "c8_self"),
         "self-eval");
    if (ok) {
      try {
        nlohmann::json agg = nlohmann::json::parse(slurp(self / "aggregate.json"));
        self_mae = agg.at("mean_mae").get<double>();
        self_f = agg.at("mean_max_f").get<double>();
        if (self_mae != 0.0 || self_f != 1.0) {
          ok = false;
          why = "ground truth scored against itself gave mae " + fmt("%.6f", self_mae) +
                ", max-F " + fmt("%.6f", self_f);
        }
      } catch (const std::exception& e) {
        ok = false;
        why = std::string("aggregate.json unreadable: ") + e.what();
      }
    }
  }

  std::string what = "command-line contract: synth -> train (single config file) -> infer -> "
                     "eval; curves.csv has 256 data rows; ground truth as its own prediction "
                     "scores mae=0, max-F=1";
  if (!ok) what += "; " + why;
  h.verdict(8, ok, what);
}

}  // namespace

int main(int argc, char** argv) {
  Harness h;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli")
      h.cli = argv[i + 1];
    else if (flag == "--workdir")
      h.wd = argv[i + 1];
  }
  if (h.cli.empty() || h.wd.empty()) {
    std::fprintf(stderr, "usage: acceptance --cli <bscgnet binary> --workdir <scratch dir>\n");
    return 1;
  }
  std::error_code ec;
  fs::remove_all(h.wd, ec);
  fs::create_directories(h.wd);

  check_gradients(h);
  check_metric_oracles(h);
  check_structural_invariants(h);
  check_overfit_and_determinism(h);
  report_budgets(h);
  check_ablations(h);
  check_cli_contract(h);

  if (h.failures) std::printf("%d check(s) failed\n", h.failures);
  return h.failures ? 1 : 0;
}
