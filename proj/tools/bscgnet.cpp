// Command line front end: dataset synthesis, training, inference, metric
// evaluation, cost summary, and the gradient self-check.

#include <cinttypes>
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "bscg/config_io.hpp"
#include "bscg/evalrun.hpp"
#include "bscg/gradcheck.hpp"

namespace {

int cmd_train(const std::string& config_path) {
  bscg::TrainConfig cfg = bscg::load_train_config(config_path);
  cfg.on_epoch = [](const bscg::EpochLog& r) {
    std::printf("epoch %4d  lr %.3g  loss %.6f  (bce %.6f, iou %.6f)\n", r.epoch, r.lr,
                r.loss, r.bce, r.iou);
    std::fflush(stdout);
  };
  bscg::TrainResult res = bscg::train<float>(cfg);
  std::printf("best epoch %d (loss %.6f)\n", res.best_epoch, res.best_loss);
  std::printf("final checkpoint: %s\n", res.final_ckpt.c_str());
  std::printf("best checkpoint:  %s\n", res.best_ckpt.c_str());
  std::printf("epoch log:        %s\n", res.log_csv.c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& input, const std::string& out) {
  const int n = bscg::infer_dir<float>(ckpt, input, out);
  std::printf("wrote %d saliency map%s to %s\n", n, n == 1 ? "" : "s", out.c_str());
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& out) {
  bscg::MetricsReport rep = bscg::evaluate_dirs(pred, gt, out);
  std::printf("images:     %zu\n", rep.count);
  std::printf("mean MAE:   %.6f\n", rep.mean_mae);
  std::printf("mean S:     %.6f\n", rep.mean_s);
  std::printf("mean max-F: %.6f\n", rep.mean_max_f);
  std::printf("reports written to %s (per_image.csv, aggregate.json, curves.csv)\n",
              out.c_str());
  return 0;
}

int cmd_synth(int count, int size, unsigned long long seed, const std::string& out) {
  bscg::SynthSpec spec;
  spec.count = count;
  spec.size = size;
  spec.seed = seed;
  spec.out_dir = out;
  bscg::synth_generate(spec);
  std::printf("wrote %d image/mask pairs under %s (images/, masks/)\n", count, out.c_str());
  return 0;
}

int cmd_summary(const std::string& config_path) {
  const bscg::ModelConfig mc = bscg::load_model_config(config_path);
  const bscg::CostReport rep = bscg::estimate_cost(mc, mc.input_size);
  std::printf("preset %s, cb %d, input %dx%d, modules: bpc=%s dffc=%s afr=%s\n",
              bscg::preset_name(mc).c_str(), mc.cb, mc.input_size, mc.input_size,
              mc.use_bpc ? "on" : "off", mc.use_dffc ? "on" : "off",
              mc.use_afr ? "on" : "off");
  std::printf("%-24s %-7s %-16s %14s %16s\n", "layer", "kind", "output", "params", "MACs");
  for (const bscg::LayerCost& lc : rep.layers)
    std::printf("%-24s %-7s %4dx%dx%-8d %14lld %16lld\n", lc.name.c_str(), lc.kind.c_str(),
                lc.out_c, lc.out_h, lc.out_w, lc.params, lc.macs);
  std::printf("\ntotal parameters: %lld (%.2fM)\n", rep.total_params,
              double(rep.total_params) / 1e6);
  std::printf("total MACs:       %lld (%.2fG)\n", rep.total_macs,
              double(rep.total_macs) / 1e9);
  std::printf("total FLOPs:      %lld (%.2fG, 2 per multiply-accumulate)\n", rep.flops(),
              double(rep.flops()) / 1e9);
  return 0;
}

int cmd_gradcheck(unsigned long long seed) {
  std::printf("finite-difference gradient check, seed %llu\n", seed);
  const bscg::GradReport rep = bscg::run_gradient_suite(seed);
  for (const bscg::FdFamilyResult& f : rep.families)
    std::printf("%-18s %2d instances %5lld probes  max rel err %.3e  %s\n",
                f.family.c_str(), f.instances, f.probes, f.max_rel_err,
                f.pass ? "ok" : "FAIL");
  std::printf("worst relative error %.3e: %s\n", rep.worst, rep.pass ? "PASS" : "FAIL");
  return rep.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"salient object detection: train, infer, evaluate"};
  app.require_subcommand(1);

  std::string config_path, ckpt, input_dir, out_dir, pred_dir, gt_dir;
  int count = 8, size = 64;
  unsigned long long seed = 1;

  CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "JSON config file")->required();

  CLI::App* infer = app.add_subcommand("infer", "run a checkpoint over a directory of PNGs");
  infer->add_option("--ckpt", ckpt, "checkpoint file")->required();
  infer->add_option("--input", input_dir, "directory of input PNGs")->required();
  infer->add_option("--out", out_dir, "output directory for saliency maps")->required();

  CLI::App* ev = app.add_subcommand("eval", "score predictions against ground truth");
  ev->add_option("--pred", pred_dir, "directory of predicted maps")->required();
  ev->add_option("--gt", gt_dir, "directory of ground-truth masks")->required();
  ev->add_option("--out", out_dir, "output directory for metric reports")->required();

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--count", count, "number of image/mask pairs");
  synth->add_option("--size", size, "square image size in pixels");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* summary = app.add_subcommand("summary", "print per-layer parameter and MAC counts");
  summary->add_option("--config", config_path, "JSON config file")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient self-check");
  gc->add_option("--seed", seed, "probe seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (infer->parsed()) return cmd_infer(ckpt, input_dir, out_dir);
    if (ev->parsed()) return cmd_eval(pred_dir, gt_dir, out_dir);
    if (synth->parsed()) return cmd_synth(count, size, seed, out_dir);
    if (summary->parsed()) return cmd_summary(config_path);
    if (gc->parsed()) return cmd_gradcheck(seed);
  } catch (const bscg::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const bscg::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const bscg::DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const bscg::ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
